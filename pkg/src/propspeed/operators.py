"""Sections, weighted norms, multiplication operators, commutators, and the
first order block systems.

Sections over a space with N points and fiber dimension m are flat complex
vectors of length N*m in component-major order (entry ``c*N + x``).  All
adjoints and operator norms are taken with respect to the mu-weighted L2
inner product; for uniform grid weights these coincide with the plain
matrix versions, but nothing here assumes uniformity.

The two full-space block systems live here:

* ``build_case1`` assembles the self-adjoint divergence/gradient system
  [[0, grad*], [grad, 0]] on a grid, with the divergence defined as the
  exact negative weighted adjoint of the forward-difference gradient.
* ``build_case2`` multiplies it by a pointwise elliptic coefficient B and
  certifies ellipticity; when B is Hermitian the product is self-adjoint
  in the B-inner product (B^{-1}u, v).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .space import GridSpec, LipFunction, MetricMeasureSpace, SupportSet, grid_space, lip_norm

__all__ = [
    "Section",
    "BlockInfo",
    "SystemOperator",
    "MultiplicationOperator",
    "BForm",
    "EllipticityReport",
    "flat_weights",
    "p_norm",
    "inner",
    "inner_B",
    "commutator",
    "operator_norm",
    "commutator_constant",
    "second_commutator_defect",
    "certification_family",
    "weighted_adjoint",
    "build_case1",
    "build_case2",
    "export_triplets",
]

_SPARSE_CUTOFF_SIZE = 256
_SPARSE_CUTOFF_DENSITY = 0.05


class BlockInfo(NamedTuple):
    """Named contiguous slice of the flat dof vector."""

    name: str
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


def fiber_blocks(space: MetricMeasureSpace, names: Sequence[str]) -> tuple[BlockInfo, ...]:
    """Component-major block layout: one named block per fiber component."""
    n = space.n_points
    return tuple(BlockInfo(name, c * n, (c + 1) * n) for c, name in enumerate(names))


@dataclass(frozen=True)
class Section:
    """Complex-valued section of the trivial bundle over a space."""

    space: MetricMeasureSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.space.n_dof,):
            raise ValueError(
                f"section length {vals.shape} does not match N*m = {self.space.n_dof}"
            )
        object.__setattr__(self, "values", vals)

    def fiber_matrix(self) -> np.ndarray:
        """Shape (m, N): row c holds component c at all points."""
        return self.values.reshape(self.space.fiber_dim, self.space.n_points)

    def fiber_magnitudes(self) -> np.ndarray:
        """Pointwise Hermitian fiber norms |u(x)|, shape (N,)."""
        fm = self.fiber_matrix()
        return np.sqrt((np.abs(fm) ** 2).sum(axis=0))

    @classmethod
    def zero(cls, space: MetricMeasureSpace) -> "Section":
        return cls(space, np.zeros(space.n_dof, dtype=complex))

    @classmethod
    def spike(cls, space: MetricMeasureSpace, point: int, component: int = 0) -> "Section":
        vals = np.zeros(space.n_dof, dtype=complex)
        vals[component * space.n_points + point] = 1.0
        return cls(space, vals)


def flat_weights(space: MetricMeasureSpace) -> np.ndarray:
    """Per-dof weights: the point weight repeated across fiber components."""
    return np.tile(space.weight, space.fiber_dim)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, Section) else np.asarray(u, dtype=complex)


def p_norm(u: Section, p) -> float:
    """L^p norm with Hermitian fiber norms: (sum_x mu_x |u(x)|^p)^{1/p}."""
    mags = u.fiber_magnitudes()
    w = u.space.weight
    if p == 2:
        return float(np.sqrt((w * mags**2).sum()))
    if p == 1:
        return float((w * mags).sum())
    if p in (np.inf, "inf", float("inf")):
        return float(mags.max(initial=0.0))
    raise ValueError("p must be 1, 2 or inf")


def inner(u: Section, v: Section) -> complex:
    """Weighted inner product, conjugate-linear in the second argument."""
    if u.space.n_dof != v.space.n_dof:
        raise ValueError("sections live on different spaces")
    w = flat_weights(u.space)
    return complex(np.sum(w * u.values * np.conj(v.values)))


def inner_B(u: Section, v: Section, B: "MultiplicationOperator") -> complex:
    """Equivalent inner product (B^{-1}u, v) for pointwise invertible B."""
    return inner(Section(u.space, B.solve(u.values)), v)


@dataclass(frozen=True)
class MultiplicationOperator:
    """Pointwise fiber matrix A(x), acting diagonally in the point index."""

    space: MetricMeasureSpace
    point_blocks: np.ndarray  # (N, m, m) complex

    def __post_init__(self) -> None:
        blocks = np.asarray(self.point_blocks, dtype=complex)
        m = self.space.fiber_dim
        if blocks.shape != (self.space.n_points, m, m):
            raise ValueError(f"point blocks must have shape (N, {m}, {m})")
        object.__setattr__(self, "point_blocks", blocks)

    @classmethod
    def constant(cls, space: MetricMeasureSpace, mat) -> "MultiplicationOperator":
        mat = np.atleast_2d(np.asarray(mat, dtype=complex))
        return cls(space, np.broadcast_to(mat, (space.n_points, *mat.shape)).copy())

    @classmethod
    def scalar_field(cls, space: MetricMeasureSpace, values) -> "MultiplicationOperator":
        values = np.asarray(values, dtype=complex)
        m = space.fiber_dim
        eye = np.eye(m, dtype=complex)
        return cls(space, values[:, None, None] * eye[None, :, :])

    @classmethod
    def from_eta(cls, space: MetricMeasureSpace, eta: LipFunction) -> "MultiplicationOperator":
        return cls.scalar_field(space, eta.values.astype(complex))

    def apply(self, vals: np.ndarray) -> np.ndarray:
        resh = _values(vals).reshape(self.space.fiber_dim, self.space.n_points)
        out = np.einsum("xcd,dx->cx", self.point_blocks, resh)
        return out.reshape(-1)

    def matrix(self) -> np.ndarray:
        n, m = self.space.n_points, self.space.fiber_dim
        out = np.zeros((n * m, n * m), dtype=complex)
        x = np.arange(n)
        for c in range(m):
            for d in range(m):
                out[c * n + x, d * n + x] = self.point_blocks[:, c, d]
        return out

    def solve(self, vals: np.ndarray) -> np.ndarray:
        """Apply A(x)^{-1} pointwise; raises naming the first singular point."""
        blocks = self.point_blocks
        svals = np.linalg.svd(blocks, compute_uv=False)
        scale = svals[:, 0]
        bad = np.flatnonzero(svals[:, -1] <= 1e-14 * np.maximum(scale, 1e-300))
        if bad.size:
            raise ValueError(f"coefficient matrix is singular at point {bad[0]}")
        resh = _values(vals).reshape(self.space.fiber_dim, self.space.n_points)
        out = np.linalg.solve(blocks, resh.T[:, :, None])[:, :, 0].T
        return out.reshape(-1)

    def sup_norm(self) -> float:
        """ess-sup of the pointwise spectral norms, i.e. ||A||_infty."""
        return float(np.linalg.svd(self.point_blocks, compute_uv=False)[:, 0].max())

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = np.abs(self.point_blocks - np.conj(np.swapaxes(self.point_blocks, 1, 2)))
        scale = max(1e-300, float(np.abs(self.point_blocks).max()))
        return bool(diff.max() <= tol * scale)

    def herm_min_eig(self) -> tuple[float, int]:
        """Smallest eigenvalue of the pointwise Hermitian parts and its point."""
        herm = 0.5 * (self.point_blocks + np.conj(np.swapaxes(self.point_blocks, 1, 2)))
        eigs = np.linalg.eigvalsh(herm)[:, 0]
        x = int(np.argmin(eigs))
        return float(eigs[x]), x

    def herm_sqrt_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """(A^{1/2}, A^{-1/2}) as dense matrices, for Hermitian positive A."""
        herm = 0.5 * (self.point_blocks + np.conj(np.swapaxes(self.point_blocks, 1, 2)))
        evals, evecs = np.linalg.eigh(herm)
        if evals.min() <= 0:
            raise ValueError("coefficient is not positive definite")
        root = np.einsum("xcd,xd,xed->xce", evecs, np.sqrt(evals), np.conj(evecs))
        inv_root = np.einsum("xcd,xd,xed->xce", evecs, 1.0 / np.sqrt(evals), np.conj(evecs))
        return (
            MultiplicationOperator(self.space, root).matrix(),
            MultiplicationOperator(self.space, inv_root).matrix(),
        )


class BForm:
    """Hermitian positive operator B defining the inner product (B^{-1}u, v).

    Wraps an assembled matrix; caches the Hermitian square roots needed to
    symmetrize B-self-adjoint operators and to evaluate B-norms.
    """

    def __init__(self, space: MetricMeasureSpace, matrix: np.ndarray, origin=None):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (space.n_dof, space.n_dof):
            raise ValueError("B matrix does not match the space")
        herm_defect = np.abs(matrix - matrix.conj().T).max()
        if herm_defect > 1e-10 * max(1e-300, np.abs(matrix).max()):
            raise ValueError("B must be Hermitian to define an inner product")
        self.space = space
        self.matrix = 0.5 * (matrix + matrix.conj().T)
        self.origin = origin
        evals, evecs = np.linalg.eigh(self.matrix)
        if evals.min() <= 0:
            raise ValueError("B must be positive definite to define an inner product")
        self.eigenvalues = evals
        self._sqrt = (evecs * np.sqrt(evals)) @ evecs.conj().T
        self._inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.conj().T

    @classmethod
    def from_multiplication(cls, mult: MultiplicationOperator) -> "BForm":
        return cls(mult.space, mult.matrix(), origin=mult)

    @property
    def sqrt_matrix(self) -> np.ndarray:
        return self._sqrt

    @property
    def inv_sqrt_matrix(self) -> np.ndarray:
        return self._inv_sqrt

    def norm(self, vals: np.ndarray) -> float:
        """||u||_B = ||B^{-1/2} u|| in the weighted L2 norm."""
        w = flat_weights(self.space)
        y = self._inv_sqrt @ _values(vals)
        return float(np.sqrt(np.real(np.sum(w * np.abs(y) ** 2))))

    def symmetrizer_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """(R, R^{-1}) with R = W^{1/2} B^{-1/2}; R T R^{-1} is Hermitian for
        operators self-adjoint in the B-inner product (weights commute with
        pointwise coefficients, and are uniform on grids)."""
        rw = np.sqrt(flat_weights(self.space))
        return rw[:, None] * self._inv_sqrt, self._sqrt / rw[None, :]


@dataclass(frozen=True)
class EllipticityReport:
    """Certified pointwise lower bound on the Hermitian part of a coefficient."""

    lambda_: float
    witness_point: int
    witness_vector: np.ndarray | None = None


@dataclass(frozen=True)
class SystemOperator:
    """Linear operator on sections, with self-adjointness metadata.

    ``selfadjoint_standard`` certifies self-adjointness in the weighted L2
    inner product; ``b_form`` (when set) certifies self-adjointness in the
    equivalent (B^{-1}u, v) inner product.  ``blocks`` names contiguous
    slices of the dof vector (fiber components, or staggered blocks).
    """

    space: MetricMeasureSpace
    matrix: np.ndarray
    selfadjoint_standard: bool = False
    b_form: BForm | None = None
    blocks: tuple[BlockInfo, ...] = ()

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.space.n_dof, self.space.n_dof):
            raise ValueError("matrix does not match the space dof count")
        if not np.all(np.isfinite(mat.view(float))):
            raise ValueError("matrix has non-finite entries")
        object.__setattr__(self, "matrix", mat)
        if self.selfadjoint_standard:
            defect = np.abs(mat - weighted_adjoint(mat, self.space)).max()
            scale = max(np.abs(mat).max(), 1e-300)
            if defect > 1e-10 * scale:
                raise ValueError("selfadjoint_standard flag violated by the matrix")

    def block(self, name: str) -> BlockInfo:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"no block named {name!r}")

    def apply(self, u: Section) -> Section:
        return Section(self.space, self.matrix @ u.values)


def weighted_adjoint(matrix: np.ndarray, space: MetricMeasureSpace) -> np.ndarray:
    """Adjoint with respect to the weighted inner product: W^{-1} M^H W."""
    w = flat_weights(space)
    return matrix.conj().T * (w[None, :] / w[:, None])


def commutator(eta: LipFunction, T: SystemOperator) -> SystemOperator:
    """[eta I, T] = (eta I) T - T (eta I), as a plain operator."""
    m = eta.multiplier(T.space)
    mat = m[:, None] * T.matrix - T.matrix * m[None, :]
    return SystemOperator(T.space, mat, blocks=T.blocks)


def _weight_conjugate(matrix: np.ndarray, space: MetricMeasureSpace) -> np.ndarray:
    w = np.sqrt(flat_weights(space))
    return (w[:, None] * matrix) / w[None, :]


def _largest_singular_value(mat) -> float:
    """Top singular value; ARPACK for large sparse input, LAPACK otherwise."""
    if sp.issparse(mat):
        size = mat.shape[0]
        if size > _SPARSE_CUTOFF_SIZE and mat.nnz < _SPARSE_CUTOFF_DENSITY * size * size:
            if mat.nnz == 0:
                return 0.0
            try:
                return float(
                    spla.svds(mat.tocsr(), k=1, return_singular_vectors=False, maxiter=5000)[0]
                )
            except (spla.ArpackNoConvergence, spla.ArpackError):
                pass
        mat = mat.toarray()
    if mat.size == 0:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def operator_norm(T, p=2, space: MetricMeasureSpace | None = None, gram: BForm | None = None) -> float:
    """Operator norm on the weighted L^p space.

    p = 2 is exact: the largest singular value of W^{1/2} T W^{-1/2}
    (composed with the B-form symmetrizer when ``gram`` is given, yielding
    the norm in the equivalent B-inner product).  p = 1 and p = inf return
    the standard weighted column/row sum bounds, exact for scalar fibers.
    """
    if isinstance(T, SystemOperator):
        space = T.space
        mat = T.matrix
    else:
        if space is None:
            raise ValueError("space required when passing a bare matrix")
        mat = T
    if sp.issparse(mat):
        if not np.all(np.isfinite(mat.data)):
            raise ValueError("operator has non-finite entries")
    elif not np.all(np.isfinite(np.asarray(mat).view(float))):
        raise ValueError("operator has non-finite entries")
    if p == 2:
        if gram is not None:
            r, rinv = gram.symmetrizer_pair()
            dense = mat.toarray() if sp.issparse(mat) else mat
            return _largest_singular_value(r @ dense @ rinv)
        if sp.issparse(mat):
            w = np.sqrt(flat_weights(space))
            conj = sp.diags(w) @ mat @ sp.diags(1.0 / w)
            return _largest_singular_value(conj)
        return _largest_singular_value(_weight_conjugate(mat, space))
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    w = flat_weights(space)
    if p == 1:
        col = (w[:, None] * np.abs(dense)).sum(axis=0) / w
        return float(col.max(initial=0.0))
    if p in (np.inf, "inf", float("inf")):
        return float(np.abs(dense).sum(axis=1).max(initial=0.0))
    raise ValueError("p must be 1, 2 or inf")


def _sparse_of(T: SystemOperator) -> sp.csr_matrix:
    mat = sp.csr_matrix(T.matrix)
    mat.eliminate_zeros()
    return mat


def commutator_constant(
    D: SystemOperator,
    family: Iterable[LipFunction],
    gram: BForm | None = None,
    return_details: bool = False,
):
    """Certified empirical commutator constant over a family of cutoffs.

    kappa_emp = max over the family of ||[eta I, D]|| / ||eta||_Lip, a
    lower bound for the best constant kappa in the uniform commutator
    bound.  Every member must be nonconstant (positive Lipschitz norm).
    """
    family = list(family)
    if not family:
        raise ValueError("empty certification family")
    sparse_d = _sparse_of(D)
    kappa = 0.0
    details = []
    for eta in family:
        lip = eta.lip_norm_cached
        if not np.isfinite(lip) or lip <= 0:
            raise ValueError("certification family must consist of nonconstant Lipschitz functions")
        m = eta.multiplier(D.space)
        comm = sp.diags(m) @ sparse_d - sparse_d @ sp.diags(m)
        norm = operator_norm(comm, 2, D.space, gram=gram)
        ratio = norm / lip
        kappa = max(kappa, ratio)
        if return_details:
            details.append((ratio, norm, lip))
    if return_details:
        return kappa, details
    return kappa


def second_commutator_defect(eta: LipFunction, D: SystemOperator, gram: BForm | None = None) -> float:
    """||[eta I, [eta I, D]]||, zero exactly when the double commutator vanishes.

    For grid difference operators this is O(h) * ||eta||_Lip^2 rather than
    zero; the defect is reported as measured, never hidden.
    """
    m = eta.multiplier(D.space)
    sparse_d = _sparse_of(D)
    dm = sp.diags(m)
    comm = dm @ sparse_d - sparse_d @ dm
    comm2 = dm @ comm - comm @ dm
    return operator_norm(comm2, 2, D.space, gram=gram)


def _unique_location_groups(space: MetricMeasureSpace) -> list[np.ndarray]:
    """Indices grouped by geometric location (zero pseudometric distance)."""
    n = space.n_points
    groups: list[np.ndarray] = []
    assigned = np.zeros(n, dtype=bool)
    for i in range(n):
        if assigned[i]:
            continue
        co = np.flatnonzero((space.dist[i] == 0.0) & ~assigned)
        assigned[co] = True
        groups.append(co)
    return groups


def certification_family(
    space: MetricMeasureSpace,
    K: SupportSet | None = None,
    rng: np.random.Generator | None = None,
    n_random: int = 32,
    alphas: Sequence[float] | None = None,
    singletons: str | int = "all",
) -> list[LipFunction]:
    """Cutoff family used to certify the commutator constant.

    Cutoffs eta_{K,alpha} over every singleton location (or a subsample)
    and the scenario's own K, with alpha on the dyadic ladder 2^-6..2^6,
    plus smoothed random Lipschitz functions normalized to unit Lipschitz
    norm.  Co-located dofs (pseudometric distance zero) are treated as one
    location so that every member is a genuine function of position.
    """
    if alphas is None:
        alphas = [2.0**k for k in range(-6, 7)]
    rng = rng or np.random.default_rng(0)
    groups = _unique_location_groups(space)
    if singletons == "all":
        chosen = groups
    else:
        take = min(int(singletons), len(groups))
        idx = rng.choice(len(groups), size=take, replace=False)
        chosen = [groups[i] for i in idx]
    sets = [SupportSet.of(g.tolist()) for g in chosen]
    if K is not None and len(K) > 0:
        sets.append(K)
    out: list[LipFunction] = []
    for K_i in sets:
        for a in alphas:
            eta = cutoff_family_member(space, K_i, a)
            if eta is not None:
                out.append(eta)
    # smoothed random Lipschitz functions, one value per geometric location
    if n_random > 0 and space.n_points >= 2:
        d = space.dist
        pos = d[d > 0]
        if pos.size:
            r_neigh = 1.5 * float(pos.min())
            adj = d <= r_neigh
            counts = adj.sum(axis=1).astype(float)
            for _ in range(n_random):
                raw = rng.standard_normal(space.n_points)
                for g in groups:
                    raw[g] = raw[g[0]]
                smooth = (adj @ raw) / counts
                lip = lip_norm(space, smooth)
                if np.isfinite(lip) and lip > 1e-12:
                    out.append(LipFunction(smooth / lip, 1.0))
    return out


def cutoff_family_member(space: MetricMeasureSpace, K: SupportSet, alpha: float) -> LipFunction | None:
    """Cutoff eta_{K,alpha}, or None when it degenerates to a constant."""
    vals = np.maximum(1.0 - alpha * space.dist_to_set(K.members), 0.0)
    lip = lip_norm(space, vals)
    if not np.isfinite(lip) or lip <= 0:
        return None
    return LipFunction(vals, lip)


# ---------------------------------------------------------------------------
# grid difference operators and the block systems
# ---------------------------------------------------------------------------


def forward_difference(spec: GridSpec, axis: int) -> np.ndarray:
    """Forward difference along one axis on the kept nodes, shape (N, N).

    Row x holds (u(x + h e_axis) - u(x)) / h when the neighbor exists and
    is kept; rows without a neighbor are zero (one-sided closure).
    """
    shape = spec.shape
    kept = spec.kept_flat_indices()
    n = kept.size
    col_of = -np.ones(int(np.prod(shape)), dtype=int)
    col_of[kept] = np.arange(n)
    G = np.zeros((n, n))
    stride = shape[1] if spec.dims == 2 else 1
    axis_len = shape[axis]
    for row, flat in enumerate(kept):
        if spec.dims == 1:
            pos = flat
        else:
            pos = flat // stride if axis == 0 else flat % stride
        if pos + 1 >= axis_len:
            continue
        nb = flat + (stride if axis == 0 else 1) if spec.dims == 2 else flat + 1
        cnb = col_of[nb]
        if cnb >= 0:
            G[row, row] = -1.0 / spec.h
            G[row, cnb] = 1.0 / spec.h
    return G


def build_case1(spec: GridSpec, axes: Sequence[int] | None = None) -> SystemOperator:
    """Self-adjoint block system [[0, grad*], [grad, 0]] on a grid.

    The gradient is the forward difference along the requested axes
    (default: all of them) and the divergence is its exact negative
    weighted adjoint, so the operator is self-adjoint by construction.
    The fiber carries one scalar component plus one per gradient axis.
    """
    if axes is None:
        axes = list(range(spec.dims))
    axes = list(axes)
    if any(a < 0 or a >= spec.dims for a in axes):
        raise ValueError("axis out of range for this grid")
    base = grid_space(spec)
    m = 1 + len(axes)
    space = base.with_fiber_dim(m)
    n = space.n_points
    grads = [forward_difference(spec, a) for a in axes]
    mat = np.zeros((n * m, n * m), dtype=complex)
    for k, G in enumerate(grads):
        lo, hi = (1 + k) * n, (2 + k) * n
        mat[0:n, lo:hi] = weighted_adjoint(G.astype(complex), base)
        mat[lo:hi, 0:n] = G
    names = ["f"] + [f"u{a + 1}" for a in axes]
    return SystemOperator(
        space, mat, selfadjoint_standard=True, blocks=fiber_blocks(space, names)
    )


def build_case2(
    D: SystemOperator, B: MultiplicationOperator
) -> tuple[SystemOperator, EllipticityReport]:
    """Perturbed system BD for a pointwise accretive coefficient B.

    Requires the Hermitian part of B(x) to be positive definite at every
    point; the report certifies the uniform lower bound.  When D is
    self-adjoint and B Hermitian, BD is flagged self-adjoint with respect
    to the stored B-inner product.
    """
    if B.space.n_dof != D.space.n_dof:
        raise ValueError("coefficient does not match the operator's space")
    lam, witness = B.herm_min_eig()
    if lam <= 0:
        raise ValueError(
            f"ellipticity violated at point {witness}: Hermitian part has eigenvalue {lam:g}"
        )
    herm = 0.5 * (B.point_blocks[witness] + B.point_blocks[witness].conj().T)
    evals, evecs = np.linalg.eigh(herm)
    report = EllipticityReport(lam, witness, evecs[:, 0])
    bd = B.matrix() @ D.matrix
    b_form = None
    if D.selfadjoint_standard and B.is_hermitian():
        b_form = BForm.from_multiplication(B)
    return (
        SystemOperator(D.space, bd, b_form=b_form, blocks=D.blocks),
        report,
    )


def export_triplets(T: SystemOperator, path) -> None:
    """Write the operator as 'row col re im' text lines (nonzeros only)."""
    mat = sp.coo_matrix(T.matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(mat.row, mat.col, mat.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def import_triplets(path, space: MetricMeasureSpace, **flags) -> SystemOperator:
    """Read an operator written by :func:`export_triplets`."""
    mat = np.zeros((space.n_dof, space.n_dof), dtype=complex)
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            r, c = int(parts[0]), int(parts[1])
            mat[r, c] = float(parts[2]) + 1j * float(parts[3])
    return SystemOperator(space, mat, **flags)
