"""Inhomogeneous first order system on a domain with boundary conditions.

The scalar unknowns live on grid nodes and the vector unknowns on grid
edges (midpoint degrees of freedom), which keeps the divergence equal to
the exact negative weighted adjoint of the gradient for both boundary
conditions:

* Dirichlet: scalar degrees of freedom are the interior nodes; gradients
  reach the boundary through ghost zeros, so the gradient matrix has more
  rows than columns.
* Neumann: scalar degrees of freedom are all nodes; the gradient is the
  forward difference matrix with its boundary row dropped, and the vanishing
  normal trace is encoded in the adjoint divergence.

The full system couples two scalar blocks and the edge blocks,

    D = [[0, I, -div_V], [I, 0, 0], [grad_V, 0, 0]],

a self-adjoint square matrix on the union of the block degrees of freedom.
The coefficient

    B = blockdiag(a; [[A_00, (A_0k)], [(A_j0), (A_jk)]])

is pointwise in each scalar block and on edge diagonals, while the
couplings between node and edge blocks use two-point endpoint averaging
transfers (adjoint pairs, so Hermitian coefficient data assemble to a
Hermitian matrix).  The averaging is the price of the staggered layout;
it perturbs the pure multiplication structure at order h, which shows up
in the measured double-commutator defect and nowhere else.

Splitting off the non-Hermitian lower order part gives B = B_tilde + (C
composed with the system), with B_tilde Hermitian and pointwise bounded
below by half the ellipticity constant after an additive shift found by a
doubling search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .operators import BForm, BlockInfo, EllipticityReport, SystemOperator
from .space import GridSpec, MetricMeasureSpace

__all__ = [
    "Case3System",
    "StaggeredCoefficient",
    "assemble_case3",
    "build_case3",
    "split_case3",
]


def _node_table(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(kept flat indices, coords of kept nodes) for the full node grid."""
    kept = spec.kept_flat_indices()
    coords = spec.node_coords()
    return kept, coords


def _interior_mask(spec: GridSpec, kept: np.ndarray) -> np.ndarray:
    """Kept nodes all of whose orthogonal neighbors exist and are kept."""
    shape = spec.shape
    total = int(np.prod(shape))
    is_kept = np.zeros(total, dtype=bool)
    is_kept[kept] = True
    stride = shape[1] if spec.dims == 2 else 1
    out = np.zeros(kept.size, dtype=bool)
    for row, flat in enumerate(kept):
        if spec.dims == 1:
            i = flat
            ok = 0 < i < shape[0] - 1 and is_kept[flat - 1] and is_kept[flat + 1]
        else:
            i, j = divmod(flat, stride)
            ok = (
                0 < i < shape[0] - 1
                and 0 < j < shape[1] - 1
                and is_kept[flat - stride]
                and is_kept[flat + stride]
                and is_kept[flat - 1]
                and is_kept[flat + 1]
            )
        out[row] = ok
    return out


def _edges_along(spec: GridSpec, kept: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """(tails, heads) as positions into the kept-node list, along one axis."""
    shape = spec.shape
    total = int(np.prod(shape))
    pos_of = -np.ones(total, dtype=int)
    pos_of[kept] = np.arange(kept.size)
    stride = shape[1] if spec.dims == 2 else 1
    step = stride if axis == 0 else 1
    tails, heads = [], []
    for row, flat in enumerate(kept):
        if spec.dims == 1:
            coord = flat
        else:
            coord = flat // stride if axis == 0 else flat % stride
        if coord + 1 >= shape[axis]:
            continue
        nb = pos_of[flat + step]
        if nb >= 0:
            tails.append(row)
            heads.append(nb)
    return np.asarray(tails, dtype=int), np.asarray(heads, dtype=int)


class _FieldSampler:
    """Evaluates a coefficient given as constant, callable, or node array."""

    def __init__(self, what, node_coords: np.ndarray, shape: tuple[int, ...]):
        self.node_coords = node_coords
        self.shape = shape
        if callable(what):
            self.kind = "callable"
            self.fn = what
        else:
            arr = np.asarray(what, dtype=complex)
            if arr.shape == shape or arr.shape == ():
                self.kind = "constant"
                self.const = np.broadcast_to(arr, shape).copy() if shape else arr
            elif arr.shape == (node_coords.shape[0], *shape):
                self.kind = "array"
                self.table = arr
            else:
                raise ValueError(
                    f"coefficient has shape {arr.shape}; expected {shape}, or per-node "
                    f"({node_coords.shape[0]}, *{shape}), or a callable"
                )

    def at_nodes(self, rows: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.broadcast_to(self.const, (rows.size, *self.shape)).copy()
        if self.kind == "array":
            return self.table[rows]
        vals = np.asarray(self.fn(self.node_coords[rows]), dtype=complex)
        return vals.reshape(rows.size, *self.shape)

    def at_midpoints(self, tails: np.ndarray, heads: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.broadcast_to(self.const, (tails.size, *self.shape)).copy()
        if self.kind == "array":
            return 0.5 * (self.table[tails] + self.table[heads])
        mids = 0.5 * (self.node_coords[tails] + self.node_coords[heads])
        vals = np.asarray(self.fn(mids), dtype=complex)
        return vals.reshape(tails.size, *self.shape)


@dataclass
class StaggeredCoefficient:
    """Coefficient of the inhomogeneous system on the staggered block layout.

    Pointwise data: ``a`` on scalar nodes, the full (1+d) x (1+d) matrix
    ``A`` sampled at scalar nodes, and the diagonal entries A_jj sampled at
    edge midpoints.  ``transfers[j]`` is the node-to-edge endpoint
    averaging used by the off-diagonal couplings.
    """

    space: MetricMeasureSpace
    blocks: tuple[BlockInfo, ...]
    a_nodes: np.ndarray            # (S,)
    A_nodes: np.ndarray            # (S, 1+d, 1+d)
    A_edge_diag: list              # per axis: (E_a,) values of A_jj at midpoints
    transfers: list                # per axis: (E_a, S) averaging matrices

    @property
    def dims(self) -> int:
        return len(self.transfers)

    def matrix(self) -> np.ndarray:
        n = self.space.n_dof
        out = np.zeros((n, n), dtype=complex)
        f, g = self.blocks[0], self.blocks[1]
        s = np.arange(f.size)
        out[f.start + s, f.start + s] = self.a_nodes
        out[g.start + s, g.start + s] = self.A_nodes[:, 0, 0]
        for j in range(self.dims):
            uj = self.blocks[2 + j]
            tj = self.transfers[j]
            e = np.arange(uj.size)
            # node <-> edge couplings through endpoint averaging
            out[g.start : g.stop, uj.start : uj.stop] = (
                self.A_nodes[:, 0, 1 + j][:, None] * tj.T
            )
            out[uj.start : uj.stop, g.start : g.stop] = tj * self.A_nodes[:, 1 + j, 0][None, :]
            out[uj.start + e, uj.start + e] = self.A_edge_diag[j]
            for k in range(self.dims):
                if k == j:
                    continue
                uk = self.blocks[2 + k]
                mid = tj * self.A_nodes[:, 1 + j, 1 + k][None, :]
                out[uj.start : uj.stop, uk.start : uk.stop] = mid @ self.transfers[k].T
        return out

    def sup_norm(self) -> float:
        """Coefficient sup norm: largest pointwise matrix norm over samples."""
        d = self.dims
        block = np.zeros((self.a_nodes.size, 2 + d, 2 + d), dtype=complex)
        block[:, 0, 0] = self.a_nodes
        block[:, 1:, 1:] = self.A_nodes
        best = float(np.linalg.svd(block, compute_uv=False)[:, 0].max())
        for vals in self.A_edge_diag:
            if vals.size:
                best = max(best, float(np.abs(vals).max()))
        return best

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        herm = np.abs(self.A_nodes - np.conj(np.swapaxes(self.A_nodes, 1, 2))).max()
        scale = max(1e-300, float(np.abs(self.A_nodes).max()), float(np.abs(self.a_nodes).max()))
        real_a = np.abs(self.a_nodes.imag).max() if self.a_nodes.size else 0.0
        diag_ok = all(np.abs(v.imag).max(initial=0.0) <= tol * scale for v in self.A_edge_diag)
        return bool(herm <= tol * scale and real_a <= tol * scale and diag_ok)

    def pointwise_herm_min(self) -> tuple[float, int]:
        """Min eigenvalue of the Hermitian part of blockdiag(a, A) over nodes."""
        d = self.dims
        block = np.zeros((self.a_nodes.size, 2 + d, 2 + d), dtype=complex)
        block[:, 0, 0] = self.a_nodes
        block[:, 1:, 1:] = self.A_nodes
        herm = 0.5 * (block + np.conj(np.swapaxes(block, 1, 2)))
        eigs = np.linalg.eigvalsh(herm)[:, 0]
        x = int(np.argmin(eigs))
        return float(eigs[x]), x


@dataclass
class Case3System:
    """Assembled inhomogeneous system and the spaces it lives on."""

    spec: GridSpec
    space: MetricMeasureSpace          # union of block dofs, fiber_dim 1
    scalar_space: MetricMeasureSpace   # the scalar-block nodes, fiber_dim 1
    blocks: tuple[BlockInfo, ...]
    D: SystemOperator
    B: StaggeredCoefficient
    report: EllipticityReport
    grad: np.ndarray                   # (E_total, S)
    scalar_rows: np.ndarray            # positions of scalar dofs in the kept-node list

    @property
    def boundary_condition(self) -> str:
        return self.spec.boundary_condition


def assemble_case3(spec: GridSpec, a, A) -> Case3System:
    """Build the staggered system for coefficient fields a and A.

    ``a`` and ``A`` may be constants, vectorized callables of coordinates,
    or arrays over the kept nodes of the grid; ``A`` has fiber shape
    (1+dims) x (1+dims) whose lower-right dims x dims block must be
    pointwise Hermitian with eigenvalues bounded below by a positive
    constant, and a must be real with the same kind of lower bound.
    """
    kept, node_coords = _node_table(spec)
    d = spec.dims
    if spec.boundary_condition == "dirichlet":
        scalar_rows = np.flatnonzero(_interior_mask(spec, kept))
    else:
        scalar_rows = np.arange(kept.size)
    if scalar_rows.size == 0:
        raise ValueError("no scalar degrees of freedom remain; grid too small for Dirichlet")
    col_of = -np.ones(kept.size, dtype=int)
    col_of[scalar_rows] = np.arange(scalar_rows.size)
    S = scalar_rows.size

    grads, transfers, edge_tails, edge_heads = [], [], [], []
    for axis in range(d):
        tails, heads = _edges_along(spec, kept, axis)
        if spec.boundary_condition == "dirichlet":
            touch = (col_of[tails] >= 0) | (col_of[heads] >= 0)
            tails, heads = tails[touch], heads[touch]
        ne = tails.size
        G = np.zeros((ne, S))
        T = np.zeros((ne, S))
        for e in range(ne):
            ct, ch = col_of[tails[e]], col_of[heads[e]]
            if ch >= 0:
                G[e, ch] += 1.0 / spec.h
                T[e, ch] += 0.5
            if ct >= 0:
                G[e, ct] -= 1.0 / spec.h
                T[e, ct] += 0.5
        grads.append(G)
        transfers.append(T)
        edge_tails.append(tails)
        edge_heads.append(heads)

    # union dof space: f and g on scalar nodes, u_j on edge midpoints
    pieces = [node_coords[scalar_rows], node_coords[scalar_rows]]
    names = ["f", "g"]
    for axis in range(d):
        pieces.append(0.5 * (node_coords[edge_tails[axis]] + node_coords[edge_heads[axis]]))
        names.append(f"u{axis + 1}")
    coords = np.vstack(pieces)
    weights = np.full(coords.shape[0], spec.h**d)
    space = MetricMeasureSpace(cdist(coords, coords), weights, 1, coords)
    blocks = []
    start = 0
    for name, piece in zip(names, pieces):
        blocks.append(BlockInfo(name, start, start + piece.shape[0]))
        start += piece.shape[0]
    blocks = tuple(blocks)

    grad = np.vstack(grads) if grads else np.zeros((0, S))
    n = space.n_dof
    mat = np.zeros((n, n), dtype=complex)
    f, g = blocks[0], blocks[1]
    eye = np.eye(S)
    mat[f.start : f.stop, g.start : g.stop] = eye
    mat[g.start : g.stop, f.start : f.stop] = eye
    row = 2 * S
    for axis in range(d):
        ne = grads[axis].shape[0]
        mat[row : row + ne, f.start : f.stop] = grads[axis]
        # uniform weights, so the weighted adjoint is the conjugate transpose
        mat[f.start : f.stop, row : row + ne] = grads[axis].conj().T
        row += ne
    D = SystemOperator(space, mat, selfadjoint_standard=True, blocks=blocks)

    a_s = _FieldSampler(a, node_coords, ())
    A_s = _FieldSampler(A, node_coords, (1 + d, 1 + d))
    a_nodes = a_s.at_nodes(scalar_rows)
    if np.abs(a_nodes.imag).max(initial=0.0) > 1e-12 * max(1.0, np.abs(a_nodes).max()):
        raise ValueError("coefficient a must be real-valued")
    a_nodes = a_nodes.real.astype(complex)
    A_nodes = A_s.at_nodes(scalar_rows)
    principal = A_nodes[:, 1:, 1:]
    herm_defect = np.abs(principal - np.conj(np.swapaxes(principal, 1, 2))).max()
    if herm_defect > 1e-10 * max(1.0, np.abs(principal).max()):
        raise ValueError(
            "the lower-right dims x dims block of A must be pointwise Hermitian"
        )
    eigs = np.linalg.eigvalsh(0.5 * (principal + np.conj(np.swapaxes(principal, 1, 2))))[:, 0]
    lam_A = float(eigs.min())
    wit_A = int(np.argmin(eigs))
    lam_a = float(a_nodes.real.min())
    A_edge_diag = []
    for axis in range(d):
        vals = A_s.at_midpoints(edge_tails[axis], edge_heads[axis])[:, 1 + axis, 1 + axis]
        if vals.size and np.abs(vals.imag).max() > 1e-12 * max(1.0, np.abs(vals).max()):
            raise ValueError("diagonal entries of the principal block must be real (Hermitian)")
        if vals.size:
            lam_A = min(lam_A, float(vals.real.min()))
        A_edge_diag.append(vals)
    lam = min(lam_a, lam_A)
    if lam <= 0:
        witness = int(np.argmin(a_nodes.real)) if lam_a <= lam_A else wit_A
        raise ValueError(
            f"ellipticity violated at scalar node {witness}: lower bound {lam:g} is not positive"
        )
    report = EllipticityReport(lam, wit_A if lam_A < lam_a else int(np.argmin(a_nodes.real)))

    # scalar sub-space for supports of the first block
    sc = node_coords[scalar_rows]
    scalar_space = MetricMeasureSpace(
        cdist(sc, sc), np.full(S, spec.h**d), 1, sc
    )
    B = StaggeredCoefficient(space, blocks, a_nodes, A_nodes, A_edge_diag, transfers)
    return Case3System(spec, space, scalar_space, blocks, D, B, report, grad, scalar_rows)


def build_case3(
    spec: GridSpec, a, A
) -> tuple[SystemOperator, StaggeredCoefficient, EllipticityReport]:
    """Assemble the inhomogeneous block system; see :func:`assemble_case3`."""
    sys3 = assemble_case3(spec, a, A)
    return sys3.D, sys3.B, sys3.report


def split_case3(
    B3: StaggeredCoefficient, lam: float
) -> tuple[StaggeredCoefficient, SystemOperator, float]:
    """Split B3 (composed with the system) into a Hermitian part plus a
    bounded first-block-column remainder.

    Returns (B_tilde, C, shift) where B_tilde replaces A_00 by
    Re A_00 + shift and the lower couplings by the conjugates of the upper
    ones, and C collects what the replacement removed, composed with the
    system's first block column:

        B3 . D = B_tilde . D + C     (exact matrix identity).

    The shift is the smallest value on a doubling ladder starting from 0
    for which the pointwise Hermitian part of B_tilde stays at or above
    lam / 2 and the assembled matrix is positive definite.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    d = B3.dims
    target = 0.5 * lam

    def tilde_with(shift: float) -> StaggeredCoefficient:
        A_t = B3.A_nodes.copy()
        A_t[:, 0, 0] = B3.A_nodes[:, 0, 0].real + shift
        for j in range(d):
            A_t[:, 1 + j, 0] = np.conj(B3.A_nodes[:, 0, 1 + j])
        return StaggeredCoefficient(
            B3.space, B3.blocks, B3.a_nodes, A_t, B3.A_edge_diag, B3.transfers
        )

    shift = 0.0
    ladder = [0.0] + [lam * 0.25 * 2.0**k for k in range(60)]
    chosen = None
    for shift in ladder:
        cand = tilde_with(shift)
        low, _ = cand.pointwise_herm_min()
        if low < target - 1e-12 * max(1.0, abs(target)):
            continue
        assembled = cand.matrix()
        min_eig = float(np.linalg.eigvalsh(0.5 * (assembled + assembled.conj().T)).min())
        if min_eig > 0:
            chosen = cand
            break
    if chosen is None:
        raise FloatingPointError("no finite shift achieves the Hermitian lower bound")

    S = B3.blocks[0].size
    n = B3.space.n_dof
    g = B3.blocks[1]
    C = np.zeros((n, n), dtype=complex)
    s = np.arange(S)
    C[g.start + s, s] = 1j * B3.A_nodes[:, 0, 0].imag - shift
    for j in range(d):
        uj = B3.blocks[2 + j]
        delta = B3.A_nodes[:, 1 + j, 0] - np.conj(B3.A_nodes[:, 0, 1 + j])
        C[uj.start : uj.stop, 0:S] = B3.transfers[j] * delta[None, :]
    C_op = SystemOperator(B3.space, C, blocks=B3.blocks)
    return chosen, C_op, shift


def b_form_of(B: StaggeredCoefficient) -> BForm:
    """Equivalent-inner-product wrapper for a Hermitian positive coefficient."""
    return BForm(B.space, B.matrix(), origin=B)
