"""Finite metric measure spaces, grid discretizations, and Lipschitz cutoffs.

A space is a finite point set with a (pseudo)metric, strictly positive
weights, and a fiber dimension for vector-valued sections.  Grids
discretize boxes in R^n (optionally masked down to an open subset) with
Euclidean distance between nodes and the uniform weight h^dims.

All suprema and infima (Lipschitz norms, distances to sets, metric-axiom
scans) are computed exhaustively; spaces are meant to stay at desk scale,
roughly N <= 5000 points.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "MetricMeasureSpace",
    "SupportSet",
    "LipFunction",
    "GridSpec",
    "check_metric",
    "neighborhood",
    "cutoff",
    "lip_norm",
    "grid_space",
]

_PAIR_CHUNK = 256  # rows per block in exhaustive pair scans


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MetricMeasureSpace:
    """Finite point set with a symmetric distance matrix and positive weights.

    Points are indexed 0..N-1.  ``dist`` may be a pseudometric: distinct
    points are allowed at distance zero (used for co-located degrees of
    freedom of block systems).  ``fiber_dim`` is the number of complex
    components a section carries per point; section vectors are laid out
    component-major, entry ``c * N + x`` holding component ``c`` at point
    ``x``.
    """

    dist: np.ndarray
    weight: np.ndarray
    fiber_dim: int = 1
    coords: np.ndarray | None = None

    def __post_init__(self) -> None:
        dist = np.asarray(self.dist, dtype=float)
        weight = np.asarray(self.weight, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("dist must be a square matrix")
        if weight.shape != (dist.shape[0],):
            raise ValueError("weight must have one entry per point")
        if self.fiber_dim < 1:
            raise ValueError("fiber_dim must be a positive integer")
        coords = self.coords
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != dist.shape[0]:
                raise ValueError("coords must have one row per point")
        object.__setattr__(self, "dist", _readonly(dist))
        object.__setattr__(self, "weight", _readonly(weight))
        object.__setattr__(self, "coords", None if coords is None else _readonly(coords))

    @property
    def n_points(self) -> int:
        return self.dist.shape[0]

    @property
    def n_dof(self) -> int:
        return self.n_points * self.fiber_dim

    def with_fiber_dim(self, m: int) -> "MetricMeasureSpace":
        """Same base space, different number of fiber components."""
        return MetricMeasureSpace(self.dist, self.weight, m, self.coords)

    def dist_to_set(self, members: Iterable[int]) -> np.ndarray:
        """d(x, K) = min over y in K of dist(x, y), for every point x."""
        idx = np.fromiter(members, dtype=int)
        if idx.size == 0:
            raise ValueError("empty support set")
        return self.dist[:, idx].min(axis=1)


@dataclass(frozen=True)
class SupportSet:
    """Subset of a space's point indices."""

    members: frozenset = field(default_factory=frozenset)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "SupportSet":
        return cls(frozenset(int(i) for i in indices))

    def __contains__(self, i: int) -> bool:
        return i in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def as_array(self) -> np.ndarray:
        return np.fromiter(sorted(self.members), dtype=int, count=len(self.members))

    def issubset(self, other: "SupportSet") -> bool:
        return self.members <= other.members

    def union(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.members | other.members)

    def intersection(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.members & other.members)


@dataclass(frozen=True)
class LipFunction:
    """Real bounded function on a space together with its Lipschitz norm.

    ``lip_norm_cached`` always equals ``lip_norm(space, values)`` for the
    space the function was built on; use :func:`cutoff` or
    :meth:`from_values` rather than constructing directly.
    """

    values: np.ndarray
    lip_norm_cached: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("values must be a flat real vector")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be bounded (finite)")
        object.__setattr__(self, "values", _readonly(vals))

    @classmethod
    def from_values(cls, space: MetricMeasureSpace, values: np.ndarray) -> "LipFunction":
        values = np.asarray(values, dtype=float)
        return cls(values, lip_norm(space, values))

    def multiplier(self, space: MetricMeasureSpace) -> np.ndarray:
        """Flat per-dof multiplier implementing multiplication by eta."""
        if self.values.shape[0] != space.n_points:
            raise ValueError("function does not live on this space")
        return np.tile(self.values, space.fiber_dim)

    def support(self, tol: float = 0.0) -> SupportSet:
        return SupportSet.of(np.flatnonzero(np.abs(self.values) > tol))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over a box [0, extent_1] x ... with spacing h.

    ``mask`` (optional, boolean, True = keep) carves an open subset out of
    the full box; masked grids keep ambient Euclidean distances.  The
    boundary condition tag is consumed by the inhomogeneous system
    builder; plain full-space operators ignore it.
    """

    dims: int
    extent: float | tuple[float, ...]
    h: float
    mask: np.ndarray | None = None
    boundary_condition: str = "neumann"

    def __post_init__(self) -> None:
        if self.dims not in (1, 2):
            raise ValueError("dims must be 1 or 2")
        if self.h <= 0:
            raise ValueError("spacing h must be positive")
        ext = self.extent
        if np.isscalar(ext):
            ext = (float(ext),) * self.dims
        else:
            ext = tuple(float(e) for e in ext)
        if len(ext) != self.dims:
            raise ValueError("extent must give one length per axis")
        for e in ext:
            if e <= 0:
                raise ValueError("extent must be positive")
            ratio = e / self.h
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"extent {e} is not an integer multiple of h={self.h}")
        object.__setattr__(self, "extent", ext)
        if self.boundary_condition not in ("dirichlet", "neumann"):
            raise ValueError("boundary_condition must be 'dirichlet' or 'neumann'")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != self.shape:
                raise ValueError(f"mask shape {mask.shape} does not match grid shape {self.shape}")
            object.__setattr__(self, "mask", _readonly(mask))
            if mask.sum() == 0:
                raise ValueError("mask removes every cell")
            if not _mask_connected(mask):
                warnings.warn("masked region is not connected", stacklevel=2)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(round(e / self.h)) + 1 for e in self.extent)

    @property
    def n_nodes(self) -> int:
        if self.mask is not None:
            return int(self.mask.sum())
        return int(np.prod(self.shape))

    def node_coords(self) -> np.ndarray:
        """Coordinates of the kept nodes, row-major over axes, shape (N, dims)."""
        axes = [np.arange(n) * self.h for n in self.shape]
        if self.dims == 1:
            coords = axes[0][:, None]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            coords = np.column_stack([g0.ravel(), g1.ravel()])
        if self.mask is not None:
            coords = coords[self.mask.ravel()]
        return coords

    def kept_flat_indices(self) -> np.ndarray:
        """Row-major indices of kept cells in the full (unmasked) grid."""
        total = int(np.prod(self.shape))
        if self.mask is None:
            return np.arange(total)
        return np.flatnonzero(self.mask.ravel())


def _mask_connected(mask: np.ndarray) -> bool:
    """Breadth-first search over orthogonally adjacent kept cells."""
    if mask.ndim == 1:
        mask = mask[:, None]
    kept = np.argwhere(mask)
    if len(kept) == 0:
        return True
    kept_set = {tuple(p) for p in kept}
    seen = {tuple(kept[0])}
    queue = deque([tuple(kept[0])])
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (i + di, j + dj)
            if nb in kept_set and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(kept_set)


def check_metric(space: MetricMeasureSpace, tol: float = 1e-12, max_report: int = 200) -> list[str]:
    """Scan all metric axioms and weight positivity; return violations.

    The list is empty exactly when the diagonal vanishes, the matrix is
    symmetric and nonnegative, every triple satisfies the triangle
    inequality within ``tol``, and all weights are positive.  Reporting is
    capped at ``max_report`` entries (the scan itself is always complete).
    """
    d = space.dist
    n = space.n_points
    out: list[str] = []
    truncated = 0

    def add(msg: str) -> None:
        nonlocal truncated
        if len(out) < max_report:
            out.append(msg)
        else:
            truncated += 1

    for i in np.flatnonzero(np.abs(np.diag(d)) > tol):
        add(f"dist({i},{i}) = {d[i, i]:g} is not zero")
    asym = np.abs(d - d.T) > tol
    for i, j in zip(*np.nonzero(np.triu(asym, 1))):
        add(f"dist({i},{j}) != dist({j},{i})")
    neg = d < -tol
    for i, j in zip(*np.nonzero(neg)):
        add(f"dist({i},{j}) = {d[i, j]:g} is negative")
    # triangle inequality, exhaustive over all (x, y, z) via one broadcast per y
    for y in range(n):
        excess = d - (d[:, y][:, None] + d[y, :][None, :])
        bad = np.argwhere(excess > tol)
        for x, z in bad:
            add(f"triangle violated: dist({x},{z}) > dist({x},{y}) + dist({y},{z})")
    for x in np.flatnonzero(space.weight <= 0):
        add(f"weight({x}) = {space.weight[x]:g} is not positive")
    if truncated:
        out.append(f"... {truncated} further violations suppressed")
    return out


def neighborhood(space: MetricMeasureSpace, K: SupportSet, tau: float) -> SupportSet:
    """The closed tau-neighborhood {x : d(x, K) <= tau}."""
    if len(K) == 0:
        raise ValueError("empty support set")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    dk = space.dist_to_set(K.members)
    return SupportSet.of(np.flatnonzero(dk <= tau))


def cutoff(space: MetricMeasureSpace, K: SupportSet, alpha: float) -> LipFunction:
    """Lipschitz cutoff max{1 - alpha*d(x,K), 0}.

    Equals 1 on K, vanishes outside the 1/alpha-neighborhood of K, and has
    Lipschitz norm at most alpha.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(K) == 0:
        raise ValueError("empty support set")
    vals = np.maximum(1.0 - alpha * space.dist_to_set(K.members), 0.0)
    return LipFunction(vals, lip_norm(space, vals))


def lip_norm(space: MetricMeasureSpace, values: np.ndarray) -> float:
    """Exact supremum of |eta(x)-eta(y)| / d(x,y) over pairs x != y.

    Single-point spaces return 0 by convention.  Pairs at distance zero
    contribute 0 when the values agree and inf otherwise (a function that
    separates co-located points is not Lipschitz for the pseudometric).
    """
    values = np.asarray(values, dtype=float)
    n = space.n_points
    if values.shape != (n,):
        raise ValueError("values must have one entry per point")
    if n < 2:
        return 0.0
    d = space.dist
    best = 0.0
    for lo in range(0, n, _PAIR_CHUNK):
        hi = min(lo + _PAIR_CHUNK, n)
        diff = np.abs(values[lo:hi, None] - values[None, :])
        dd = d[lo:hi, :]
        pos = dd > 0.0
        if np.any(pos):
            best = max(best, float((diff[pos] / dd[pos]).max()))
        # off-diagonal zero-distance pairs with differing values
        zero = ~pos
        zero[:, lo:hi] &= ~np.eye(hi - lo, dtype=bool)
        if np.any(diff[zero] > 0.0):
            return float("inf")
    return best


def grid_space(spec: GridSpec) -> MetricMeasureSpace:
    """Discretize the spec's box: nodes at multiples of h, weight h^dims.

    Distances are Euclidean between node coordinates, also for masked
    grids (ambient distance, not geodesic inside the mask).
    """
    coords = spec.node_coords()
    if coords.shape[0] == 0:
        raise ValueError("grid has no cells")
    dist = cdist(coords, coords)
    weight = np.full(coords.shape[0], spec.h**spec.dims)
    return MetricMeasureSpace(dist, weight, 1, coords)


def space_to_json(space: MetricMeasureSpace, include_dist: bool = True) -> dict:
    """JSON-ready document {points, dist?, weights, coords}.

    Grid-backed spaces can omit the distance matrix (recomputable from the
    coordinates).
    """
    doc: dict = {
        "points": int(space.n_points),
        "weights": space.weight.tolist(),
        "fiber_dim": int(space.fiber_dim),
    }
    if include_dist:
        doc["dist"] = space.dist.tolist()
    if space.coords is not None:
        doc["coords"] = space.coords.tolist()
    return doc


def space_from_json(doc: dict) -> MetricMeasureSpace:
    """Inverse of :func:`space_to_json`; recomputes distances if omitted."""
    coords = np.asarray(doc["coords"], dtype=float) if "coords" in doc else None
    if "dist" in doc:
        dist = np.asarray(doc["dist"], dtype=float)
    elif coords is not None:
        if coords.ndim == 1:
            coords = coords[:, None]
        dist = cdist(coords, coords)
    else:
        raise ValueError("document has neither dist nor coords")
    weight = np.asarray(doc["weights"], dtype=float)
    return MetricMeasureSpace(dist, weight, int(doc.get("fiber_dim", 1)), coords)
