"""Support measurement, propagation speed fits, and cone verification.

Floating point evolution never produces exact zeros, so supports are
measured at a relative threshold eps: a point belongs to the eps-support
when its fiber magnitude exceeds eps times the largest one.  Propagation
speed is the slope of the eps-support radius about the initial support K
as a function of time, fitted through the origin over times that are
neither stencil-dominated (t below a few grid cells of travel) nor
saturated (the support has hit the far end of the finite domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .group_flow import Propagator
from .operators import Section, commutator, operator_norm
from .space import LipFunction, MetricMeasureSpace, SupportSet, neighborhood

__all__ = [
    "PropagationReport",
    "eps_support",
    "support_radius",
    "measure_speed",
    "sharper_support",
    "directional_test",
]


@dataclass(frozen=True)
class PropagationReport:
    """Radii of one evolution run and the verdict against the cone bound."""

    times: tuple[float, ...]
    radii: tuple[float, ...]
    epsilon: float
    fitted_speed: float
    bound: float
    slack: float
    verdict: bool
    defect: float | None = None
    dropped_times: tuple[float, ...] = ()

    def rows(self) -> list[tuple[float, float, float]]:
        """(t, radius, cone bound) rows for CSV export."""
        return [(t, r, self.bound * t) for t, r in zip(self.times, self.radii)]

    def verdict_doc(self) -> dict:
        return {
            "fitted_speed": self.fitted_speed,
            "bound": self.bound,
            "defect": self.defect,
            "eps": self.epsilon,
            "slack": self.slack,
            "pass": bool(self.verdict),
        }


def eps_support(u: Section, eps: float) -> SupportSet:
    """Points whose fiber magnitude exceeds eps times the maximal one."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie strictly between 0 and 1")
    mags = u.fiber_magnitudes()
    top = mags.max(initial=0.0)
    if top == 0.0:
        return SupportSet.of(())
    return SupportSet.of(np.flatnonzero(mags > eps * top))


def support_radius(u: Section, K: SupportSet, eps: float) -> float:
    """Largest distance from K to a point of the eps-support (0 if empty)."""
    if len(K) == 0:
        raise ValueError("empty support set")
    supp = eps_support(u, eps)
    if len(supp) == 0:
        return 0.0
    dk = u.space.dist_to_set(K.members)
    return float(dk[supp.as_array()].max())


def _grid_cell(space: MetricMeasureSpace) -> float:
    d = space.dist
    pos = d[d > 0]
    return float(pos.min()) if pos.size else 0.0


def measure_speed(
    P: Propagator,
    u0: Section,
    K: SupportSet,
    time_grid: Sequence[float],
    eps: float,
    kappa_emp: float | None = None,
    bound: float | None = None,
    slack: float = 0.05,
    defect: float | None = None,
    min_travel_cells: float = 5.0,
) -> PropagationReport:
    """Evolve a section and fit the support expansion speed.

    The cone bound defaults to c * kappa_emp with c from the propagator's
    certified group bound; pass ``bound`` to check a case-specific value
    instead.  The fit is a least-squares line through the origin over the
    times that have traveled at least ``min_travel_cells`` grid cells and
    have not saturated the domain; the verdict is
    fitted_speed <= bound * (1 + slack).
    """
    if bound is None:
        if kappa_emp is None:
            raise ValueError("provide kappa_emp (certified) or an explicit bound")
        if P.group_bound is None:
            raise ValueError("propagator carries no certified group bound")
        bound = P.group_bound.c * kappa_emp
    ts = np.asarray(list(time_grid), dtype=float)
    if ts.size == 0 or np.any(ts <= 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("time grid must be positive and increasing")
    if support_radius(u0, K, eps) > 0.0:
        raise ValueError("initial data is not supported in K at the requested eps")
    space = u0.space
    dk = space.dist_to_set(K.members)
    max_reach = float(dk.max())
    h = _grid_cell(space)

    radii = np.array([support_radius(P.evolve(t, u0), K, eps) for t in ts])
    saturated = radii >= max_reach - 1e-12
    early = ts < min_travel_cells * h
    usable = ~saturated & ~early
    if not np.any(~saturated):
        raise ValueError("domain too small for requested horizon: every time saturated")
    if not np.any(usable):
        usable = ~saturated  # all surviving times are early; fit them anyway
    tt = ts[usable]
    rr = radii[usable]
    fitted = float((tt * rr).sum() / (tt * tt).sum())
    verdict = fitted <= bound * (1.0 + slack)
    return PropagationReport(
        times=tuple(ts),
        radii=tuple(radii),
        epsilon=eps,
        fitted_speed=fitted,
        bound=float(bound),
        slack=slack,
        verdict=bool(verdict),
        defect=defect,
        dropped_times=tuple(ts[~usable]),
    )


def sharper_support(
    P: Propagator,
    K: SupportSet,
    t: float,
    eta_family: Sequence[LipFunction],
    kappa_emp: float | None = None,
) -> tuple[SupportSet, bool]:
    """Intersection of supports of admissible cutoffs equal to 1 on K.

    A cutoff qualifies when c |t| ||[eta I, D]|| < 1; the result is the
    intersection of the supports of the qualifying ones, always contained
    in the c kappa |t| neighborhood of K.  When nothing qualifies, the
    conservative neighborhood itself is returned with the fallback flag
    set (kappa_emp is then required).
    """
    if not eta_family:
        raise ValueError("empty cutoff family")
    if P.group_bound is None:
        raise ValueError("propagator carries no certified group bound")
    space = P.space
    c = P.group_bound.c
    gram = P.op.b_form if P.group_bound_norm == "B" else None
    k_idx = K.as_array()
    result: SupportSet | None = None
    for eta in eta_family:
        ones = np.abs(eta.values[k_idx] - 1.0)
        if ones.max(initial=0.0) > 1e-12:
            raise ValueError("every family member must equal 1 on K")
        norm = operator_norm(commutator(eta, P.op), gram=gram)
        if c * abs(t) * norm >= 1.0:
            continue
        supp = eta.support()
        result = supp if result is None else result.intersection(supp)
    if result is None:
        if kappa_emp is None:
            raise ValueError("no qualifying cutoff and no kappa_emp for the fallback")
        return neighborhood(space, K, c * kappa_emp * abs(t)), True
    return result, False


def directional_test(
    P: Propagator,
    u0: Section,
    axis: int,
    time_grid: Sequence[float],
    eps: float,
) -> float:
    """Largest growth of the eps-support extent along one coordinate axis.

    Operators assembled without that axis's differences must not spread
    along it; the contract is a drift of at most one grid cell.
    """
    space = u0.space
    if space.coords is None:
        raise ValueError("directional tests need coordinates")
    coords = space.coords[:, axis]

    def extent(section: Section) -> float:
        supp = eps_support(section, eps)
        if len(supp) == 0:
            return 0.0
        vals = coords[supp.as_array()]
        return float(vals.max() - vals.min())

    base = extent(u0)
    drift = 0.0
    for t in time_grid:
        drift = max(drift, extent(P.evolve(t, u0)) - base)
    return drift
