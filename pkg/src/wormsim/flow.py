"""Wardrop flow-allocation dynamics and an independent equilibrium oracle.

Each source continuously shifts flow from its slower paths onto its
currently fastest path, at a rate equal to the delay gap, never driving a
path rate negative. Stationary points of these dynamics are exactly the
Wardrop states (positive-rate paths all achieve the minimum delay). The
oracle solves the equivalent convex program -- minimize the summed
antiderivatives of the link delay laws over the product of rate
simplices -- by projected gradient descent, giving an equilibrium
computed by a route independent of the integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import InputError, ModelError, NumericalError
from .topology import IncidenceMatrix


@dataclass
class FlowState:
    """Per-source path rates at one instant."""

    t: float
    rates: list  # list of 1-D arrays, one per source

    def total(self, i: int) -> float:
        return float(self.rates[i].sum())

    def concat(self) -> np.ndarray:
        return np.concatenate(self.rates)


@dataclass
class PathDelays:
    """Per-source path delays plus each source's minimum-delay path."""

    q: list  # list of 1-D arrays, one per source

    def min_index(self, i: int) -> int:
        return min_delay_path(self.q[i])

    def concat(self) -> np.ndarray:
        return np.concatenate(self.q)


def path_delays(inc: IncidenceMatrix, link_delays: np.ndarray) -> PathDelays:
    """Sum link delays along every path; split per source."""
    d = np.asarray(link_delays, dtype=float)
    if d.shape != (inc.n_links,):
        raise InputError("link delay vector has wrong length")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InputError("link delays must be finite and nonnegative")
    q_all = inc.matrix.T @ d
    return PathDelays([q_all[s] for s in inc.col_slices])


def min_delay_path(q: np.ndarray) -> int:
    """Lowest-index minimizer (deterministic tie-break)."""
    if len(q) == 0:
        raise InputError("empty delay vector")
    return int(np.argmin(q))


def wardrop_step_rates(r: np.ndarray, q: np.ndarray, total: float,
                       dt: float) -> np.ndarray:
    """One explicit-Euler update of a single source's allocation.

    Every non-minimal path drains at its delay gap, capped at the rate
    that would empty it within the step (the discrete projection, so
    rates never cross zero); the minimal path absorbs the drained mass.
    The result is clipped and renormalized onto the simplex, which exactly
    preserves feasibility in discrete time.
    """
    if dt <= 0:
        raise InputError("dt must be > 0")
    pmin = min_delay_path(q)
    gap = q - q[pmin]
    drain = np.minimum(gap, r / dt)
    drain[pmin] = 0.0
    out = r - dt * drain
    out[pmin] += dt * drain.sum()
    out = np.maximum(out, 0.0)
    s = out.sum()
    if s > 0:
        out *= total / s
    # pin the sum exactly; float dust goes to the largest coordinate
    out[int(np.argmax(out))] += total - out.sum()
    return out


def wardrop_step(state: FlowState, delays: PathDelays,
                 source_totals: Sequence[float], dt: float) -> FlowState:
    new_rates = [
        wardrop_step_rates(state.rates[i], delays.q[i], source_totals[i], dt)
        for i in range(len(state.rates))
    ]
    return FlowState(state.t + dt, new_rates)


def is_wardrop(state: FlowState, delays: PathDelays,
               tol: float = 1e-3) -> bool:
    """Flow only on paths within tol of each source's minimum delay."""
    for r, q in zip(state.rates, delays.q):
        qmin = q.min()
        if np.any((r > tol) & (q > qmin + tol)):
            return False
    return True


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto the simplex of the given total mass."""
    if total <= 0:
        raise InputError("simplex total must be > 0")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, len(v) + 1)
    cond = u - (css - total) / idx > 0
    k = idx[cond][-1]
    lam = (css[cond][-1] - total) / k
    return np.maximum(v - lam, 0.0)


def check_monotone_laws(laws: Sequence[Callable], grid_max: float,
                        n_grid: int = 256):
    """Reject any link law that decreases anywhere on [0, grid_max]."""
    grid = np.linspace(0.0, grid_max, n_grid)
    for k, law in enumerate(laws):
        vals = np.array([float(law(g)) for g in grid])
        if np.any(np.diff(vals) < -1e-9):
            raise ModelError(f"link law {k} is decreasing on the grid")


@dataclass
class OracleResult:
    rates: np.ndarray          # concatenated per-path equilibrium rates
    per_source: list           # split per source
    iterations: int
    wardrop_slack: float
    path_delays: np.ndarray


def equilibrium_oracle(inc: IncidenceMatrix, laws: Sequence[Callable],
                       source_totals: Sequence[float],
                       tol: float = 1e-6, slack_tol: float = 1e-3,
                       max_iter: int = 60000,
                       step_scale: float = 0.1) -> OracleResult:
    """Equilibrium via projected gradient descent with diminishing steps.

    The objective gradient in path space is just the vector of current
    path delays, so each iterate moves against the delays and projects
    back onto every source's simplex. Stops when allocations stall (below
    tol) and the Wardrop slack of the iterate is below slack_tol.
    """
    totals = [float(t) for t in source_totals]
    if any(t <= 0 for t in totals):
        raise InputError("source totals must be > 0")
    check_monotone_laws(laws, grid_max=sum(totals) * 1.05)

    slices = inc.col_slices
    r = np.concatenate([
        np.full(sl.stop - sl.start, t / (sl.stop - sl.start))
        for sl, t in zip(slices, totals)
    ])
    eta0 = step_scale * max(totals)

    def delays_of(rv):
        z = inc.matrix @ rv
        d = np.array([float(laws[k](z[k])) for k in range(inc.n_links)])
        return inc.matrix.T @ d

    def slack_of(rv, q_all):
        worst = 0.0
        for sl in slices:
            qi, ri = q_all[sl], rv[sl]
            active = ri > 1e-6
            if active.any():
                worst = max(worst, float((qi[active] - qi.min()).max()))
        return worst

    q_all = delays_of(r)
    for it in range(1, max_iter + 1):
        eta = eta0 / math.sqrt(it)
        nxt = r - eta * q_all
        r_new = np.concatenate([
            project_simplex(nxt[sl], t) for sl, t in zip(slices, totals)
        ])
        moved = float(np.abs(r_new - r).max())
        r = r_new
        q_all = delays_of(r)
        if moved < tol and it % 50 == 0:
            if slack_of(r, q_all) < slack_tol:
                return OracleResult(r, [r[sl].copy() for sl in slices], it,
                                    slack_of(r, q_all), q_all)
    final_slack = slack_of(r, q_all)
    if final_slack < slack_tol:
        return OracleResult(r, [r[sl].copy() for sl in slices], max_iter,
                            final_slack, q_all)
    raise NumericalError(
        f"oracle failed to converge: slack {final_slack:.3e} after "
        f"{max_iter} iterations")


def oracle_objective(inc: IncidenceMatrix, laws: Sequence[Callable],
                     r: np.ndarray, quad_tol: float = 1e-9) -> float:
    """Convex potential: summed antiderivatives of the link laws.

    Evaluated by adaptive quadrature; nonincreasing along trajectories of
    the flow dynamics and minimized exactly at the equilibrium.
    """
    z = inc.matrix @ np.asarray(r, dtype=float)
    total = 0.0
    for k in range(inc.n_links):
        if z[k] > 0:
            val, _ = quad(lambda s: float(laws[k](s)), 0.0, z[k],
                          epsabs=quad_tol, epsrel=quad_tol, limit=200)
            total += val
    return total
