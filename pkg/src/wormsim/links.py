"""Link delay laws and the out-of-band adversary's drop-rate optimization.

Valid links delay packets by propagation time inflated with the expected
number of transmissions under finite-buffer overflow. An out-of-band
wormhole delays packets by its tunnel propagation time inflated by its own
packet-dropping rate. The adversary picks that dropping rate by enumerating
the finitely many candidates at which the set of attracted sources changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, SaturationError
from .topology import NetworkSpec, bfs_distances, WORMHOLE_KINDS


def mm1k_drop(rho, queue_capacity: int):
    """Overflow probability of a single-server queue with finite buffer.

    Accepts a scalar or array utilization; the removable singularity at
    rho == 1 is filled with its analytic limit 1/(K+1).
    """
    if queue_capacity < 1:
        raise InputError("queue_capacity must be >= 1")
    K = queue_capacity
    if isinstance(rho, (int, float)):  # fast scalar path (hot loop)
        r = float(rho)
        if r < 0:
            raise InputError("utilization must be nonnegative")
        if r == 0.0:
            return 0.0
        if abs(r - 1.0) < 1e-9:
            return 1.0 / (K + 1)
        rk = r ** K
        return (rk - rk * r) / (1.0 - rk * r)
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0):
        raise InputError("utilization must be nonnegative")
    near_one = np.abs(arr - 1.0) < 1e-9
    safe = np.where(near_one, 2.0, arr)  # dummy value, masked out below
    rk = safe ** K
    out = np.where(near_one, 1.0 / (K + 1),
                   (rk - rk * safe) / (1.0 - rk * safe))
    out = np.where(arr == 0.0, 0.0, out)
    if np.ndim(rho) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ValidLinkLaw:
    """Delay law of a valid link: alpha / (1 - overflow probability)."""

    capacity: float
    alpha: float
    queue_capacity: int

    def __call__(self, r):
        if isinstance(r, (int, float)):
            return self.alpha / (1.0 - mm1k_drop(float(r) / self.capacity,
                                                 self.queue_capacity))
        return self.alpha / (1.0 - mm1k_drop(np.asarray(r) / self.capacity,
                                             self.queue_capacity))


def valid_link_delay(r, law: ValidLinkLaw):
    if np.any(np.asarray(r) < 0):
        raise InputError("link rate must be nonnegative")
    out = law(r)
    return float(out) if np.ndim(r) == 0 else out


def sim_drop_profile(r):
    """Dropping rate (1 - 1/r) once the tunnel carries more than one unit."""
    if isinstance(r, (int, float)):
        rr = float(r)
        if rr < 0:
            raise InputError("rate must be nonnegative")
        return 1.0 - 1.0 / rr if rr > 1.0 else 0.0
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise InputError("rate must be nonnegative")
    out = np.where(arr > 1.0, 1.0 - 1.0 / np.where(arr > 1.0, arr, 1.0), 0.0)
    return float(out) if np.ndim(r) == 0 else out


@dataclass(frozen=True)
class OobWormholeLaw:
    """Out-of-band wormhole delay: tunnel propagation over survival rate."""

    alpha: float
    drop_profile: Callable = sim_drop_profile

    def __call__(self, r):
        phi = self.drop_profile(r)
        if np.any(np.asarray(phi) >= 1.0):
            raise SaturationError("drop profile reached 1: infinite delay")
        return self.alpha / (1.0 - phi)


def oob_delay(r, law: OobWormholeLaw):
    if np.any(np.asarray(r) < 0):
        raise InputError("link rate must be nonnegative")
    out = law(r)
    return float(out) if np.ndim(r) == 0 else out


def delta_margin(spec: NetworkSpec, source_node: str, dest_node: str,
                 w1: str, w2: str) -> float:
    """Delay margin the wormhole must beat for one source.

    zeta * (d(S, D) - d(S, W1) - d(W2, D)), with hop distances taken over
    the legitimate (non-wormhole) topology.
    """
    d_s = bfs_distances(spec, source_node, exclude_kinds=WORMHOLE_KINDS)
    d_w2 = bfs_distances(spec, w2, exclude_kinds=WORMHOLE_KINDS)
    if w1 not in d_s:
        raise InputError(f"unknown node id {w1}")
    parts = (d_s[dest_node], d_s[w1], d_w2[dest_node])
    if any(math.isinf(p) for p in parts):
        raise InputError("margin undefined: nodes unreachable")
    return spec.zeta * (parts[0] - (parts[1] + parts[2]))


@dataclass
class AdversaryPlan:
    """Result of the drop-rate enumeration.

    margins/rates are rank-ordered by decreasing margin. candidates holds
    the admissible drop rates, objectives the value r*(phi)*phi + U_A(r*)
    at each, phi_star the maximizer (ties resolved toward the larger drop
    rate) and captured_flow the steady-state flow it attracts.
    """

    margins: tuple
    rates: tuple
    alpha: float
    eps: float
    candidates: tuple
    objectives: tuple
    phi_star: float
    captured_flow: float
    chosen_index: Optional[int]
    u_a: Optional[Callable] = None


def wormhole_capture(margins: Sequence[float], rates: Sequence[float],
                     alpha: float, phi: float) -> float:
    """Steady-state flow attracted at drop rate phi.

    A source routes through the wormhole exactly when the tunnel delay
    alpha/(1-phi) undercuts its margin.
    """
    if phi >= 1.0:
        return 0.0
    p = alpha / (1.0 - phi)
    return float(sum(r for d, r in zip(margins, rates) if p < d))


def optimal_drop_rate(margins: Sequence[float], rates: Sequence[float],
                      alpha: float, u_a: Optional[Callable] = None,
                      eps: float = 0.01) -> AdversaryPlan:
    """Enumerate candidate drop rates and return the objective maximizer.

    margins must be strictly decreasing. Candidates sit just below each
    margin-crossing point; any candidate outside [0, 1) means that source
    cannot be attracted at all and is skipped. With no admissible
    candidate the wormhole stays transparent (phi = 0, no captured flow).
    """
    if len(margins) != len(rates):
        raise InputError("margins and rates must align")
    if any(m2 >= m1 for m1, m2 in zip(margins, margins[1:])):
        raise InputError("margins must be strictly decreasing")
    if not 0 < eps < 1:
        raise InputError("eps must be in (0, 1)")
    util = u_a if u_a is not None else (lambda flow: 0.0)

    candidates = []
    objectives = []
    kept_idx = []
    for i, margin in enumerate(margins):
        gamma = 1.0 - alpha / margin - eps if margin > 0 else -1.0
        if not 0.0 <= gamma < 1.0:
            continue
        flow = sum(rates[: i + 1])
        candidates.append(gamma)
        objectives.append(flow * gamma + util(flow))
        kept_idx.append(i)

    if not candidates:
        return AdversaryPlan(tuple(margins), tuple(rates), alpha, eps,
                             (), (), 0.0, 0.0, None, util)

    best = 0
    for j in range(1, len(candidates)):
        if objectives[j] > objectives[best] or (
                objectives[j] == objectives[best]
                and candidates[j] > candidates[best]):
            best = j
    return AdversaryPlan(
        tuple(margins), tuple(rates), alpha, eps,
        tuple(candidates), tuple(objectives),
        candidates[best], wormhole_capture(margins, rates, alpha,
                                           candidates[best]),
        kept_idx[best], util)
