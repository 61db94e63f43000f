"""In-band wormhole model: tunnel length statistics and capture dynamics.

An in-band wormhole advertises a one-hop link between two colluding nodes
but actually relays packets over a multi-hop tunnel through a third
captured node, chosen to avoid the routing loop that would otherwise
collapse the tunnel. The expected shortest collapse-safe tunnel length,
as a function of the fraction x of captured nodes, is estimated by Monte
Carlo; the adversary grows x by gradient ascent against a linear capture
cost; and the wormhole's delay is the tunnel length times a one-hop delay
law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError
from .topology import NetworkSpec, bfs_distances, WORMHOLE_KINDS


def collapse_safe(d13: int, d23: int) -> bool:
    """Whether relaying via the third node avoids tunnel collapse."""
    if d13 < 0 or d23 < 0:
        raise InputError("hop counts must be nonnegative")
    return d13 < d23 + 3


def _tunnel_lengths(spec: NetworkSpec, w1: str, w2: str) -> np.ndarray:
    """Collapse-safe tunnel length per candidate relay node (inf if unsafe).

    Candidates are all nodes except the two colluding endpoints; distances
    ignore wormhole links (the tunnel runs over the legitimate topology).
    """
    d1 = bfs_distances(spec, w1, exclude_kinds=WORMHOLE_KINDS)
    d2 = bfs_distances(spec, w2, exclude_kinds=WORMHOLE_KINDS)
    out = []
    for node in spec.nodes:
        if node in (w1, w2):
            continue
        a, b = d1[node], d2[node]
        if math.isinf(a) or math.isinf(b) or not collapse_safe(a, b):
            out.append(math.inf)
        else:
            out.append(a + b)
    return np.array(out)


def exhaustive_beta(spec: NetworkSpec, w1: str, w2: str,
                    fallback: Optional[float] = None) -> float:
    """Shortest collapse-safe tunnel length over every candidate relay."""
    lengths = _tunnel_lengths(spec, w1, w2)
    best = lengths.min() if lengths.size else math.inf
    if math.isinf(best):
        return float(fallback if fallback is not None else len(spec.nodes))
    return float(best)


def beta_estimate(spec: NetworkSpec, w1: str, w2: str, x: float,
                  trials: int, seed: int,
                  fallback: Optional[float] = None) -> tuple[float, float]:
    """Monte Carlo mean (and standard error) of the tunnel length at x.

    Each trial captures a uniform random subset of floor(n*x) candidate
    nodes and takes the shortest collapse-safe tunnel through them; trials
    with no safe relay contribute the fallback length (default: the node
    count, an unusably long tunnel).
    """
    n = len(spec.nodes)
    m = math.floor(n * x)
    if not 0 < x <= 1:
        raise InputError("x must be in (0, 1]")
    if m < 1:
        raise InputError("floor(n*x) must be >= 1")
    if trials < 1:
        raise InputError("trials must be >= 1")
    lengths = _tunnel_lengths(spec, w1, w2)
    n_cand = lengths.size
    m = min(m, n_cand)
    fb = float(fallback if fallback is not None else n)
    if m == n_cand:
        best = lengths.min() if n_cand else math.inf
        val = fb if math.isinf(best) else float(best)
        return val, 0.0
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    for t in range(trials):
        subset = rng.choice(n_cand, size=m, replace=False)
        best = lengths[subset].min()
        vals[t] = fb if math.isinf(best) else best
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return float(vals.mean()), se


def _convex_fit(xs: np.ndarray, vals: np.ndarray):
    """Nonincreasing convex piecewise-linear fit (cummin + lower hull)."""
    vals = np.minimum.accumulate(vals)
    hull_x = [xs[0]]
    hull_v = [vals[0]]
    for xk, vk in zip(xs[1:], vals[1:]):
        hull_x.append(xk)
        hull_v.append(vk)
        while len(hull_x) >= 3:
            s1 = (hull_v[-2] - hull_v[-3]) / (hull_x[-2] - hull_x[-3])
            s2 = (hull_v[-1] - hull_v[-2]) / (hull_x[-1] - hull_x[-2])
            if s1 <= s2 + 1e-12:
                break
            del hull_x[-2], hull_v[-2]
    return np.array(hull_x), np.array(hull_v)


@dataclass
class BetaCurve:
    """Sampled tunnel-length curve with its convexified interpolant."""

    xs: np.ndarray
    means: np.ndarray
    std_errs: np.ndarray
    trials: int
    fallback: float
    hull_x: np.ndarray = None
    hull_v: np.ndarray = None

    def __post_init__(self):
        order = np.argsort(self.xs)
        self.xs = np.asarray(self.xs, float)[order]
        self.means = np.asarray(self.means, float)[order]
        self.std_errs = np.asarray(self.std_errs, float)[order]
        if len(self.xs) < 1:
            raise InputError("curve needs at least one sample point")
        self.hull_x, self.hull_v = _convex_fit(self.xs, self.means)

    def value(self, x: float) -> float:
        x = min(max(x, self.hull_x[0]), self.hull_x[-1])
        return float(np.interp(x, self.hull_x, self.hull_v))

    def slope(self, x: float) -> float:
        """Slope of the convex fit at x (segment slope; knots average)."""
        if len(self.hull_x) == 1:
            return 0.0
        span = self.hull_x[-1] - self.hull_x[0]
        h = max(span * 1e-4, 1e-9)
        lo = max(x - h, self.hull_x[0])
        hi = min(x + h, self.hull_x[-1])
        if hi <= lo:
            return 0.0
        return (self.value(hi) - self.value(lo)) / (hi - lo)


def estimate_beta_curve(spec: NetworkSpec, w1: str, w2: str,
                        xs: Sequence[float], trials: int, seed: int,
                        fallback: Optional[float] = None) -> BetaCurve:
    means, ses = [], []
    for k, x in enumerate(xs):
        m, s = beta_estimate(spec, w1, w2, x, trials, seed + k, fallback)
        means.append(m)
        ses.append(s)
    fb = float(fallback if fallback is not None else len(spec.nodes))
    return BetaCurve(np.array(xs, float), np.array(means), np.array(ses),
                     trials, fb)


def beta_derivative(curve: BetaCurve, x: float) -> float:
    """Central finite difference on the convexified piecewise-linear fit."""
    if x < curve.xs[0] - 1e-12 or x > curve.xs[-1] + 1e-12:
        raise InputError(f"x={x} outside sampled range "
                         f"[{curve.xs[0]}, {curve.xs[-1]}]")
    if len(curve.xs) < 2:
        raise InputError("need at least two sample points for a slope")
    return curve.slope(x)


@dataclass(frozen=True)
class CompromiseState:
    """Fraction of captured nodes and the adversary's capture cost rate."""

    x: float
    cost_rate: float
    w1: str
    w2: str

    def __post_init__(self):
        if not 0 <= self.x <= 1:
            raise InputError("x must be in [0, 1]")
        if not self.cost_rate > 0:
            raise InputError("cost rate must be > 0")


def compromise_step(state: CompromiseState, beta_slope: float,
                    dt: float) -> CompromiseState:
    """Gradient-ascent step on capture fraction, clamped to [0, 1]."""
    if dt <= 0:
        raise InputError("dt must be > 0")
    drive = max(-beta_slope - state.cost_rate, 0.0)
    x = min(max(state.x + dt * drive, 0.0), 1.0)
    return CompromiseState(x, state.cost_rate, state.w1, state.w2)


def ib_delay(r_l, x: float, curve: BetaCurve, base_law: Callable) -> float:
    """Tunnel delay: expected hop count at x times the one-hop delay law."""
    if np.any(np.asarray(r_l) < 0):
        raise InputError("link rate must be nonnegative")
    return curve.value(x) * base_law(r_l)
