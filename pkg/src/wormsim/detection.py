"""Statistical wormhole detection and the routing penalty it imposes.

Each monitored link is probed once per step with a sampled observed delay
(exponential around the link's true delay). A link whose observed delay
exceeds its advertised expectation raises the detector's belief that the
link is a wormhole; once the belief crosses its threshold the link's
price is inflated by a fixed penalty. Beliefs are exponentially weighted
averages of the per-step test outcomes, so a valid link's belief settles
near the test's false-positive rate (e^-1) while a tunneled link's
settles near its much higher detection rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def sample_observed_delay(rng: np.random.Generator, true_mean: float) -> float:
    """One observed-delay sample: exponential with the link's true delay."""
    if true_mean <= 0:
        raise InputError("true delay mean must be > 0")
    return float(rng.exponential(true_mean))


def detect(observed: float, expected: float) -> bool:
    """Anomaly test: fires when log(observed / expected) > 0."""
    if observed <= 0 or expected <= 0:
        raise InputError("delays must be positive")
    return math.log(observed / expected) > 0.0


@dataclass
class DetectorState:
    """Per-link beliefs, threshold, penalty, and latched detection flags.

    Penalties use the flags latched on the previous step, giving detection
    a one-step latency relative to the delay samples that produced it.
    """

    link_ids: tuple
    penalty: float = 10.0
    threshold: float = 0.55
    ema_rate: float = 0.01
    beliefs: dict = field(default_factory=dict)
    detected: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.penalty < 0:
            raise InputError("penalty must be nonnegative")
        if not 0 < self.threshold < 1:
            raise InputError("belief threshold must be in (0, 1)")
        if not 0 < self.ema_rate <= 1:
            raise InputError("ema rate must be in (0, 1]")
        for lid in self.link_ids:
            self.beliefs.setdefault(lid, 0.0)
            self.detected.setdefault(lid, False)

    def update(self, link_id: str, fired: bool):
        w = self.beliefs[link_id]
        w = (1.0 - self.ema_rate) * w + self.ema_rate * (1.0 if fired else 0.0)
        self.beliefs[link_id] = w
        self.detected[link_id] = w > self.threshold


def penalty_term(state: DetectorState, link_id: str) -> float:
    """Price increment on a link currently flagged as a wormhole."""
    if link_id not in state.detected:
        return 0.0
    return state.penalty if state.detected[link_id] else 0.0


def rerouted_path_delay(lam: float, r_p1: float, r_p2: float, r_p3: float,
                        q) -> float:
    """Perceived delay of a tunneled path whose traffic is split by lam.

    A fraction lam of the tunneled flow rides the first alternative path
    and 1-lam the second, so the perceived delay is the matching convex
    combination of those paths' delays at their inflated loads.
    """
    if not 0 <= lam <= 1:
        raise InputError("lam must be in [0, 1]")
    if min(r_p1, r_p2, r_p3) < 0:
        raise InputError("rates must be nonnegative")
    return (lam * q(r_p1 + lam * r_p3)
            + (1.0 - lam) * q(r_p2 + (1.0 - lam) * r_p3))
