"""Packet-leash mitigation: expiration drops and the induced extra delay.

Every packet carries an expiration budget of one hop's propagation time
plus a clock-skew allowance dmax. Skew is exponential, so a valid link
drops packets with the tail probability of dmax, while a wormhole-routed
packet must additionally amortize its tunnel detour minus whatever
geometric slack the leash cannot resolve. Drops act on the fluid model as
a deterministic retransmission-rate inflation of the link's base delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, SaturationError


@dataclass(frozen=True)
class LeashPolicy:
    """Clock-skew model plus the dmax schedule.

    adaptive=True uses dmax(r) = ref_alpha - 1 + 1/r, tightening the leash
    as the link rate grows; otherwise dmax is the constant dmax_const.
    ref_alpha is the network's estimate of the covert tunnel's propagation
    delay (the schedule is one policy network-wide, so it cannot depend on
    which link is secretly a wormhole).
    """

    skew_mean: float
    adaptive: bool = True
    ref_alpha: float = 2.0
    dmax_const: float = math.inf

    def __post_init__(self):
        if not self.skew_mean > 0:
            raise InputError("skew mean must be > 0")

    def dmax(self, r) -> float:
        if not self.adaptive:
            return self.dmax_const
        r = float(r)
        return self.ref_alpha - 1.0 + (1.0 / r if r > 0 else math.inf)


def leash_drop_prob(kind: str, r_l, policy: LeashPolicy, alpha_l: float,
                    slack: float = 0.0) -> float:
    """Probability a packet overruns its leash on this link.

    Valid links only pay for skew beyond dmax. A wormhole packet's budget
    is shifted by (slack - alpha_l): the tunnel detour eats the allowance,
    and a nonpositive effective threshold means certain expiry.
    """
    if r_l < 0:
        raise InputError("link rate must be nonnegative")
    dmax = policy.dmax(r_l)
    if kind == "valid":
        threshold = dmax
    else:
        threshold = dmax + slack - alpha_l
    if math.isinf(threshold):
        return 0.0
    if threshold <= 0:
        return 1.0
    return math.exp(-threshold / policy.skew_mean)


def leash_added_delay(r_l, p_d: float, base_delay: float) -> float:
    """Extra delay from leash-forced retransmissions of the base delay."""
    if p_d >= 1.0:
        raise SaturationError("leash drop probability reached 1")
    return (1.0 / (1.0 - p_d) - 1.0) * base_delay
