"""Sampled-data integrator plant closed over the simulated network.

The plant state is sampled every h time units at a source node and the
control is computed remotely, so each control arrives one network delay
late and is held between updates. Control packets riding a wormhole path
during its dropping phase are lost outright, in which case the previous
control stays in force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class PlantConfig:
    """Scalar integrator: sampling period, gain, noise level, start state."""

    h: float = 0.3
    gain: float = 2.0
    noise_std: float = 1.0
    x0: float = 1.0
    source: str = "S1"

    def __post_init__(self):
        if not self.h > 0:
            raise InputError("sampling period must be > 0")
        if not self.gain > 0:
            raise InputError("gain must be > 0")
        if self.noise_std < 0:
            raise InputError("noise std must be nonnegative")


@dataclass(frozen=True)
class AdversaryPolicy:
    """Threshold-triggered wormhole behaviour.

    Below flow_threshold the tunnel runs at low_latency_delay to attract
    flow; above it, packets drop with drop_prob. observe_lag is the
    retransmission timescale low_latency/(1 - drop_prob): sources cannot
    perceive the inflated delay before packets have suffered it.
    """

    low_latency_delay: float = 0.1
    flow_threshold: float = 5.0
    drop_prob: float = 0.9

    def __post_init__(self):
        if not 0 <= self.drop_prob <= 1:
            raise InputError("drop probability must be in [0, 1]")
        if not self.low_latency_delay > 0:
            raise InputError("low-latency delay must be > 0")

    @property
    def observe_lag(self) -> float:
        if self.drop_prob >= 1.0:
            return math.inf
        return self.low_latency_delay / (1.0 - self.drop_prob)


def plant_step(x: float, u_held: float, disturbance: float,
               h: float) -> float:
    """Exact integration over one interval with the control held constant.

    disturbance is one noise sample already scaled to the configured
    standard deviation; its sqrt(h) factor makes the increment consistent
    with integrated white noise.
    """
    if h <= 0:
        raise InputError("interval must be > 0")
    return x + h * u_held + math.sqrt(h) * disturbance


def sample_network_delay(rates: np.ndarray, path_delays: np.ndarray,
                         worm_paths, mode_drop: bool, drop_prob: float,
                         rng_path: np.random.Generator,
                         rng_drop: np.random.Generator):
    """Draw one packet's path by flow share; return (tau, dropped).

    tau is the chosen path's current delay. The packet is lost with the
    triggered probability when its path crosses the wormhole while the
    adversary is dropping.
    """
    rates = np.asarray(rates, dtype=float)
    total = rates.sum()
    if total <= 0:
        raise InputError("source carries no flow")
    p_idx = int(rng_path.choice(len(rates), p=rates / total))
    tau = float(path_delays[p_idx])
    dropped = bool(p_idx in worm_paths and mode_drop
                   and rng_drop.random() < drop_prob)
    return tau, dropped, p_idx


def co_simulate(assembly, horizon=None, dt=None, seed=None):
    """Run the network with the plant loop closed through it."""
    from .composition import simulate
    if assembly.plant is None:
        raise ConfigError("assembly has no plant section")
    return simulate(assembly, horizon=horizon, dt=dt, seed=seed)


def final_third_variance(trace) -> float:
    """Empirical variance of the plant state over the last third of a run."""
    x = trace.col("x_plant")
    n = len(x)
    return float(np.var(x[2 * n // 3:]))
