"""Negative-feedback interconnection of flow allocation, delays, mitigation.

The simulation loop evaluates, per step: link rates through the incidence
map, each link's base delay by kind (queueing law, out-of-band tunnel,
in-band tunnel), mitigation terms (leash retransmission delay on valid and
out-of-band links, detection penalties on valid and in-band links), sums
them into path prices, and advances the flow allocation one Euler step
against those prices. Capture-fraction dynamics, detector beliefs, and an
optional sampled-data plant advance on the same clock.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .detection import DetectorState, detect, penalty_term, sample_observed_delay
from .errors import ConfigError, InputError, SaturationError
from .flow import FlowState, path_delays, wardrop_step
from .inband import BetaCurve, CompromiseState, compromise_step
from .leash import LeashPolicy, leash_added_delay, leash_drop_prob
from .links import OobWormholeLaw, ValidLinkLaw, mm1k_drop
from .topology import (IB_WORMHOLE, OOB_WORMHOLE, VALID, IncidenceMatrix,
                       NetworkSpec, build_incidence)


@dataclass
class OobAttack:
    """Out-of-band wormhole behaviour on one link.

    mode "profile": a fixed dropping-rate profile of the link rate.
    mode "threshold": low-latency bait until the flow crosses a threshold,
    then high-probability dropping; sources perceive the inflated delay
    only after the retransmission timescale (observe_lag), since a delay
    can only be observed by packets that have suffered it.
    """

    link_id: str
    mode: str = "profile"
    profile: Optional[Callable] = None
    policy: Optional[object] = None  # plant.AdversaryPolicy


@dataclass
class IbAttack:
    """In-band wormhole behaviour on one link.

    mode "beta": tunnel delay is the expected collapse-safe tunnel length
    (a curve in the capture fraction x) times a one-hop delay law, with x
    following gradient-ascent capture dynamics.
    mode "reroute": tunneled traffic is pushed back onto two legitimate
    paths with split lam, and the path's perceived delay is the matching
    convex combination of those paths' delays.
    """

    link_id: str
    mode: str = "reroute"
    lam: float = 0.3
    reroute_paths: tuple = (0, 1)
    curve: Optional[BetaCurve] = None
    compromise: Optional[CompromiseState] = None


@dataclass
class DetectorConfig:
    penalty: float = 10.0
    threshold: float = 0.55
    ema_rate: float = 0.01


@dataclass
class SimParams:
    dt: float = 0.01
    horizon: float = 100.0
    seed: int = 0
    conv_window: int = 500
    conv_tol: float = 1e-4
    delay_ceiling: float = 1e3


@dataclass
class PlantSetup:
    config: object   # plant.PlantConfig
    policy: object   # plant.AdversaryPolicy


@dataclass
class SystemAssembly:
    """Everything simulate() needs, validated against the branch rules."""

    spec: NetworkSpec
    inc: IncidenceMatrix
    base_laws: list
    leash: Optional[LeashPolicy]
    leash_mask: np.ndarray
    detector: Optional[DetectorConfig]
    detector_mask: np.ndarray
    oob: Optional[OobAttack]
    ib: Optional[IbAttack]
    initial_rates: list
    params: SimParams
    plant: Optional[PlantSetup] = None

    @property
    def source_totals(self):
        return [s.rate for s in self.spec.sources]


def assemble(spec: NetworkSpec, initial_rates=None,
             leash: Optional[LeashPolicy] = None,
             leash_links=None,
             detector: Optional[DetectorConfig] = None,
             detector_links=None,
             oob: Optional[OobAttack] = None,
             ib: Optional[IbAttack] = None,
             params: Optional[SimParams] = None,
             plant: Optional[PlantSetup] = None) -> SystemAssembly:
    """Wire the per-link model and mitigation branches.

    Leash applies to valid and out-of-band links; the detector to valid
    and in-band links. Explicit link lists crossing those rules are
    configuration errors: a timing leash cannot bind colluders who forge
    timestamps, and delay statistics cannot catch a tunnel that
    manipulates its own delay.
    """
    inc = build_incidence(spec)
    kinds = [l.kind for l in spec.links]
    by_id = {l.id: k for k, l in enumerate(spec.links)}

    if oob is not None:
        if oob.link_id not in by_id:
            raise ConfigError(f"oob attack on unknown link {oob.link_id}")
        if kinds[by_id[oob.link_id]] != OOB_WORMHOLE:
            raise ConfigError(
                f"oob attack link {oob.link_id} is not kind oob_wormhole")
        if oob.mode not in ("profile", "threshold"):
            raise ConfigError(f"unknown oob mode {oob.mode!r}")
    if ib is not None:
        if ib.link_id not in by_id:
            raise ConfigError(f"ib attack on unknown link {ib.link_id}")
        if kinds[by_id[ib.link_id]] != IB_WORMHOLE:
            raise ConfigError(
                f"ib attack link {ib.link_id} is not kind ib_wormhole")
        if ib.mode not in ("reroute", "beta"):
            raise ConfigError(f"unknown ib mode {ib.mode!r}")
        if ib.mode == "beta" and (ib.curve is None or ib.compromise is None):
            raise ConfigError("ib beta mode needs a tunnel-length curve "
                              "and a compromise state")
    for kind, l in zip(kinds, spec.links):
        if kind == OOB_WORMHOLE and (oob is None or oob.link_id != l.id):
            raise ConfigError(f"oob link {l.id} has no attack model")
        if kind == IB_WORMHOLE and (ib is None or ib.link_id != l.id):
            raise ConfigError(f"ib link {l.id} has no attack model")

    def default_mask(allowed):
        return np.array([k in allowed for k in kinds])

    if leash is None:
        leash_mask = np.zeros(len(kinds), bool)
    elif leash_links is None:
        leash_mask = default_mask((VALID, OOB_WORMHOLE))
    else:
        leash_mask = np.zeros(len(kinds), bool)
        for lid in leash_links:
            idx = by_id.get(lid)
            if idx is None:
                raise ConfigError(f"leash on unknown link {lid}")
            if kinds[idx] == IB_WORMHOLE:
                raise ConfigError(
                    f"leash assigned to in-band link {lid}: colluding nodes "
                    "re-sign timestamps, timing leashes cannot apply")
            leash_mask[idx] = True

    if detector is None:
        detector_mask = np.zeros(len(kinds), bool)
    elif detector_links is None:
        detector_mask = default_mask((VALID, IB_WORMHOLE))
    else:
        detector_mask = np.zeros(len(kinds), bool)
        for lid in detector_links:
            idx = by_id.get(lid)
            if idx is None:
                raise ConfigError(f"detector on unknown link {lid}")
            if kinds[idx] == OOB_WORMHOLE:
                raise ConfigError(
                    f"detector assigned to out-of-band link {lid}: the "
                    "side channel controls its delays, statistics on them "
                    "cannot apply")
            detector_mask[idx] = True

    base_laws = []
    for link in spec.links:
        if link.kind == VALID:
            base_laws.append(ValidLinkLaw(link.capacity, link.alpha,
                                          link.queue_capacity))
        elif link.kind == OOB_WORMHOLE:
            if oob.mode == "profile":
                base_laws.append(OobWormholeLaw(link.alpha, oob.profile))
            else:
                base_laws.append(None)  # threshold mode, stateful
        else:  # in-band: one-hop law of the true tunnel
            cap = link.tunnel_capacity or link.capacity
            base_laws.append(ValidLinkLaw(cap, link.alpha,
                                          link.queue_capacity))

    if initial_rates is None:
        initial_rates = [np.full(len(s.paths), s.rate / len(s.paths))
                         for s in spec.sources]
    rates = []
    for src, r0 in zip(spec.sources, initial_rates):
        r0 = np.asarray(r0, dtype=float)
        if r0.shape != (len(src.paths),):
            raise ConfigError(
                f"source {src.node}: initial allocation needs "
                f"{len(src.paths)} entries")
        if np.any(r0 < 0) or abs(r0.sum() - src.rate) > 1e-6:
            raise ConfigError(
                f"source {src.node}: initial allocation must be feasible")
        rates.append(r0 * (src.rate / r0.sum()))

    return SystemAssembly(spec, inc, base_laws, leash, leash_mask,
                          detector, detector_mask, oob, ib, rates,
                          params or SimParams(), plant)


@dataclass
class SimTrace:
    """Time-indexed record of one run, column-oriented."""

    columns: list
    data: dict
    dt: float
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.data["t"])

    def col(self, name: str) -> np.ndarray:
        return self.data[name]

    def rate_matrix(self, i: int) -> np.ndarray:
        names = [c for c in self.columns if c.startswith(f"r_s{i + 1}_p")]
        return np.column_stack([self.data[c] for c in names])

    def delay_matrix(self, i: int) -> np.ndarray:
        names = [c for c in self.columns if c.startswith(f"q_s{i + 1}_p")]
        return np.column_stack([self.data[c] for c in names])


def _advertised_law(link) -> ValidLinkLaw:
    return ValidLinkLaw(link.capacity, link.alpha, link.queue_capacity)


def simulate(assembly: SystemAssembly, horizon: Optional[float] = None,
             dt: Optional[float] = None,
             seed: Optional[int] = None) -> SimTrace:
    """Run the interconnected system and record every step."""
    p = assembly.params
    T = p.horizon if horizon is None else horizon
    step = p.dt if dt is None else dt
    rng_seed = p.seed if seed is None else seed
    if T < 0 or step <= 0:
        raise InputError("need horizon >= 0 and dt > 0")

    spec, inc = assembly.spec, assembly.inc
    links = spec.links
    L = len(links)
    n_steps = int(round(T / step))
    n_rows = n_steps + 1
    kinds = [l.kind for l in links]
    lids = [l.id for l in links]
    totals = assembly.source_totals
    events: list = []

    oob_idx = inc.link_index[assembly.oob.link_id] if assembly.oob else -1
    ib_idx = inc.link_index[assembly.ib.link_id] if assembly.ib else -1
    threshold_mode = assembly.oob is not None and assembly.oob.mode == "threshold"
    reroute = assembly.ib is not None and assembly.ib.mode == "reroute"
    beta_mode = assembly.ib is not None and assembly.ib.mode == "beta"

    if reroute:
        # column indices (within source 0) of the two relief paths
        pa, pb = assembly.ib.reroute_paths
        sl0 = inc.col_slices[0]
        path_a_links = np.nonzero(inc.matrix[:, sl0.start + pa])[0]
        path_b_links = np.nonzero(inc.matrix[:, sl0.start + pb])[0]
        lam = assembly.ib.lam

    detector_state = None
    det_rngs = {}
    if assembly.detector is not None:
        monitored = [lids[k] for k in range(L) if assembly.detector_mask[k]]
        detector_state = DetectorState(tuple(monitored),
                                       assembly.detector.penalty,
                                       assembly.detector.threshold,
                                       assembly.detector.ema_rate)
        det_rngs = {lid: np.random.default_rng((rng_seed, 100 + k))
                    for k, lid in enumerate(lids)
                    if assembly.detector_mask[k]}

    plant_on = assembly.plant is not None
    if plant_on:
        pc = assembly.plant.config
        policy = assembly.plant.policy
        steps_per_sample = int(round(pc.h / step))
        if steps_per_sample < 1 or abs(pc.h - steps_per_sample * step) > 1e-9:
            raise ConfigError("network dt must divide the sampling period")
        src_idx = next(i for i, s in enumerate(spec.sources)
                       if s.node == pc.source)
        worm_paths = set()
        if oob_idx >= 0:
            sl = inc.col_slices[src_idx]
            for j in range(sl.stop - sl.start):
                if inc.matrix[oob_idx, sl.start + j]:
                    worm_paths.add(j)
        rng_noise = np.random.default_rng((rng_seed, 1))
        rng_path = np.random.default_rng((rng_seed, 2))
        rng_drop = np.random.default_rng((rng_seed, 3))
        x_plant = pc.x0
        u_active = 0.0
        last_tau = 0.0
        last_dropped = False
        pending: list = []

    mode_drop = False
    mode_entry = 0.0
    x_comp = assembly.ib.compromise.x if beta_mode else 0.0
    comp_state = assembly.ib.compromise if beta_mode else None

    state = FlowState(0.0, [r.copy() for r in assembly.initial_rates])

    cols = ["t"]
    for i, src in enumerate(spec.sources):
        cols += [f"r_s{i + 1}_p{j + 1}" for j in range(len(src.paths))]
    for i, src in enumerate(spec.sources):
        cols += [f"q_s{i + 1}_p{j + 1}" for j in range(len(src.paths))]
    cols += [f"rl_{lid}" for lid in lids]
    cols += [f"delay_{lid}" for lid in lids]
    cols += [f"mit_{lid}" for lid in lids]
    cols += [f"drop_{lid}" for lid in lids]
    cols += [f"detect_{lid}" for lid in lids]
    cols += ["x_compromise"]
    if plant_on:
        cols += ["x_plant", "u", "tau", "dropped"]
    data = {c: np.zeros(n_rows) for c in cols}

    ceiling = p.delay_ceiling
    adv_laws = [_advertised_law(l) for l in links]
    # links on no path never carry flow; their delay is a constant
    active = inc.matrix.sum(axis=1) > 0
    idle_base = np.zeros(L)
    idle_drop = np.zeros(L)
    for j, link in enumerate(links):
        if not active[j] and kinds[j] == VALID:
            idle_base[j] = link.alpha
            idle_drop[j] = 0.0

    for k in range(n_rows):
        t = k * step
        r_concat = state.concat()
        z = inc.matrix @ r_concat
        z_eff = z.copy()
        if reroute:
            z_eff[path_a_links] += lam * z[ib_idx]
            z_eff[path_b_links] += (1.0 - lam) * z[ib_idx]

        if threshold_mode:
            flow9 = z[oob_idx]
            if mode_drop:
                if flow9 < assembly.oob.policy.flow_threshold:
                    mode_drop = False
            elif flow9 > assembly.oob.policy.flow_threshold:
                mode_drop = True
                mode_entry = t

        base = np.zeros(L)       # physical base delay
        perceived = np.zeros(L)  # what the flow dynamics see
        drop = np.zeros(L)
        for j, link in enumerate(links):
            kind = kinds[j]
            if not active[j] and kind == VALID:
                base[j] = perceived[j] = idle_base[j]
                drop[j] = idle_drop[j]
                continue
            if kind == VALID:
                pd = mm1k_drop(z_eff[j] / link.capacity, link.queue_capacity)
                base[j] = link.alpha / (1.0 - pd)
                perceived[j] = base[j]
                drop[j] = pd
            elif kind == OOB_WORMHOLE:
                if threshold_mode:
                    pol = assembly.oob.policy
                    if mode_drop:
                        base[j] = pol.low_latency_delay / (1.0 - pol.drop_prob)
                        lagged = (t - mode_entry) < pol.observe_lag
                        perceived[j] = (pol.low_latency_delay if lagged
                                        else base[j])
                        drop[j] = pol.drop_prob
                    else:
                        base[j] = perceived[j] = pol.low_latency_delay
                        drop[j] = 0.0
                else:
                    phi = float(assembly.oob.profile(z_eff[j]))
                    drop[j] = phi
                    if phi >= 1.0:
                        base[j] = ceiling
                        events.append(f"t={t:.6g} saturation link {link.id}")
                    else:
                        base[j] = link.alpha / (1.0 - phi)
                    perceived[j] = base[j]
            else:  # in-band
                if beta_mode:
                    base[j] = (assembly.ib.curve.value(x_comp)
                               * float(assembly.base_laws[j](z_eff[j])))
                else:
                    base[j] = 0.0  # filled from relief paths below
                perceived[j] = base[j]
                drop[j] = mm1k_drop(z_eff[j] / link.capacity,
                                    link.queue_capacity)

        mit_leash = np.zeros(L)
        if assembly.leash is not None:
            for j, link in enumerate(links):
                if not assembly.leash_mask[j]:
                    continue
                kind_tag = "valid" if kinds[j] == VALID else "wormhole"
                p_leash = leash_drop_prob(kind_tag, z_eff[j], assembly.leash,
                                          link.alpha, link.slack)
                try:
                    mit_leash[j] = leash_added_delay(z_eff[j], p_leash,
                                                     base[j])
                except SaturationError:
                    mit_leash[j] = ceiling - base[j]
                    events.append(
                        f"t={t:.6g} leash saturation link {link.id}")

        physical = np.minimum(base + mit_leash, ceiling)
        if reroute:
            qa = physical[path_a_links].sum()
            qb = physical[path_b_links].sum()
            combo = lam * qa + (1.0 - lam) * qb
            base[ib_idx] = combo
            perceived[ib_idx] = combo
            physical[ib_idx] = min(combo, ceiling)

        pen = np.zeros(L)
        if detector_state is not None:
            for j in range(L):
                if assembly.detector_mask[j]:
                    pen[j] = penalty_term(detector_state, lids[j])

        price = np.minimum(perceived + mit_leash, ceiling) + pen
        q = path_delays(inc, price)

        row = data
        row["t"][k] = t
        for i in range(len(spec.sources)):
            for j, val in enumerate(state.rates[i]):
                row[f"r_s{i + 1}_p{j + 1}"][k] = val
        for i in range(len(spec.sources)):
            for j, val in enumerate(q.q[i]):
                row[f"q_s{i + 1}_p{j + 1}"][k] = val
        for j, lid in enumerate(lids):
            row[f"rl_{lid}"][k] = z[j]
            row[f"delay_{lid}"][k] = base[j]
            row[f"mit_{lid}"][k] = mit_leash[j] + pen[j]
            row[f"drop_{lid}"][k] = drop[j]
            row[f"detect_{lid}"][k] = (1.0 if detector_state is not None
                                       and detector_state.detected.get(lids[j],
                                                                       False)
                                       else 0.0)
        row["x_compromise"][k] = x_comp
        if plant_on:
            row["x_plant"][k] = x_plant
            row["u"][k] = u_active
            row["tau"][k] = last_tau
            row["dropped"][k] = 1.0 if last_dropped else 0.0

        if detector_state is not None:
            for j in range(L):
                if not assembly.detector_mask[j]:
                    continue
                lid = lids[j]
                true_mean = max(physical[j], 1e-12)
                observed = sample_observed_delay(det_rngs[lid], true_mean)
                expected = float(adv_laws[j](z_eff[j])) + (
                    mit_leash[j] if assembly.leash_mask[j] else 0.0)
                detector_state.update(lid, detect(observed, expected))

        if k == n_steps:
            break

        if plant_on:
            if k % steps_per_sample == 0:
                share = state.rates[src_idx] / totals[src_idx]
                q_phys = path_delays(inc, physical)
                p_idx = int(rng_path.choice(len(share), p=share))
                last_tau = float(q_phys.q[src_idx][p_idx])
                last_dropped = False
                if p_idx in worm_paths and mode_drop:
                    last_dropped = bool(rng_drop.random()
                                        < assembly.plant.policy.drop_prob)
                if last_dropped:
                    events.append(f"t={t:.6g} control packet dropped")
                else:
                    if last_tau >= pc.h:
                        events.append(
                            f"t={t:.6g} timing violation tau={last_tau:.6g}")
                    insort(pending, (t + last_tau, -pc.gain * x_plant))
            while pending and pending[0][0] <= t:
                u_active = pending.pop(0)[1]
            x_plant += u_active * step + (
                pc.noise_std * math.sqrt(step) * rng_noise.standard_normal())

        state = wardrop_step(state, q, totals, step)
        if beta_mode:
            slope = assembly.ib.curve.slope(x_comp)
            comp_state = compromise_step(comp_state, slope, step)
            x_comp = comp_state.x

    meta = {
        "link_ids": lids,
        "kinds": kinds,
        "n_paths": [len(s.paths) for s in spec.sources],
        "source_totals": totals,
        "penalty": assembly.detector.penalty if assembly.detector else 0.0,
        "seed": rng_seed,
        "horizon": T,
    }
    return SimTrace(cols, data, step, events, meta)


def converged(trace: SimTrace, window: int, tol: float) -> bool:
    """Max rate change over the trailing window below tol."""
    if window > trace.n_rows - 1:
        raise InputError("window exceeds trace length")
    if window < 1:
        raise InputError("window must be >= 1")
    rate_cols = [c for c in trace.columns if c.startswith("r_s")]
    worst = 0.0
    for c in rate_cols:
        tail = trace.data[c][-(window + 1):]
        if len(tail) > 1:
            worst = max(worst, float(np.abs(np.diff(tail)).max()))
    return worst < tol


class _TotalLaw:
    """Static total delay law of one link: base plus leash component.

    Saturated leash drops are capped at the same delay ceiling the
    simulator applies, keeping the law finite (and flat) past saturation.
    """

    def __init__(self, base_law, leash_policy, alpha, slack, kind_tag,
                 scale=1.0, ceiling=1e3):
        self.base_law = base_law
        self.leash_policy = leash_policy
        self.alpha = alpha
        self.slack = slack
        self.kind_tag = kind_tag
        self.scale = scale
        self.ceiling = ceiling

    def __call__(self, z):
        arr = np.atleast_1d(np.asarray(z, dtype=float))
        base = self.scale * np.atleast_1d(np.asarray(self.base_law(arr),
                                                     dtype=float))
        if self.leash_policy is None:
            out = np.minimum(base, self.ceiling)
        else:
            out = np.empty_like(base)
            for i, (zz, bb) in enumerate(zip(arr, base)):
                p = leash_drop_prob(self.kind_tag, zz, self.leash_policy,
                                    self.alpha, self.slack)
                total = self.ceiling if p >= 1.0 else bb / (1.0 - p)
                out[i] = min(total, self.ceiling)
        return out if np.ndim(z) else float(out[0])


def total_link_laws(assembly: SystemAssembly, x_comp: float = None) -> list:
    """Static per-link total delay laws (base plus leash), for the oracle.

    Time-varying branches (threshold-mode tunnel, reroute mode) have no
    static law and raise; a capture-fraction tunnel is frozen at the given
    x (defaults to the ascent fixed point of its curve).
    """
    laws = []
    for j, link in enumerate(assembly.spec.links):
        if link.kind == OOB_WORMHOLE and assembly.oob.mode != "profile":
            raise ConfigError("threshold-mode tunnel has no static law")
        scale = 1.0
        if link.kind == IB_WORMHOLE:
            if assembly.ib.mode != "beta":
                raise ConfigError("reroute-mode tunnel has no static law")
            x = x_comp if x_comp is not None else compromise_fixed_point(
                assembly.ib.curve, assembly.ib.compromise)
            scale = assembly.ib.curve.value(x)
        policy = assembly.leash if assembly.leash_mask[j] else None
        kind_tag = "valid" if link.kind == VALID else "wormhole"
        laws.append(_TotalLaw(assembly.base_laws[j], policy, link.alpha,
                              link.slack, kind_tag, scale,
                              assembly.params.delay_ceiling))
    return laws


def compromise_fixed_point(curve, comp: CompromiseState,
                           dt: float = 0.01, max_steps: int = 200000) -> float:
    """Run the capture-fraction ascent to stationarity."""
    state = comp
    for _ in range(max_steps):
        nxt = compromise_step(state, curve.slope(state.x), dt)
        if abs(nxt.x - state.x) < 1e-12:
            return nxt.x
        state = nxt
    return state.x


def physical_link_delays(trace: SimTrace, row: int) -> np.ndarray:
    """Base delay plus leash component (mitigation minus penalty)."""
    lids = trace.meta["link_ids"]
    K = trace.meta["penalty"]
    out = np.zeros(len(lids))
    for j, lid in enumerate(lids):
        penalty = K * trace.data[f"detect_{lid}"][row]
        out[j] = (trace.data[f"delay_{lid}"][row]
                  + trace.data[f"mit_{lid}"][row] - penalty)
    return out


def average_source_delay(trace: SimTrace, inc: IncidenceMatrix,
                         source_idx: int) -> float:
    """Time-averaged flow-weighted physical delay seen by one source."""
    lids = trace.meta["link_ids"]
    K = trace.meta["penalty"]
    phys = np.column_stack([
        trace.data[f"delay_{lid}"]
        + trace.data[f"mit_{lid}"] - K * trace.data[f"detect_{lid}"]
        for lid in lids
    ])
    sl = inc.col_slices[source_idx]
    q_paths = phys @ inc.matrix[:, sl]
    rates = trace.rate_matrix(source_idx)
    total = trace.meta["source_totals"][source_idx]
    per_row = (rates * q_paths).sum(axis=1) / total
    return float(per_row.mean())
