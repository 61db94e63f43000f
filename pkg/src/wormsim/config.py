"""Scenario configuration: TOML schema, validation, assembly construction.

The file format is TOML (nesting and comments come for free). Every key
is validated against a fixed schema and unknown keys are rejected with
their full path, so typos fail loudly before a run starts.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .composition import (DetectorConfig, IbAttack, OobAttack, PlantSetup,
                          SimParams, SystemAssembly, assemble)
from .errors import ConfigError
from .inband import CompromiseState, estimate_beta_curve
from .leash import LeashPolicy
from .links import delta_margin, optimal_drop_rate, sim_drop_profile
from .plant import AdversaryPolicy, PlantConfig
from .topology import LinkSpec, NetworkSpec, SourceSpec

_SCHEMA = {
    "meta": {"figure": str, "note": str},
    "network": {
        "zeta": (int, float),
        "nodes": list,
        "links": list,
    },
    "network.links[]": {
        "id": str, "ends": list, "kind": str,
        "capacity": (int, float), "alpha": (int, float),
        "queue_capacity": int, "slack": (int, float),
        "tunnel_capacity": (int, float),
    },
    "sources[]": {
        "node": str, "dest": str, "rate": (int, float),
        "paths": list, "initial_allocation": list,
    },
    "adversary.oob": {
        "link": str, "mode": str, "profile": (str, int, float),
        "low_latency_delay": (int, float), "flow_threshold": (int, float),
        "drop_prob": (int, float),
        "w1": str, "w2": str, "eps": (int, float),
        "ua_coeff": (int, float),
    },
    "adversary.ib": {
        "link": str, "mode": str, "lam": (int, float),
        "reroute_paths": list,
        "w1": str, "w2": str, "cost_rate": (int, float),
        "x0": (int, float), "trials": int, "x_grid": list,
        "fallback": (int, float), "beta_seed": int,
    },
    "mitigation.leash": {
        "skew_mean": (int, float), "dmax": (str, int, float),
        "ref_alpha": (int, float), "links": list,
    },
    "mitigation.detector": {
        "penalty": (int, float), "threshold": (int, float),
        "ema": (int, float), "links": list,
    },
    "sim": {
        "dt": (int, float), "horizon": (int, float), "seed": int,
        "convergence_window": int, "convergence_tol": (int, float),
        "delay_ceiling": (int, float),
    },
    "plant": {
        "h": (int, float), "gain": (int, float),
        "noise_std": (int, float), "x0": (int, float), "source": str,
    },
}


def _check_keys(table: dict, schema_key: str, path: str):
    allowed = _SCHEMA[schema_key]
    for key, val in table.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}.{key}")
        expected = allowed[key]
        if expected is list:
            if not isinstance(val, list):
                raise ConfigError(f"{path}.{key}: expected a list")
        elif not isinstance(val, expected if isinstance(expected, tuple)
                            else (expected,)):
            raise ConfigError(f"{path}.{key}: wrong type {type(val).__name__}")


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"missing config key: {path}.{key}")
    return table[key]


@dataclass
class ScenarioConfig:
    """Validated scenario, ready to assemble."""

    spec: NetworkSpec
    initial_rates: list
    leash: Optional[LeashPolicy]
    leash_links: Optional[list]
    detector: Optional[DetectorConfig]
    detector_links: Optional[list]
    oob: Optional[OobAttack]
    ib: Optional[IbAttack]
    params: SimParams
    plant: Optional[PlantSetup]
    raw: dict

    def assembly(self) -> SystemAssembly:
        return assemble(self.spec, self.initial_rates, self.leash,
                        self.leash_links, self.detector, self.detector_links,
                        self.oob, self.ib, self.params, self.plant)


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc)


def parse_config(doc: dict) -> ScenarioConfig:
    for key in doc:
        if key not in ("meta", "network", "sources", "adversary",
                       "mitigation", "sim", "plant"):
            raise ConfigError(f"unknown config key: {key}")
    if "meta" in doc:
        _check_keys(doc["meta"], "meta", "meta")

    net = _require(doc, "network", "")
    _check_keys(net, "network", "network")
    nodes = tuple(str(n) for n in _require(net, "nodes", "network"))
    links = []
    for i, tbl in enumerate(_require(net, "links", "network")):
        p = f"network.links[{i}]"
        _check_keys(tbl, "network.links[]", p)
        ends = _require(tbl, "ends", p)
        if len(ends) != 2:
            raise ConfigError(f"{p}.ends: need exactly two nodes")
        links.append(LinkSpec(
            id=str(_require(tbl, "id", p)),
            ends=(str(ends[0]), str(ends[1])),
            kind=tbl.get("kind", "valid"),
            capacity=float(_require(tbl, "capacity", p)),
            alpha=float(_require(tbl, "alpha", p)),
            queue_capacity=int(tbl.get("queue_capacity", 5)),
            slack=float(tbl.get("slack", 0.0)),
            tunnel_capacity=(float(tbl["tunnel_capacity"])
                             if "tunnel_capacity" in tbl else None),
        ))

    sources = []
    initial = []
    for i, tbl in enumerate(_require(doc, "sources", "")):
        p = f"sources[{i}]"
        _check_keys(tbl, "sources[]", p)
        paths = tuple(
            tuple(str(l) for l in path)
            for path in _require(tbl, "paths", p))
        src = SourceSpec(str(_require(tbl, "node", p)),
                         str(_require(tbl, "dest", p)),
                         float(_require(tbl, "rate", p)), paths)
        sources.append(src)
        if "initial_allocation" in tbl:
            initial.append(np.array([float(v)
                                     for v in tbl["initial_allocation"]]))
        else:
            initial.append(np.full(len(paths), src.rate / len(paths)))

    spec = NetworkSpec(nodes, tuple(links), tuple(sources),
                       zeta=float(net.get("zeta", 1.0)))

    adv = doc.get("adversary", {})
    for key in adv:
        if key not in ("oob", "ib"):
            raise ConfigError(f"unknown config key: adversary.{key}")
    oob = _parse_oob(adv.get("oob"), spec)
    ib = _parse_ib(adv.get("ib"), spec)

    mit = doc.get("mitigation", {})
    for key in mit:
        if key not in ("leash", "detector"):
            raise ConfigError(f"unknown config key: mitigation.{key}")
    leash, leash_links = _parse_leash(mit.get("leash"))
    detector, detector_links = _parse_detector(mit.get("detector"))

    sim_tbl = doc.get("sim", {})
    _check_keys(sim_tbl, "sim", "sim")
    params = SimParams(
        dt=float(sim_tbl.get("dt", 0.01)),
        horizon=float(sim_tbl.get("horizon", 100.0)),
        seed=int(sim_tbl.get("seed", 0)),
        conv_window=int(sim_tbl.get("convergence_window", 500)),
        conv_tol=float(sim_tbl.get("convergence_tol", 1e-4)),
        delay_ceiling=float(sim_tbl.get("delay_ceiling", 1e3)),
    )
    if params.dt <= 0 or params.horizon < 0:
        raise ConfigError("sim.dt must be > 0 and sim.horizon >= 0")

    plant = None
    if "plant" in doc:
        _check_keys(doc["plant"], "plant", "plant")
        tbl = doc["plant"]
        if oob is None or oob.policy is None:
            raise ConfigError(
                "plant section requires adversary.oob mode = 'threshold'")
        plant = PlantSetup(
            PlantConfig(h=float(tbl.get("h", 0.3)),
                        gain=float(tbl.get("gain", 2.0)),
                        noise_std=float(tbl.get("noise_std", 1.0)),
                        x0=float(tbl.get("x0", 1.0)),
                        source=str(tbl.get("source", sources[0].node))),
            oob.policy)
        if plant.config.source not in {s.node for s in sources}:
            raise ConfigError(f"plant.source {plant.config.source} "
                              "is not a source node")

    return ScenarioConfig(spec, initial, leash, leash_links, detector,
                          detector_links, oob, ib, params, plant, doc)


def _parse_oob(tbl, spec) -> Optional[OobAttack]:
    if tbl is None:
        return None
    _check_keys(tbl, "adversary.oob", "adversary.oob")
    link = str(_require(tbl, "link", "adversary.oob"))
    mode = tbl.get("mode", "profile")
    if mode == "threshold":
        policy = AdversaryPolicy(
            low_latency_delay=float(tbl.get("low_latency_delay", 0.1)),
            flow_threshold=float(tbl.get("flow_threshold", 5.0)),
            drop_prob=float(tbl.get("drop_prob", 0.9)))
        return OobAttack(link, "threshold", None, policy)
    if mode == "prop4":
        # enumerate the optimal dropping rate from topology-derived margins
        w1 = str(_require(tbl, "w1", "adversary.oob"))
        w2 = str(_require(tbl, "w2", "adversary.oob"))
        alpha = spec.link(link).alpha
        ua_coeff = float(tbl.get("ua_coeff", 0.0))
        margins = []
        for src in spec.sources:
            margins.append((delta_margin(spec, src.node, src.dest, w1, w2),
                            src.rate))
        margins.sort(key=lambda mr: -mr[0])
        plan = optimal_drop_rate([m for m, _ in margins],
                                 [r for _, r in margins], alpha,
                                 u_a=(lambda f: ua_coeff * f),
                                 eps=float(tbl.get("eps", 0.01)))
        phi = plan.phi_star
        return OobAttack(link, "profile", lambda r: phi, None)
    if mode != "profile":
        raise ConfigError(f"adversary.oob.mode: unknown mode {mode!r}")
    prof = tbl.get("profile", "unit_reciprocal")
    if prof == "unit_reciprocal":
        profile = sim_drop_profile
    elif prof == "none":
        profile = lambda r: 0.0
    elif isinstance(prof, (int, float)):
        if not 0 <= prof < 1:
            raise ConfigError("adversary.oob.profile: constant must be "
                              "in [0, 1)")
        phi0 = float(prof)
        profile = lambda r: phi0
    else:
        raise ConfigError(f"adversary.oob.profile: unknown {prof!r}")
    return OobAttack(link, "profile", profile, None)


def _parse_ib(tbl, spec) -> Optional[IbAttack]:
    if tbl is None:
        return None
    _check_keys(tbl, "adversary.ib", "adversary.ib")
    link = str(_require(tbl, "link", "adversary.ib"))
    mode = tbl.get("mode", "reroute")
    if mode == "reroute":
        lam = float(tbl.get("lam", 0.3))
        if not 0 <= lam <= 1:
            raise ConfigError("adversary.ib.lam must be in [0, 1]")
        rp = tbl.get("reroute_paths", [0, 1])
        if len(rp) != 2:
            raise ConfigError("adversary.ib.reroute_paths: need two indices")
        return IbAttack(link, "reroute", lam, (int(rp[0]), int(rp[1])))
    if mode != "beta":
        raise ConfigError(f"adversary.ib.mode: unknown mode {mode!r}")
    w1 = str(_require(tbl, "w1", "adversary.ib"))
    w2 = str(_require(tbl, "w2", "adversary.ib"))
    xs = [float(v) for v in tbl.get(
        "x_grid", [0.2, 0.4, 0.6, 0.8, 1.0])]
    curve = estimate_beta_curve(
        spec, w1, w2, xs, trials=int(tbl.get("trials", 400)),
        seed=int(tbl.get("beta_seed", 12345)),
        fallback=(float(tbl["fallback"]) if "fallback" in tbl else None))
    comp = CompromiseState(float(tbl.get("x0", min(xs))),
                           float(tbl.get("cost_rate", 2.0)), w1, w2)
    return IbAttack(link, "beta", curve=curve, compromise=comp)


def _parse_leash(tbl):
    if tbl is None:
        return None, None
    _check_keys(tbl, "mitigation.leash", "mitigation.leash")
    dmax = tbl.get("dmax", "adaptive")
    if dmax == "adaptive":
        policy = LeashPolicy(skew_mean=float(_require(tbl, "skew_mean",
                                                      "mitigation.leash")),
                             adaptive=True,
                             ref_alpha=float(tbl.get("ref_alpha", 2.0)))
    elif isinstance(dmax, (int, float)):
        policy = LeashPolicy(skew_mean=float(_require(tbl, "skew_mean",
                                                      "mitigation.leash")),
                             adaptive=False, dmax_const=float(dmax))
    else:
        raise ConfigError("mitigation.leash.dmax: 'adaptive' or a number")
    links = tbl.get("links")
    return policy, ([str(l) for l in links] if links is not None else None)


def _parse_detector(tbl):
    if tbl is None:
        return None, None
    _check_keys(tbl, "mitigation.detector", "mitigation.detector")
    det = DetectorConfig(penalty=float(tbl.get("penalty", 10.0)),
                         threshold=float(tbl.get("threshold", 0.55)),
                         ema_rate=float(tbl.get("ema", 0.01)))
    links = tbl.get("links")
    return det, ([str(l) for l in links] if links is not None else None)
