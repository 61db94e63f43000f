import numpy as np
import pytest

from wormsim import composition
from wormsim.composition import (DetectorConfig, OobAttack, SimParams,
                                 assemble, converged, simulate,
                                 total_link_laws)
from wormsim.config import load_config, parse_config
from wormsim.errors import ConfigError, InputError
from wormsim.flow import equilibrium_oracle
from wormsim.leash import LeashPolicy
from wormsim.links import sim_drop_profile
from wormsim.topology import LinkSpec, NetworkSpec, SourceSpec


def small_spec(kind9="oob_wormhole"):
    nodes = ("s", "a", "d")
    links = (LinkSpec("v1", ("s", "a"), capacity=3.0),
             LinkSpec("v2", ("a", "d"), capacity=3.0),
             LinkSpec("w", ("s", "d"), kind=kind9, capacity=5.0, alpha=2.0))
    src = SourceSpec("s", "d", 4.0, (("v1", "v2"), ("w",)))
    return NetworkSpec(nodes, links, (src,))


def test_assemble_rejects_leash_on_inband_link():
    spec = small_spec("ib_wormhole")
    with pytest.raises(ConfigError):
        assemble(spec, leash=LeashPolicy(skew_mean=1.0),
                 leash_links=["w"],
                 ib=None)


def test_assemble_rejects_detector_on_oob_link():
    spec = small_spec("oob_wormhole")
    with pytest.raises(ConfigError):
        assemble(spec, detector=DetectorConfig(), detector_links=["w"],
                 oob=OobAttack("w", "profile", sim_drop_profile))


def test_assemble_requires_attack_model_for_wormhole_links():
    with pytest.raises(ConfigError):
        assemble(small_spec("oob_wormhole"))
    with pytest.raises(ConfigError):
        assemble(small_spec("ib_wormhole"))


def test_assemble_rejects_attack_on_wrong_kind():
    spec = small_spec("oob_wormhole")
    with pytest.raises(ConfigError):
        assemble(spec, oob=OobAttack("v1", "profile", sim_drop_profile))


def test_all_valid_network_runs_without_mitigation_terms():
    nodes = ("s", "a", "d")
    links = (LinkSpec("v1", ("s", "a"), capacity=3.0),
             LinkSpec("v2", ("a", "d"), capacity=3.0),
             LinkSpec("v3", ("s", "d"), capacity=3.0))
    spec = NetworkSpec(nodes, links, (
        SourceSpec("s", "d", 4.0, (("v1", "v2"), ("v3",))),))
    asm = assemble(spec, params=SimParams(dt=0.01, horizon=20.0))
    tr = simulate(asm)
    for lid in ("v1", "v2", "v3"):
        assert np.all(tr.data[f"mit_{lid}"] == 0.0)
        assert np.all(tr.data[f"detect_{lid}"] == 0.0)
    assert np.all(tr.data["x_compromise"] == 0.0)


def test_zero_horizon_single_row():
    spec = small_spec()
    asm = assemble(spec, oob=OobAttack("w", "profile", sim_drop_profile),
                   params=SimParams(horizon=0.0))
    tr = simulate(asm)
    assert tr.n_rows == 1
    assert tr.data["t"][0] == 0.0


def test_converged_on_synthetic_traces():
    spec = small_spec()
    asm = assemble(spec, oob=OobAttack("w", "profile", sim_drop_profile),
                   params=SimParams(dt=0.01, horizon=5.0))
    tr = simulate(asm)
    flat = {c: np.ones(100) for c in tr.columns}
    flat_tr = composition.SimTrace(tr.columns, flat, 0.01)
    assert converged(flat_tr, 50, 1e-9)
    ramp = {c: np.linspace(0, 1, 100) for c in tr.columns}
    ramp_tr = composition.SimTrace(tr.columns, ramp, 0.01)
    assert not converged(ramp_tr, 50, 1e-9)
    with pytest.raises(InputError):
        converged(flat_tr, 1000, 1e-9)


def test_canonical_convergence_within_budget(run_fig5b):
    assert converged(run_fig5b.trace, 500,
                     run_fig5b.assembly.params.conv_tol)


def test_joint_assembly_has_both_branches(configs):
    cfg = load_config(configs["joint"])
    asm = cfg.assembly()
    assert asm.oob is not None and asm.ib is not None
    kinds = {l.id: l.kind for l in asm.spec.links}
    assert kinds["9"] == "oob_wormhole"
    assert kinds["10"] == "ib_wormhole"
    # leash covers valid + oob, detector covers valid + ib
    for j, link in enumerate(asm.spec.links):
        if link.kind == "oob_wormhole":
            assert asm.leash_mask[j] and not asm.detector_mask[j]
        if link.kind == "ib_wormhole":
            assert asm.detector_mask[j] and not asm.leash_mask[j]
        if link.kind == "valid":
            assert asm.leash_mask[j] and asm.detector_mask[j]


def test_mitigation_disabled_means_passthrough(run_fig5b):
    tr = run_fig5b.trace
    for lid in tr.meta["link_ids"]:
        assert np.all(tr.data[f"mit_{lid}"] == 0.0)


def test_trace_rows_feasible(run_fig5b):
    tr = run_fig5b.trace
    for i, total in enumerate(tr.meta["source_totals"]):
        mat = tr.rate_matrix(i)
        assert np.all(mat >= 0.0)
        assert np.abs(mat.sum(axis=1) - total).max() < 1e-9


def test_joint_removal_reproduces_all_valid_equilibrium(configs):
    """Dropping the wormholes from the joint scenario and re-running
    lands on the two-path equilibrium of the clean network."""
    cfg = load_config(configs["joint"])
    doc = dict(cfg.raw)
    doc = {k: v for k, v in doc.items() if k != "adversary"}
    doc["network"] = dict(doc["network"])
    doc["network"]["links"] = [
        l for l in doc["network"]["links"] if l["id"] not in ("9", "10")]
    doc["sources"] = [dict(s) for s in doc["sources"]]
    for s in doc["sources"]:
        keep = [p for p in s["paths"] if "9" not in p and "10" not in p]
        s["paths"] = keep
        alloc = s["initial_allocation"][: len(keep)]
        scale = s["rate"] / sum(alloc)
        s["initial_allocation"] = [a * scale for a in alloc]
    clean = parse_config(doc)
    asm = clean.assembly()
    tr = simulate(asm, horizon=60.0)
    p1 = tr.data["r_s1_p1"][-1] + tr.data["r_s2_p1"][-1]
    p2 = tr.data["r_s1_p2"][-1] + tr.data["r_s2_p2"][-1]
    res = equilibrium_oracle(asm.inc, total_link_laws(asm),
                             asm.source_totals)
    oracle_p1 = res.per_source[0][0] + res.per_source[1][0]
    oracle_p2 = res.per_source[0][1] + res.per_source[1][1]
    assert p1 == pytest.approx(oracle_p1, abs=1e-2)
    assert p2 == pytest.approx(oracle_p2, abs=1e-2)


def _random_inits(assembly, n, seed):
    rng = np.random.default_rng(seed)
    outs = []
    for _ in range(n):
        rates = []
        for src in assembly.spec.sources:
            w = rng.random(len(src.paths)) + 0.05
            rates.append(w / w.sum() * src.rate)
        outs.append(rates)
    return outs


def _final_totals(trace):
    n_paths = trace.meta["n_paths"]
    out = {}
    for i in range(len(n_paths)):
        for j in range(n_paths[i]):
            out[j] = out.get(j, 0.0) + trace.data[f"r_s{i+1}_p{j+1}"][-1]
    return out


@pytest.mark.parametrize("name,n_inits", [("fig6b", 5), ("joint", 2)])
def test_global_convergence_from_random_starts(configs, name, n_inits):
    """Detected-tunnel scenarios reach the same per-path totals from
    every feasible start."""
    cfg = load_config(configs[name])
    base = cfg.assembly()
    reference = _final_totals(composition.simulate(base, horizon=70.0))
    for init in _random_inits(base, n_inits, seed=55):
        asm = assemble(base.spec, initial_rates=init, leash=base.leash,
                       detector=base.detector, oob=base.oob, ib=base.ib,
                       params=base.params)
        totals = _final_totals(composition.simulate(asm, horizon=70.0))
        for j, v in reference.items():
            assert totals[j] == pytest.approx(v, abs=1e-2)


def test_timestamps_strictly_increasing(run_fig5b):
    t = run_fig5b.trace.data["t"]
    assert np.all(np.diff(t) > 0)
    assert np.allclose(np.diff(t), run_fig5b.trace.dt)


def test_detection_one_step_latency(run_fig6b):
    """The first penalized step comes strictly after the first firing
    belief update (flags latch for the following step)."""
    tr = run_fig6b.trace
    det = tr.data["detect_9"]
    assert det[0] == 0.0
    assert det.max() == 1.0
    first = int(np.argmax(det > 0))
    assert first > 0
    # once latched at equilibrium, the penalty persists
    assert np.all(det[-200:] == 1.0)


def test_events_recorded_for_saturation(configs):
    cfg = load_config(configs["fig7c"])
    asm = cfg.assembly()
    tr = simulate(asm, horizon=2.0)
    assert any("saturation" in e for e in tr.events)
