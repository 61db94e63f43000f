import math

import numpy as np
import pytest

from wormsim.config import load_config
from wormsim.errors import ConfigError, InputError
from wormsim.plant import (AdversaryPolicy, PlantConfig, co_simulate,
                           final_third_variance, plant_step,
                           sample_network_delay)

from conftest import config_path


def test_plant_step_exact_integration():
    # one sample of the held control: x' = x + h*u
    assert plant_step(1.0, -2.0, 0.0, 0.3) == pytest.approx(0.4)
    assert plant_step(2.5, 0.0, 0.0, 0.3) == pytest.approx(2.5)
    assert plant_step(0.0, 0.0, 1.0, 0.25) == pytest.approx(0.5)
    with pytest.raises(InputError):
        plant_step(1.0, 0.0, 0.0, 0.0)


def test_zero_delay_closed_loop_contracts():
    # u = -G x applied immediately: |x| shrinks by |1 - G h| per sample
    x, g, h = 1.0, 2.0, 0.3
    for _ in range(10):
        nxt = plant_step(x, -g * x, 0.0, h)
        assert abs(nxt) == pytest.approx(abs(1 - g * h) * abs(x))
        x = nxt
    assert abs(x) < 1e-3


def test_policy_validation_and_lag():
    with pytest.raises(InputError):
        AdversaryPolicy(drop_prob=1.5)
    with pytest.raises(InputError):
        AdversaryPolicy(low_latency_delay=0.0)
    pol = AdversaryPolicy(low_latency_delay=0.1, drop_prob=0.9)
    assert pol.observe_lag == pytest.approx(1.0)
    assert AdversaryPolicy(drop_prob=1.0).observe_lag == math.inf


def test_sample_network_delay_degenerate_allocation():
    rng_p = np.random.default_rng(0)
    rng_d = np.random.default_rng(1)
    tau, dropped, idx = sample_network_delay(
        np.array([0.0, 5.0, 0.0]), np.array([1.0, 2.5, 9.0]),
        worm_paths={2}, mode_drop=True, drop_prob=0.9,
        rng_path=rng_p, rng_drop=rng_d)
    assert idx == 1 and tau == 2.5 and not dropped


def test_sample_network_delay_drop_switch():
    rng_p = np.random.default_rng(0)
    rng_d = np.random.default_rng(1)
    tau, dropped, idx = sample_network_delay(
        np.array([0.0, 0.0, 5.0]), np.array([1.0, 2.5, 9.0]),
        worm_paths={2}, mode_drop=True, drop_prob=1.0,
        rng_path=rng_p, rng_drop=rng_d)
    assert idx == 2 and dropped
    tau, dropped, _ = sample_network_delay(
        np.array([0.0, 0.0, 5.0]), np.array([1.0, 2.5, 9.0]),
        worm_paths={2}, mode_drop=True, drop_prob=0.0,
        rng_path=rng_p, rng_drop=rng_d)
    assert not dropped
    with pytest.raises(InputError):
        sample_network_delay(np.zeros(3), np.ones(3), set(), False, 0.0,
                             rng_p, rng_d)


def test_plant_config_validation():
    with pytest.raises(InputError):
        PlantConfig(h=0.0)
    with pytest.raises(InputError):
        PlantConfig(gain=0.0)
    with pytest.raises(InputError):
        PlantConfig(noise_std=-1.0)


def test_co_simulate_requires_plant():
    cfg = load_config(config_path("fig5b"))
    asm = cfg.assembly()
    with pytest.raises(ConfigError):
        co_simulate(asm)


def test_co_simulate_deterministic_replay():
    cfg = load_config(config_path("fig7a"))
    asm = cfg.assembly()
    a = co_simulate(asm, horizon=12.0)
    b = co_simulate(asm, horizon=12.0)
    for col in ("x_plant", "u", "tau", "dropped"):
        assert np.array_equal(a.data[col], b.data[col])
    c = co_simulate(asm, horizon=12.0, seed=999)
    assert not np.array_equal(a.data["x_plant"], c.data["x_plant"])


def test_plant_trace_has_four_extra_columns():
    cfg = load_config(config_path("fig7a"))
    asm = cfg.assembly()
    tr = co_simulate(asm, horizon=3.0)
    assert tr.columns[-4:] == ["x_plant", "u", "tau", "dropped"]
    assert final_third_variance(tr) >= 0.0


def test_dt_must_divide_sampling_period():
    cfg = load_config(config_path("fig7a"))
    asm = cfg.assembly()
    with pytest.raises(ConfigError):
        co_simulate(asm, horizon=3.0, dt=0.07)


def test_working_leash_keeps_plant_bounded():
    """With the well-chosen leash the tunnel dies and the plant state
    stays in a small neighbourhood of the origin."""
    cfg = load_config(config_path("fig7c"))
    asm = cfg.assembly()
    tr = co_simulate(asm)
    x = tr.data["x_plant"]
    tail = x[len(x) // 3:]
    assert np.abs(tail).max() < 5.0
    assert abs(tail.mean()) < 1.0


def test_wormhole_bait_then_drop_cycle():
    """Without mitigation the tunnel flow is pulled to the dropping
    threshold and control packets start dropping there."""
    cfg = load_config(config_path("fig7a"))
    asm = cfg.assembly()
    tr = co_simulate(asm)
    flow = tr.data["rl_9"]
    assert flow.max() > asm.oob.policy.flow_threshold
    assert tr.data["dropped"].sum() > 0
    # flow hovers near the threshold once the bait phase ends
    tail = flow[len(flow) // 2:]
    assert abs(tail.mean() - asm.oob.policy.flow_threshold) < 1.0
