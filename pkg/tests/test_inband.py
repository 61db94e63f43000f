import math

import numpy as np
import pytest

from wormsim.errors import InputError
from wormsim.inband import (BetaCurve, CompromiseState, beta_derivative,
                            beta_estimate, collapse_safe, compromise_step,
                            estimate_beta_curve, exhaustive_beta, ib_delay)
from wormsim.topology import LinkSpec, NetworkSpec, SourceSpec


def test_collapse_safe_inequality():
    assert collapse_safe(3, 1) is True      # 3 < 1 + 3
    assert collapse_safe(5, 1) is False     # 5 >= 1 + 3
    assert collapse_safe(0, 0) is True
    assert collapse_safe(0, 7) is True
    with pytest.raises(InputError):
        collapse_safe(-1, 0)


def line_spec(n):
    nodes = tuple(f"n{i}" for i in range(n))
    links = tuple(LinkSpec(f"l{i}", (f"n{i}", f"n{i+1}"))
                  for i in range(n - 1))
    src = SourceSpec("n0", f"n{n-1}", 1.0,
                     (tuple(f"l{i}" for i in range(n - 1)),))
    return NetworkSpec(nodes, links, (src,))


def test_line_graph_full_capture_matches_enumeration():
    # colluders at distance 3 on a six-node line; relays beyond the exit
    # violate the collapse condition, so the best safe tunnel has 3 hops
    spec = line_spec(6)
    exact = exhaustive_beta(spec, "n0", "n3")
    assert exact == 3.0
    mean, se = beta_estimate(spec, "n0", "n3", x=1.0, trials=10, seed=1)
    assert mean == exact
    assert se == 0.0


def test_beta_estimate_fallback_when_no_safe_relay():
    nodes = ("a", "b", "c")
    links = (LinkSpec("l0", ("a", "b")),)
    spec = NetworkSpec(nodes, links,
                       (SourceSpec("a", "b", 1.0, (("l0",),)),))
    # the only candidate relay is unreachable: every trial falls back to n
    mean, se = beta_estimate(spec, "a", "b", x=1.0, trials=5, seed=0)
    assert mean == 3.0
    mean, _ = beta_estimate(spec, "a", "b", x=1.0, trials=5, seed=0,
                            fallback=99.0)
    assert mean == 99.0


def test_beta_estimate_preconditions():
    spec = line_spec(6)
    with pytest.raises(InputError):
        beta_estimate(spec, "n0", "n3", x=0.0, trials=5, seed=0)
    with pytest.raises(InputError):
        beta_estimate(spec, "n0", "n3", x=0.01, trials=5, seed=0)


def test_beta_estimate_reproducible():
    spec = line_spec(8)
    a = beta_estimate(spec, "n0", "n4", x=0.4, trials=50, seed=7)
    b = beta_estimate(spec, "n0", "n4", x=0.4, trials=50, seed=7)
    assert a == b


def test_beta_derivative_two_point_slope():
    curve = BetaCurve(np.array([0.2, 0.4]), np.array([10.0, 6.0]),
                      np.zeros(2), trials=1, fallback=20.0)
    assert beta_derivative(curve, 0.3) == pytest.approx(-20.0)


def test_beta_derivative_flat_curve():
    curve = BetaCurve(np.array([0.2, 0.6, 1.0]), np.array([4.0, 4.0, 4.0]),
                      np.zeros(3), trials=1, fallback=20.0)
    assert beta_derivative(curve, 0.5) == pytest.approx(0.0)


def test_beta_derivative_range_check():
    curve = BetaCurve(np.array([0.2, 0.4]), np.array([10.0, 6.0]),
                      np.zeros(2), trials=1, fallback=20.0)
    with pytest.raises(InputError):
        beta_derivative(curve, 0.5)


def test_convexified_slopes_nondecreasing():
    xs = np.linspace(0.1, 1.0, 10)
    noisy = 10.0 / xs + np.sin(xs * 20) * 0.5
    curve = BetaCurve(xs, noisy, np.zeros(10), trials=1, fallback=40.0)
    slopes = [curve.slope(x) for x in np.linspace(0.12, 0.98, 40)]
    assert all(b >= a - 1e-9 for a, b in zip(slopes, slopes[1:]))
    assert all(s <= 1e-9 for s in slopes)  # nonincreasing fit


def test_compromise_step_examples():
    st = CompromiseState(0.5, cost_rate=2.0, w1="a", w2="b")
    assert compromise_step(st, -5.0, 0.1).x == pytest.approx(0.8)
    assert compromise_step(st, -1.0, 0.1).x == pytest.approx(0.5)
    top = CompromiseState(1.0, cost_rate=2.0, w1="a", w2="b")
    assert compromise_step(top, -99.0, 0.1).x == 1.0
    with pytest.raises(InputError):
        compromise_step(st, -5.0, 0.0)


def test_compromise_trajectory_monotone_convergent():
    xs = np.linspace(0.1, 1.0, 10)
    curve = BetaCurve(xs, 8.0 / (1 + 5 * xs), np.zeros(10), trials=1,
                      fallback=20.0)
    st = CompromiseState(0.1, cost_rate=2.0, w1="a", w2="b")
    prev = st.x
    drives = []
    for _ in range(5000):
        st = compromise_step(st, curve.slope(st.x), 0.01)
        assert st.x >= prev
        drives.append(st.x - prev)
        prev = st.x
    assert drives[-1] == pytest.approx(0.0, abs=1e-12)


def test_ib_delay_scaling():
    curve = BetaCurve(np.array([0.5, 1.0]), np.array([1.0, 1.0]),
                      np.zeros(2), trials=1, fallback=20.0)
    assert ib_delay(2.0, 0.7, curve, lambda r: 1.5) == pytest.approx(1.5)
    curve2 = BetaCurve(np.array([0.5, 1.0]), np.array([2.0, 2.0]),
                       np.zeros(2), trials=1, fallback=20.0)
    assert ib_delay(2.0, 0.7, curve2, lambda r: 1.5) == pytest.approx(3.0)


def test_true_tunnel_delay_exceeds_advertised(run_ib_beta):
    # the link advertises a one-hop capacity-15 law, but the real tunnel
    # is at least two hops long, so the recorded delay always exceeds it
    tr = run_ib_beta.trace
    asm = run_ib_beta.assembly
    link = asm.spec.link("9")
    from wormsim.links import ValidLinkLaw
    advertised = ValidLinkLaw(link.capacity, link.alpha,
                              link.queue_capacity)
    adv_vals = np.array([advertised(float(z)) for z in tr.data["rl_9"]])
    assert np.all(tr.data["delay_9"] > adv_vals)


def test_curve_estimation_monotone_on_mesh(run_ib_beta):
    curve = run_ib_beta.assembly.ib.curve
    # raw means nonincreasing within two standard errors
    for k in range(len(curve.xs) - 1):
        allowed = 2.0 * math.hypot(curve.std_errs[k], curve.std_errs[k + 1])
        assert curve.means[k + 1] <= curve.means[k] + allowed
    assert curve.means[-1] >= 2.0  # at least the shortest feasible tunnel
