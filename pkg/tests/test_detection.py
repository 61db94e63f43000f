import math

import numpy as np
import pytest

from wormsim.detection import (DetectorState, detect, penalty_term,
                               rerouted_path_delay, sample_observed_delay)
from wormsim.errors import InputError


def test_detect_boundary_and_ratio():
    assert detect(1.0, 1.0) is False     # log ratio exactly zero
    assert detect(2.0, 1.0) is True
    assert detect(0.5, 1.0) is False
    with pytest.raises(InputError):
        detect(0.0, 1.0)
    with pytest.raises(InputError):
        detect(1.0, -1.0)


def test_penalty_term():
    st = DetectorState(("a", "b"), penalty=10.0)
    assert penalty_term(st, "a") == 0.0
    st.detected["a"] = True
    assert penalty_term(st, "a") == 10.0
    zero = DetectorState(("a",), penalty=0.0)
    zero.detected["a"] = True
    assert penalty_term(zero, "a") == 0.0
    assert penalty_term(st, "unknown") == 0.0


def test_detector_state_validation():
    with pytest.raises(InputError):
        DetectorState(("a",), penalty=-1.0)
    with pytest.raises(InputError):
        DetectorState(("a",), threshold=1.5)
    with pytest.raises(InputError):
        DetectorState(("a",), ema_rate=0.0)


def test_belief_ema_updates():
    st = DetectorState(("a",), threshold=0.5, ema_rate=0.5)
    st.update("a", True)
    assert st.beliefs["a"] == pytest.approx(0.5)
    assert st.detected["a"] is False     # strictly above required
    st.update("a", True)
    assert st.beliefs["a"] == pytest.approx(0.75)
    assert st.detected["a"] is True
    st.update("a", False)
    assert st.beliefs["a"] == pytest.approx(0.375)
    assert st.detected["a"] is False


def test_rerouted_path_delay():
    q = lambda y: y  # identity law makes the arithmetic visible
    assert rerouted_path_delay(0.0, 1.0, 2.0, 3.0, q) == pytest.approx(5.0)
    assert rerouted_path_delay(0.5, 1.0, 3.0, 0.0, q) == pytest.approx(2.0)
    val = rerouted_path_delay(0.3, 1.0, 1.0, 10.0, q)
    assert val == pytest.approx(0.3 * 4.0 + 0.7 * 8.0)
    with pytest.raises(InputError):
        rerouted_path_delay(1.5, 1.0, 1.0, 1.0, q)
    with pytest.raises(InputError):
        rerouted_path_delay(0.5, -1.0, 1.0, 1.0, q)


def test_observed_delay_reproducible_and_positive():
    rng1 = np.random.default_rng(5)
    rng2 = np.random.default_rng(5)
    a = sample_observed_delay(rng1, 2.0)
    b = sample_observed_delay(rng2, 2.0)
    assert a == b > 0.0
    with pytest.raises(InputError):
        sample_observed_delay(rng1, 0.0)


def test_observed_delay_mean_matches():
    rng = np.random.default_rng(11)
    draws = np.array([sample_observed_delay(rng, 3.0)
                      for _ in range(100000)])
    assert draws.mean() == pytest.approx(3.0, rel=0.01)


def test_false_positive_rate_is_inverse_e():
    """A valid link observed at its true mean trips the log-ratio test
    with probability e^-1; the long-run rate stays within 0.02 of it."""
    rng = np.random.default_rng(23)
    n = 10000
    fired = 0
    for _ in range(n):
        obs = sample_observed_delay(rng, 1.7)
        fired += detect(obs, 1.7)
    assert abs(fired / n - math.exp(-1.0)) < 0.02
