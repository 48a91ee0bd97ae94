import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrdiff.schedules import ScheduleError, make_shift_schedule, make_text_schedule


def test_default_step_count():
    s = make_shift_schedule(18)
    assert s.T == 18
    assert s.eta.shape == (19,) and s.alpha.shape == (18,)


def test_single_step_collapse():
    s = make_shift_schedule(1, eta_1=0.001, eta_T=1.0)
    assert s.eta.tolist() == [0.0, 1.0]
    assert s.alpha.tolist() == [1.0]


def test_geometric_interior_points():
    s = make_shift_schedule(4, eta_1=0.01, eta_T=0.99)
    # independent recomputation: 0.01 * 99 ** ((t - 1) / 3)
    expected = [0.0, 0.01, 0.01 * 99 ** (1 / 3), 0.01 * 99 ** (2 / 3), 0.99]
    np.testing.assert_allclose(s.eta, expected, rtol=1e-14, atol=0)


@pytest.mark.parametrize("kwargs", [
    {"T": 0}, {"T": 4, "eta_1": 0.0}, {"T": 4, "eta_1": 0.5, "eta_T": 0.4}, {"T": 4, "eta_T": 1.2},
    {"T": 4, "kappa": 0.0}, {"T": 4, "eta_1": 0.05}, {"T": 4, "eta_T": 0.9},
])
def test_shift_schedule_rejects_bad_parameters(kwargs):
    with pytest.raises(ScheduleError):
        make_shift_schedule(**kwargs)


def test_text_schedule_endpoints():
    s = make_text_schedule(18, 16, 0.01)
    assert s.alphabar[0] == 1.0
    assert s.alphabar[18] == 0.01
    assert np.all(np.diff(s.alphabar) < 0)


def test_text_ratio_identity_two_steps():
    s = make_text_schedule(2, 2, 0.01)
    assert abs(s.alphabar[1] * s.alpha[1] - s.alphabar[2]) < 1e-12


def test_large_alphabet_accepted():
    s = make_text_schedule(18, 6736, 0.01)
    assert s.K == 6736


@pytest.mark.parametrize("kwargs", [{"T": 0}, {"K": 1}, {"final_alphabar": 0.0}, {"final_alphabar": 0.2}])
def test_text_schedule_rejects_bad_parameters(kwargs):
    with pytest.raises(ScheduleError):
        make_text_schedule(**{"T": 18, "K": 16, "final_alphabar": 0.01, **kwargs})


@settings(max_examples=60, deadline=None)
@given(T=st.integers(2, 60), eta_1=st.floats(1e-4, 0.01), eta_T=st.floats(0.99, 1.0),
       kappa=st.floats(0.1, 5.0))
def test_shift_schedule_invariants(T, eta_1, eta_T, kappa):
    s = make_shift_schedule(T, eta_1, eta_T, kappa)
    assert s.eta[0] == 0.0
    assert np.all(np.diff(s.eta) > 0)
    assert s.eta[1] <= 0.01 and 0.99 <= s.eta[T] <= 1.0
    assert np.all(s.alpha > 0)
    assert abs(s.alpha.sum() - s.eta[T]) < 1e-12
    again = make_shift_schedule(T, eta_1, eta_T, kappa)
    assert np.array_equal(again.eta, s.eta) and np.array_equal(again.alpha, s.alpha)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 60), K=st.integers(2, 100), final=st.floats(1e-4, 0.05))
def test_text_schedule_products(T, K, final):
    s = make_text_schedule(T, K, final)
    assert np.all(np.diff(s.alphabar) < 0)
    np.testing.assert_allclose(np.cumprod(s.alpha), s.alphabar[1:], rtol=0, atol=1e-12)
    assert np.all((s.alpha > 0) & (s.alpha <= 1))


def test_schedules_are_read_only():
    s = make_shift_schedule(18)
    with pytest.raises(ValueError):
        s.eta[3] = 0.5
