import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evjoint.events import EventSlice, FixedDuration, slice_events
from evjoint.losses import LossConfig, NonFiniteGradientError
from evjoint.simulator import render_pattern, simulate_events, translating_scene
from evjoint.solver import (
    AdamState,
    InsufficientDataError,
    SolverConfig,
    adam_step,
    estimate_pair,
    estimate_sequence,
    upsample_coarse_flow,
)

# ---------------------------------------------------------------------------
# Adam


def test_zero_gradient_leaves_parameters():
    p = {"a": np.array([1.0, -2.0])}
    new, _ = adam_step(p, {"a": np.zeros(2)}, AdamState.zeros_like(p), lr=0.1)
    np.testing.assert_array_equal(new["a"], p["a"])


@given(st.lists(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=5),
       st.floats(1e-4, 1.0))
def test_first_step_closed_form(g, lr):
    g = np.array(g)
    p = {"x": np.zeros_like(g)}
    new, state = adam_step(p, {"x": g}, AdamState.zeros_like(p), lr=lr, eps=1e-8)
    np.testing.assert_allclose(new["x"], -lr * g / (np.abs(g) + 1e-8), rtol=1e-9)
    assert state.step == 1


def test_scalar_quadratic_converges():
    p = {"x": np.array(1.0)}
    state = AdamState.zeros_like(p)
    for _ in range(100):
        p, state = adam_step(p, {"x": 2 * p["x"]}, state, lr=0.1)
    assert abs(float(p["x"])) < 0.05


def test_adam_input_checks():
    p = {"x": np.zeros(3)}
    with pytest.raises(ValueError, match="shape"):
        adam_step(p, {"x": np.zeros(2)}, AdamState.zeros_like(p))
    with pytest.raises(NonFiniteGradientError, match="'x'"):
        adam_step(p, {"x": np.array([0.0, np.nan, 0.0])}, AdamState.zeros_like(p))


def test_per_parameter_step_scale():
    p = {"a": np.zeros(1), "b": np.zeros(1)}
    g = {"a": np.ones(1), "b": np.ones(1)}
    new, _ = adam_step(p, g, AdamState.zeros_like(p), lr=0.1, lr_scale={"a": 2.0})
    assert new["a"][0] == pytest.approx(2 * new["b"][0])


def test_schedule():
    cfg = SolverConfig(iterations=100, lr=0.05, decay_at=0.75, decay_factor=0.1, itv_boost=10,
                       boost_until=0.5)
    assert cfg.lr_at(74) == 0.05 and cfg.lr_at(75) == pytest.approx(0.005)
    assert cfg.boost_at(0, 0.2) == pytest.approx(2.0)
    assert cfg.boost_at(25, 0.2) == pytest.approx(1.0)
    assert cfg.boost_at(50, 0.2) == 0.0
    with pytest.raises(ValueError):
        SolverConfig(iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(lr=0)


def test_solver_reexports_upsampling():
    assert upsample_coarse_flow(np.ones((2, 1, 1)), 16, 4, 4).shape == (2, 4, 4)


# ---------------------------------------------------------------------------
# Pair estimation


@pytest.fixture(scope="module")
def small_sequence():
    scene = translating_scene(render_pattern("noise:2", 32, 32), (9.0, 3.0), 0.3, 0.2)
    return slice_events(simulate_events(scene), FixedDuration(0.1))


def test_empty_pair_is_insufficient_data():
    e = EventSlice.empty(16, 16, 0.0, 0.1)
    with pytest.raises(InsufficientDataError, match="insufficient data"):
        estimate_pair(e, e)


def test_zero_motion_scene_is_insufficient_data():
    ev = simulate_events(translating_scene(render_pattern("noise:2", 16, 16), (0.0, 0.0), 0.2))
    assert len(ev) == 0
    with pytest.raises(InsufficientDataError):
        estimate_pair(EventSlice.empty(16, 16, 0, 0.1), EventSlice.empty(16, 16, 0.1, 0.2))


def test_mismatched_sizes_rejected():
    with pytest.raises(ValueError):
        estimate_pair(EventSlice.empty(16, 16, 0, 1), EventSlice.empty(8, 8, 0, 1))


def test_trace_and_descent(small_sequence):
    s1, s2 = small_sequence[:2]
    est = estimate_pair(s1, s2, LossConfig(), SolverConfig(iterations=120))
    assert len(est.trace) == 120
    assert est.final_loss <= est.trace[0]["total"]
    np.testing.assert_array_equal(est.F_i.dense, upsample_coarse_flow(est.F_i.coarse, 16, 32, 32))
    assert abs(est.L_i.mean()) < 1e-12 and abs(est.L_ip1.mean()) < 1e-12


def test_same_seed_is_bit_identical(small_sequence):
    s1, s2 = small_sequence[:2]
    cfg = SolverConfig(iterations=60, seed=5)
    lc = LossConfig(cmax_t_ref="random")
    a = estimate_pair(s1, s2, lc, cfg)
    b = estimate_pair(s1, s2, lc, cfg)
    assert a.final_loss == b.final_loss
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.L_ip1, b.L_ip1)


def test_sequence_of_three_slices(small_sequence):
    cfg = SolverConfig(iterations=20)
    out = estimate_sequence(small_sequence, LossConfig(), cfg)
    assert len(out) == 2
    assert out[0].trace == estimate_pair(small_sequence[0], small_sequence[1], LossConfig(), cfg).trace


def test_sequence_of_two_equals_direct_call(small_sequence):
    cfg = SolverConfig(iterations=20)
    (seq,) = estimate_sequence(small_sequence[:2], LossConfig(), cfg)
    direct = estimate_pair(*small_sequence[:2], LossConfig(), cfg)
    np.testing.assert_array_equal(seq.F_ip1.coarse, direct.F_ip1.coarse)


def test_sequence_needs_two_slices(small_sequence):
    with pytest.raises(ValueError):
        estimate_sequence(small_sequence[:1])


def test_sequence_errors_carry_pair_index(small_sequence):
    empty = [EventSlice.empty(32, 32, 0.3, 0.4), EventSlice.empty(32, 32, 0.4, 0.5)]
    with pytest.raises(InsufficientDataError, match=r"pair \(3, 4\)"):
        estimate_sequence(list(small_sequence) + empty, LossConfig(), SolverConfig(iterations=2))


def test_warm_start_reaches_lower_loss(small_sequence):
    cold = estimate_sequence(small_sequence, LossConfig(), SolverConfig(iterations=100))
    warm = estimate_sequence(small_sequence, LossConfig(), SolverConfig(iterations=100, warm_start=True))
    assert warm[1].final_loss <= cold[1].final_loss
