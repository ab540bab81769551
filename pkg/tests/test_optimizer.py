import numpy as np
import pytest

from apmsqueeze.collective import CollectiveState
from apmsqueeze.compression import CompressorSpec
from apmsqueeze.exceptions import ConfigError, DimensionError, StateError
from apmsqueeze.optimizer import (
    DivergenceError,
    OptimizerConfig,
    OptimizerState,
    Phase,
    Variant,
    adam_warmup_step,
    gradient_squeeze_step,
    run,
    squeeze_step,
    step_decay,
)
from apmsqueeze.problems import LeastSquaresProblem, make_least_squares, make_logistic

IDENTITY = CompressorSpec("identity")
ONEBIT = CompressorSpec("onebit")


def squeezing_state(d, v_frozen=None, m=None):
    state = OptimizerState.initial(np.zeros(d))
    state.phase = Phase.SQUEEZE
    state.v_frozen = np.ones(d) if v_frozen is None else np.asarray(v_frozen, dtype=float)
    if m is not None:
        state.m = np.asarray(m, dtype=float)
    return state


def test_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        OptimizerConfig(t_warmup=5, t_total=5)
    with pytest.raises(ConfigError):
        OptimizerConfig(t_warmup=0)
    with pytest.raises(ConfigError):
        OptimizerConfig(lr=0.0)
    with pytest.raises(ConfigError):
        OptimizerConfig(eta_floor=0.0)


def test_step_decay():
    sched = step_decay(1.0, 10, 0.5)
    assert [sched(t) for t in (0, 9, 10, 25)] == [1.0, 1.0, 0.5, 0.25]
    assert OptimizerConfig(lr=sched).gamma(20) == 0.25


def test_adam_first_step_on_quadratic():
    # f(x) = x^2 / 2 at x = 1: gradient 1
    cfg = OptimizerConfig(lr=0.1, beta1=0.9, beta2=0.999, eta=0.0, t_warmup=5, t_total=10)
    state = OptimizerState.initial([1.0])
    adam_warmup_step(cfg, state, [np.array([1.0])])
    assert state.m[0] == pytest.approx(0.1, rel=1e-15)
    assert state.v[0] == pytest.approx(0.001, rel=1e-12)
    assert state.x[0] == pytest.approx(0.9, rel=1e-15)
    assert state.t == 1


def test_adam_zero_gradient_decays_moments():
    cfg = OptimizerConfig(lr=0.1, eta=0.0, t_warmup=5, t_total=10)
    state = OptimizerState.initial([1.0, 1.0])
    adam_warmup_step(cfg, state, [np.array([1.0, -2.0])] * 3)
    m1, v1, x1 = state.m.copy(), state.v.copy(), state.x.copy()
    adam_warmup_step(cfg, state, [np.zeros(2)] * 3)
    np.testing.assert_allclose(state.m, 0.9 * m1, rtol=1e-15)
    np.testing.assert_allclose(state.v, 0.999 * v1, rtol=1e-15)
    m_hat = state.m / (1 - 0.9**2)
    v_hat = state.v / (1 - 0.999**2)
    np.testing.assert_allclose(state.x, x1 - 0.1 * m_hat / np.sqrt(v_hat), rtol=1e-14)
    assert np.all(state.x != x1)


def test_adam_single_worker_matches_single_node_bitwise():
    cfg = OptimizerConfig(lr=0.05, t_warmup=50, t_total=60)
    rng = np.random.default_rng(3)
    grads = rng.normal(size=(20, 4))
    state = OptimizerState.initial(np.ones(4))
    x, m, v = np.ones(4), np.zeros(4), np.zeros(4)
    for t, g in enumerate(grads, start=1):
        adam_warmup_step(cfg, state, [g])
        m = 0.9 * m + (1 - 0.9) * g
        v = 0.999 * v + (1 - 0.999) * g * g
        x = x - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert state.x.tobytes() == x.tobytes()


def test_warmup_transition_freezes_variance():
    cfg = OptimizerConfig(lr=0.1, t_warmup=3, t_total=10)
    state = OptimizerState.initial(np.zeros(2))
    for _ in range(3):
        assert state.phase is Phase.WARMUP
        adam_warmup_step(cfg, state, [np.array([1.0, 2.0])])
    assert state.phase is Phase.SQUEEZE
    np.testing.assert_array_equal(state.v_frozen, state.v)
    with pytest.raises(StateError):
        adam_warmup_step(cfg, state, [np.ones(2)])


def test_freeze_bias_corrected_toggle():
    cfg = OptimizerConfig(lr=0.1, t_warmup=3, t_total=10, freeze_bias_corrected=True)
    state = OptimizerState.initial(np.zeros(1))
    for _ in range(3):
        adam_warmup_step(cfg, state, [np.array([2.0])])
    np.testing.assert_allclose(state.v_frozen, state.v / (1 - 0.999**3), rtol=1e-15)


def test_squeeze_requires_squeeze_phase():
    cfg = OptimizerConfig()
    state = OptimizerState.initial(np.zeros(3))
    with pytest.raises(StateError):
        squeeze_step(cfg, state, CollectiveState(1, 3, IDENTITY), [np.zeros(3)])


def test_squeeze_dimension_checks():
    cfg = OptimizerConfig()
    state = squeezing_state(3)
    with pytest.raises(DimensionError):
        squeeze_step(cfg, state, CollectiveState(2, 3, IDENTITY), [np.zeros(3), np.zeros(2)])
    with pytest.raises(DimensionError):
        squeeze_step(cfg, state, CollectiveState(2, 4, IDENTITY), [np.zeros(3), np.zeros(3)])


def test_squeeze_identity_momentum_recursion():
    cfg = OptimizerConfig(lr=0.1, beta1=0.9, t_warmup=1, t_total=10, compressor=IDENTITY)
    state = squeezing_state(1)
    coll = CollectiveState(3, 1, IDENTITY)
    for _ in range(2):
        squeeze_step(cfg, state, coll, [np.array([1.0])] * 3)
    # 0 -> 0.1 -> 0.19
    assert state.m[0] == pytest.approx(0.19, rel=1e-14)


def test_squeeze_single_worker_is_preconditioned_momentum_sgd():
    cfg = OptimizerConfig(lr=0.05, beta1=0.8, t_warmup=1, t_total=100, compressor=IDENTITY)
    v = np.array([4.0, 0.25, 1e-20])
    state = squeezing_state(3, v_frozen=v)
    coll = CollectiveState(1, 3, IDENTITY)
    rng = np.random.default_rng(0)
    x, m = np.zeros(3), np.zeros(3)
    denom = np.maximum(np.sqrt(v), 1e-8)
    for _ in range(30):
        g = rng.normal(size=3)
        squeeze_step(cfg, state, coll, [g])
        m = 0.8 * m + 0.2 * g
        x = x - 0.05 * m / denom
    np.testing.assert_allclose(state.x, x, rtol=1e-14, atol=1e-14)


def test_squeeze_onebit_update_direction():
    cfg = OptimizerConfig(lr=0.1, t_warmup=1, t_total=10, compressor=ONEBIT)
    v = np.array([1.0, 4.0, 9.0, 16.0])
    state = squeezing_state(4, v_frozen=v)
    coll = CollectiveState(2, 4, ONEBIT)
    squeeze_step(cfg, state, coll, [np.array([1.0, -2.0, 3.0, 0.5]), np.array([0.0, -1.0, 2.0, -4.0])])
    step = -state.x * np.sqrt(v) / 0.1
    np.testing.assert_allclose(step, state.m, rtol=1e-14)
    # each one-worker-owned chunk carries one magnitude
    assert abs(state.m[0]) == pytest.approx(abs(state.m[1]))
    assert abs(state.m[2]) == pytest.approx(abs(state.m[3]))


def test_squeeze_floor_guards_zero_variance():
    cfg = OptimizerConfig(lr=1e-3, t_warmup=1, t_total=10, eta_floor=1e-4)
    state = squeezing_state(2, v_frozen=[0.0, 1.0])
    squeeze_step(cfg, state, CollectiveState(1, 2, IDENTITY), [np.array([1.0, 1.0])])
    np.testing.assert_allclose(state.x, [-1e-3 * 0.1 / 1e-4, -1e-3 * 0.1], rtol=1e-14)


def test_gradient_variant_differs_under_lossy_compression():
    cfg = OptimizerConfig(lr=0.1, t_warmup=1, t_total=10, compressor=ONEBIT)
    grads = [np.array([1.0, -3.0, 0.5]), np.array([2.0, 1.0, -1.0])]
    a, b = squeezing_state(3, m=[0.2, 0.1, -0.3]), squeezing_state(3, m=[0.2, 0.1, -0.3])
    squeeze_step(cfg, a, CollectiveState(2, 3, ONEBIT), grads)
    gradient_squeeze_step(cfg, b, CollectiveState(2, 3, ONEBIT), grads)
    assert not np.allclose(a.m, b.m)


def test_gradient_variant_identity_matches_momentum_variant():
    cfg = OptimizerConfig(lr=0.1, t_warmup=1, t_total=10, compressor=IDENTITY)
    grads = [np.array([1.0, -3.0, 0.5]), np.array([2.0, 1.0, -1.0])]
    a, b = squeezing_state(3, m=[0.2, 0.1, -0.3]), squeezing_state(3, m=[0.2, 0.1, -0.3])
    squeeze_step(cfg, a, CollectiveState(2, 3, IDENTITY), grads)
    gradient_squeeze_step(cfg, b, CollectiveState(2, 3, IDENTITY), grads)
    np.testing.assert_allclose(a.x, b.x, rtol=1e-14)


def test_run_boundary_one_step_each():
    prob = make_least_squares(40, 3, 2, seed=1)
    res = run(OptimizerConfig(lr=0.01, t_warmup=1, t_total=2), prob, seed=0)
    assert [r.phase for r in res.records] == ["warmup", "squeeze"]
    assert res.state.t == 2


def test_run_phase_freeze_and_records():
    prob = make_logistic(400, 10, 4, batch_size=8, seed=2)
    cfg = OptimizerConfig(lr=0.01, t_warmup=20, t_total=80, compressor=ONEBIT)
    res = run(cfg, prob, seed=4)
    phases = [r.phase for r in res.records]
    assert phases.count("warmup") == 20 and phases.index("squeeze") == 20
    bits = [r.bits_cum for r in res.records]
    assert bits == sorted(bits)
    assert all(np.isnan(r.grad_norm_sq_V) for r in res.records[:20])
    assert all(np.isfinite(r.grad_norm_sq_V) for r in res.records[20:])


def test_v_frozen_constant_during_squeeze():
    prob = make_logistic(400, 10, 2, batch_size=8, seed=2)
    cfg = OptimizerConfig(lr=0.01, t_warmup=10, t_total=11)
    res = run(cfg, prob, seed=1)
    frozen = res.state.v_frozen.tobytes()
    v = res.state.v.tobytes()
    coll = res.collective
    rng = np.random.default_rng(0)
    full = OptimizerConfig(lr=0.01, t_warmup=10, t_total=200)
    for _ in range(100):
        squeeze_step(full, res.state, coll, [rng.normal(size=10) for _ in range(2)])
        assert res.state.v_frozen.tobytes() == frozen
        assert res.state.v.tobytes() == v


def test_beta1_zero_identity_momentum_is_mean_gradient():
    cfg = OptimizerConfig(lr=0.01, beta1=0.0, t_warmup=1, t_total=10, compressor=IDENTITY)
    state = squeezing_state(3, m=[5.0, 5.0, 5.0])
    grads = [np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0])]
    squeeze_step(cfg, state, CollectiveState(2, 3, IDENTITY), grads)
    np.testing.assert_allclose(state.m, [2.0, 2.0, 2.0], rtol=1e-15)


def test_probes_do_not_change_trajectory():
    prob = make_logistic(300, 8, 3, batch_size=4, seed=5)
    cfg = OptimizerConfig(lr=0.01, t_warmup=10, t_total=60, compressor=CompressorSpec("stochastic_quant"))
    a = run(cfg, prob, seed=9, probes=True)
    b = run(cfg, prob, seed=9, probes=False)
    assert a.state.x.tobytes() == b.state.x.tobytes()
    assert [r.bits_cum for r in a.records] == [r.bits_cum for r in b.records]


def test_run_rejects_worker_mismatch():
    prob = make_least_squares(40, 3, 2)
    with pytest.raises(ConfigError):
        run(OptimizerConfig(t_warmup=1, t_total=2), prob, n_workers=3)


def test_run_divergence_raises_with_records():
    a = np.array([[1e3, 0.0], [0.0, 1e3]])
    prob = LeastSquaresProblem(np.vstack([a] * 4), np.ones(8), 2)
    cfg = OptimizerConfig(lr=1e200, t_warmup=1, t_total=50, compressor=IDENTITY)
    with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
        run(cfg, prob)
    assert len(info.value.records) < 50


@pytest.mark.parametrize("spec", [IDENTITY, ONEBIT])
def test_descent_on_strongly_convex_quadratic(spec):
    prob = make_least_squares(200, 10, 4, batch_size=None, seed=3)
    cfg = OptimizerConfig(lr=1e-4, t_warmup=20, t_total=1500, compressor=spec)
    res = run(cfg, prob, seed=0)
    losses = np.array([r.loss for r in res.records[1000:]])
    assert np.all(np.diff(losses) <= 0)
    assert res.final_loss < res.records[20].loss


def test_gradient_variant_runs():
    prob = make_logistic(300, 8, 3, batch_size=4, seed=5)
    cfg = OptimizerConfig(lr=0.01, t_warmup=10, t_total=40, compressor=ONEBIT)
    a = run(cfg, prob, seed=1, variant=Variant.MOMENTUM)
    b = run(cfg, prob, seed=1, variant="apgsqueeze")
    assert a.records[9].loss == b.records[9].loss
    assert a.records[11].loss != b.records[11].loss
