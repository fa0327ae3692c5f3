import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from exitrate import (DiffusionField, GainTuple, SdeConfig, SystemModel, estimate_survival,
                      exit_rate_mc, interval, invariant_set_nonempty, simulate_deterministic,
                      simulate_sde)
from exitrate.domain import ball
from exitrate.simulate import InvarianceConfig, simulate_exit_times, wilson_bounds

from conftest import scalar_gain, scalar_model

PI2_8 = np.pi**2 / 8


def planar(M):
    return SystemModel(np.asarray(M, dtype=float), (np.zeros((2, 1)),),
                       DiffusionField.constant(np.eye(2)))


ZERO2 = GainTuple((np.zeros((1, 2)),))


def test_near_deterministic_decay():
    m, K = scalar_model(0.0), scalar_gain(-1.0)
    path, ex = simulate_sde(m, K, interval(-1, 1), SdeConfig(1e-12, 1e-3, 10.0), [0.5])
    assert not ex.exited
    assert ex.tau == pytest.approx(10.0)
    assert abs(path.states[-1, 0]) < 1e-3
    assert path.times[-1] == pytest.approx(10.0)


def test_exit_sample_lands_on_boundary(brownian):
    m, K, D = brownian
    for sid in range(20):
        path, ex = simulate_sde(m, K, D, SdeConfig(1.0, 1e-3, 10.0, stream_id=sid), [0.0])
        assert ex.exited
        assert 0 < ex.tau <= 10.0
        assert abs(D.boundary_distance(ex.x_exit)) <= 1e-12
        assert path.times[-1] == pytest.approx(ex.tau)
        assert np.all(D.contains(path.states[:-1]))


def test_start_outside_rejected(brownian):
    m, K, D = brownian
    with pytest.raises(ValueError):
        simulate_sde(m, K, D, SdeConfig(1.0, 1e-3, 1.0), [1.0])


def test_reproducible_and_batch_consistent(brownian):
    m, K, D = brownian
    cfg = SdeConfig(1.0, 1e-3, 5.0, seed=42, stream_id=100)
    p1, e1 = simulate_sde(m, K, D, cfg, [0.3])
    p2, e2 = simulate_sde(m, K, D, cfg, [0.3])
    np.testing.assert_array_equal(p1.states, p2.states)
    assert e1.tau == e2.tau
    base = SdeConfig(1.0, 1e-3, 5.0, seed=42, stream_id=97)
    exited, tau = simulate_exit_times(m, K, D, base, [0.3], 8)
    assert tau[3] == e1.tau and exited[3] == e1.exited


def test_chunking_and_threads_do_not_change_results(brownian):
    m, K, D = brownian
    cfg = SdeConfig(1.0, 1e-2, 5.0, seed=9)
    _, a = simulate_exit_times(m, K, D, cfg, [0.0], 1000)
    _, b = simulate_exit_times(m, K, D, cfg, [0.0], 1000, threads=3, chunk=137)
    np.testing.assert_array_equal(a, b)


def test_permuted_stream_order_same_reduction(brownian):
    m, K, D = brownian
    cfg = SdeConfig(1.0, 1e-2, 5.0, seed=9, stream_id=0)
    _, a = simulate_exit_times(m, K, D, cfg, [0.0], 600)
    _, hi = simulate_exit_times(m, K, D, SdeConfig(1.0, 1e-2, 5.0, seed=9, stream_id=300),
                                [0.0], 300)
    _, lo = simulate_exit_times(m, K, D, cfg, [0.0], 300)
    np.testing.assert_array_equal(np.concatenate([lo, hi]), a)


@pytest.mark.parametrize("x0, expected, tol", [(0.0, 1.0, 0.02), (0.9, 0.19, 0.01)])
def test_mean_exit_time_closed_form(brownian, x0, expected, tol):
    # E tau solves v''/2 = -1 with v(+-1) = 0, i.e. v(x) = 1 - x^2
    m, K, D = brownian
    cfg = SdeConfig(1.0, 1e-2 if x0 == 0 else 2e-3, 20.0, seed=3, exit_correction="bridge")
    exited, tau = simulate_exit_times(m, K, D, cfg, [x0], 100_000)
    assert exited.all()
    assert abs(tau.mean() - expected) <= tol


def test_doubling_epsilon_halves_mean_exit_time(brownian):
    m, K, D = brownian
    means = []
    for eps in (0.5, 1.0):
        cfg = SdeConfig(eps, 2e-3, 40.0, seed=5, exit_correction="bridge")
        _, tau = simulate_exit_times(m, K, D, cfg, [0.0], 20_000)
        means.append((tau.mean(), tau.std() / np.sqrt(tau.size)))
    (m1, s1), (m2, s2) = means
    ratio = m1 / m2
    assert abs(ratio - 2.0) <= 4 * ratio * np.hypot(s1 / m1, s2 / m2)


def test_survival_no_exit():
    m, K = scalar_model(0.0), scalar_gain(-1.0)
    surv = estimate_survival(m, K, interval(-1, 1), SdeConfig(1e-12, 1e-2, 10.0), [0.5],
                             [1, 5, 10], 100)
    assert np.all(surv.p_hat == 1.0)
    est = exit_rate_mc(surv)
    assert est.value == 0.0 and "no-exit-observed" in est.flags


def test_survival_log_ratio(brownian):
    m, K, D = brownian
    surv = estimate_survival(m, K, D, SdeConfig(1.0, 1e-3, 2.0, seed=21), [0.0],
                             [1.0, 2.0], 40_000)
    assert np.all(surv.ci_lo <= surv.p_hat) and np.all(surv.p_hat <= surv.ci_hi)
    assert np.log(surv.p_hat[1]) - np.log(surv.p_hat[0]) == pytest.approx(-PI2_8, abs=0.1)


def test_survival_preconditions(brownian):
    m, K, D = brownian
    cfg = SdeConfig(1.0, 1e-2, 2.0)
    with pytest.raises(ValueError):
        estimate_survival(m, K, D, cfg, [0.0], [1.0], 0)
    with pytest.raises(ValueError):
        estimate_survival(m, K, D, cfg, [0.0], [1.0, 0.5], 100)
    with pytest.raises(ValueError):
        estimate_survival(m, K, D, cfg, [0.0], [1.0, 3.0], 100)


def test_degenerate_survival_warning(brownian):
    m, K, D = brownian
    surv = estimate_survival(m, K, D, SdeConfig(50.0, 1e-3, 10.0), [0.0], [5.0, 10.0], 100)
    assert surv.survivors[0] == 0
    assert any("degenerate-estimate" in w for w in surv.warnings)


def test_mc_rate_drift_free(brownian):
    m, K, D = brownian
    T = np.arange(0.25, 7.01, 0.25)
    cfg = SdeConfig(1.0, 1e-2, 7.0, seed=8, exit_correction="bridge")
    est = exit_rate_mc(estimate_survival(m, K, D, cfg, [0.0], T, 20_000))
    assert est.method == "mc"
    assert est.value == pytest.approx(PI2_8, rel=0.1)
    assert 0 < est.uncertainty < 0.1


def test_rk4_examples():
    path = simulate_deterministic(planar(-np.eye(2)), ZERO2, [1.0, 0.0], 1.0, 1e-2)
    np.testing.assert_allclose(path.states[-1], [np.exp(-1), 0.0], atol=1e-8)
    rot = planar([[0, 1], [-1, 0]])
    path = simulate_deterministic(rot, ZERO2, [1.0, 0.0], 2 * np.pi, 1e-2)
    np.testing.assert_allclose(path.states[-1], [1.0, 0.0], atol=1e-6)
    path = simulate_deterministic(rot, ZERO2, [0.0, 0.0], 3.0, 0.1)
    assert np.all(path.states == 0)


def test_rk4_fourth_order_against_expm():
    M = np.array([[-0.3, 2.0], [-1.5, -0.2]])
    x0 = np.array([1.0, -0.5])
    exact = expm(2.0 * M) @ x0
    errs = []
    for dt in (0.1, 0.05, 0.025):
        end = simulate_deterministic(planar(M), ZERO2, x0, 2.0, dt).states[-1]
        errs.append(np.linalg.norm(end - exact) / np.linalg.norm(exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.8)
    assert errs[0] <= 2.0 * 0.1**4


def test_invariance_examples():
    m = scalar_model(1.0)
    assert invariant_set_nonempty(m, scalar_gain(-2.0), interval(-1, 1)).kind == "yes-by-hurwitz"
    assert invariant_set_nonempty(m, scalar_gain(0.0), interval(1, 2)).kind == "no-evidence"
    # unstable at the origin: only the start x0 = 0 stays put
    assert invariant_set_nonempty(m, scalar_gain(0.0), interval(-1, 1)).kind == "no-evidence"
    only_origin = InvarianceConfig(starts=((0.0,),))
    v = invariant_set_nonempty(m, scalar_gain(0.0), interval(-1, 1), only_origin)
    assert v.kind == "yes-by-simulation" and v.omega["starts"] == 1


def test_invariance_by_simulation_off_origin():
    # rotation keeps circles around the origin; ball center away from 0
    rot = planar([[0, 1], [-1, 0]])
    dom = ball([0.0, 0.0], 1.0)
    assert invariant_set_nonempty(rot, ZERO2, dom).kind == "yes-by-simulation"
    shifted = ball([0.2, 0.0], 1.0)
    assert invariant_set_nonempty(rot, ZERO2, shifted).kind == "no-evidence"


def test_invariance_empty_omega():
    with pytest.raises(ValueError):
        invariant_set_nonempty(scalar_model(1.0), scalar_gain(0.0), interval(1, 2),
                               InvarianceConfig(delta_frac=1.5))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**63), st.floats(0.2, 3.0))
def test_survival_monotone(seed, eps):
    m, K = scalar_model(0.5), scalar_gain(0.0)
    T = np.linspace(0.1, 2.0, 12)
    surv = estimate_survival(m, K, interval(-1, 1), SdeConfig(eps, 1e-2, 2.0, seed=seed),
                             [0.1], T, 100)
    assert np.all(np.diff(surv.p_hat) <= 0)
    assert np.all(surv.ci_lo <= surv.p_hat + 1e-15) and np.all(surv.p_hat <= surv.ci_hi + 1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.floats(0.0, 1.0), st.floats(1.0, 4.0))
def test_wilson_bounds_bracket_estimate(n, frac, z):
    k = int(frac * n)
    lo, hi = wilson_bounds(k, n, z)
    assert 0 <= lo <= k / n + 1e-12 and k / n - 1e-12 <= hi <= 1
    lo2, hi2 = wilson_bounds(k, n, z + 0.5)
    assert lo2 <= lo + 1e-12 and hi2 >= hi - 1e-12
