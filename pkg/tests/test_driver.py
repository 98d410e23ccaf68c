import math

import numpy as np
import pytest

from neuron_dro.activations import relu
from neuron_dro.datagen import (GeneratorConfig, generate, make_dataset, measure_bounds,
                                truncate_labels)
from neuron_dro.driver import (AlgoConfig, IterateState, NumericalError, extrapolated_gradient,
                               make_reference, run, step_schedule, step_size,
                               theoretical_iteration_budget, zero_test)
from neuron_dro.empirical import RegularizedObjective, risk_closed_form
from neuron_dro.solvers import DualStepProblem, brute_dual_max, brute_dual_step, project_ball


def test_step_size_examples():
    assert step_size(1, 1.0, 8.0, 2.0, 2.0, 1.0) == 0.0625
    assert step_size(2, 1.0, 8.0, 2.0, 2.0, 1.0) == 0.078125
    sched = step_schedule(1.0, 8.0, 2.0, 2.0, 1.0)
    assert sched.eta == 0.25
    assert sched.A(2) == pytest.approx(0.140625, rel=1e-15)
    ratios = [sched.a(i + 1) / sched.a(i) for i in range(1, 50)]
    np.testing.assert_allclose(ratios, 1.25, rtol=1e-13)


def test_budget_examples():
    cfg = AlgoConfig(nu=1.0, c1=8.0, W=1.0, epsilon=0.1, nu0=1.0)
    assert theoretical_iteration_budget(cfg, 2.0, 2.0, 0.1 * math.e) == 5
    assert theoretical_iteration_budget(cfg, 2.0, 2.0, 0.1) == 1
    # halving eta roughly doubles the budget
    k1 = theoretical_iteration_budget(cfg, 200.0, 200.0, 10.0)
    k2 = theoretical_iteration_budget(cfg, 400.0, 400.0, 10.0)
    assert k2 / k1 == pytest.approx(2.0, rel=1e-2)


def test_extrapolated_gradient_examples():
    V = np.array([1.0, -2.0])
    st = IterateState(0, np.zeros(2), np.zeros(2), None, None, 0.0, 0.0, 0.0, 0.0, V, V * 7)
    np.testing.assert_array_equal(extrapolated_gradient(st, 0.3), V)
    st = IterateState(3, np.zeros(2), np.zeros(2), None, None, 0.3, 0.2, 0.5, 0.2, V, V)
    np.testing.assert_array_equal(extrapolated_gradient(st, 0.3), V)
    st = IterateState(3, np.zeros(2), np.zeros(2), None, None, 0.3, 0.2, 0.5, 0.2, V, np.zeros(2))
    np.testing.assert_allclose(extrapolated_gradient(st, 0.6), 1.5 * V)


def test_first_gradient_is_label_correlation():
    ds = truncate_labels(generate(GeneratorConfig(d=3, n=200, w_star=[0.5, 0.5, 0], W=1, seed=0)), 5.0)
    cfg = AlgoConfig(nu=1.0, c1=0.5, W=1.0, epsilon=0.01)
    res = run(ds, relu(), cfg, k_max=1)
    S, G, kappa = measure_bounds(ds, relu(), 1.0, 5.0)
    a1 = step_schedule(1.0, 0.5, kappa, G, cfg.resolved_nu0(1.0)).a(1)
    g0 = -2.0 * (ds.X.T @ (ds.ref_weights * ds.y))
    np.testing.assert_allclose(res.w_hat, project_ball(-a1 * g0, 1.0), atol=1e-15)


def _hand_unrolled(ds, act, cfg, k):
    """Independent transcription of the update rules using the oracle dual step."""
    X, y, p0 = ds.X, ds.y, ds.ref_weights
    S, G, kappa = measure_bounds(ds, act, cfg.W, ds.M, cfg.bound_mode)
    nu, c1, nu0 = cfg.nu, cfg.c1, cfg.resolved_nu0(act.beta)
    eta = min(nu, c1 / 8) / (2 * max(kappa, G))
    a = [0.0] + [(1 + eta) ** (i - 1) * min(nu0, 0.25) / (2 * max(kappa, G)) for i in range(1, k + 1)]
    A = np.cumsum(a)
    ws = [np.zeros(ds.d)]
    ps = [p0.copy()]

    def Ev(w, p):
        return sum(p[j] * 2 * act.beta * (act.value(X[j] @ w) - y[j]) * X[j] for j in range(ds.n))

    V = [Ev(ws[0], ps[0])]
    V_m1 = V[0]
    for i in range(1, k + 1):
        Vprev2 = V_m1 if i == 1 else V[i - 2]
        g = V[i - 1] + (a[i - 1] / a[i]) * (V[i - 1] - Vprev2)
        w = ws[i - 1] - a[i] * g / (1 + 0.5 * c1 * A[i - 1])
        if np.linalg.norm(w) > cfg.W:
            w = w * cfg.W / np.linalg.norm(w)
        ell = np.array([(act.value(X[j] @ w) - y[j]) ** 2 for j in range(ds.n)])
        prob = DualStepProblem(ell, a[i], nu0 + nu * A[i - 1], nu, p0, ps[i - 1])
        _, p, _ = brute_dual_step(prob)
        ws.append(w)
        ps.append(p)
        V.append(Ev(w, p))
    return ws, ps


def test_three_iterates_match_hand_unrolled():
    gen = GeneratorConfig(d=2, n=12, w_star=[0.6, -0.3], W=1, seed=5, label_model="gaussian_noise",
                          noise_std=0.3)
    ds = truncate_labels(generate(gen), 1.0)
    # small nu and large nu0 so that the dual weights move visibly
    cfg = AlgoConfig(nu=0.05, c1=0.5, W=1.0, epsilon=0.01, nu0=0.01)
    res = run(ds, relu(), cfg, k_max=3)
    ws, ps = _hand_unrolled(ds, relu(), cfg, 3)
    np.testing.assert_allclose(res.w_hat, ws[3], atol=1e-12)
    np.testing.assert_allclose(res.p_hat, ps[3], atol=1e-9)
    assert np.max(np.abs(ps[3] - ds.ref_weights)) > 1e-6


def test_single_sample_converges():
    ds = truncate_labels(make_dataset([[1.0]], [0.5]), math.log(100.0))
    cfg = AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01)
    res = run(ds, relu(), cfg, k_max=3000)
    assert (res.w_hat[0] - 0.5) ** 2 <= 1e-6


def test_zero_iterations_return_origin():
    ds = truncate_labels(make_dataset([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0]), 2.0)
    res = run(ds, relu(), AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01), k_max=0)
    np.testing.assert_array_equal(res.w_hat, [0.0, 0.0])
    np.testing.assert_array_equal(res.p_hat, ds.ref_weights)
    assert len(res.trace) == 0


def test_run_requires_truncation():
    ds = make_dataset([[1.0]], [0.5])
    with pytest.raises(ValueError):
        run(ds, relu(), AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01), k_max=1)


def test_non_finite_reported_with_iteration(monkeypatch):
    import neuron_dro.driver as drv

    calls = {"n": 0}
    real = drv.dual_step

    def flaky(prob):
        calls["n"] += 1
        p = real(prob)
        return p * np.nan if calls["n"] == 3 else p

    monkeypatch.setattr(drv, "dual_step", flaky)
    ds = truncate_labels(make_dataset([[1.0], [2.0]], [0.5, 1.0]), 2.0)
    with pytest.raises(NumericalError, match="iteration 3"):
        run(ds, relu(), AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01), k_max=5)


def test_early_stop_on_stall():
    # at w = 0 with zero labels every field vanishes, so nothing moves
    ds = truncate_labels(make_dataset(np.eye(3), np.zeros(3)), 1.0)
    res = run(ds, relu(), AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01), k_max=1000)
    assert res.stopped_early and res.iterations == 10


def test_deterministic_trace():
    gen = GeneratorConfig(d=3, n=300, w_star=[0.5, 0.2, 0.0], W=1, seed=4,
                          label_model="gaussian_noise", noise_std=0.2)
    ds = truncate_labels(generate(gen), 3.0)
    cfg = AlgoConfig(nu=2.0, c1=0.1, W=1.0, epsilon=0.01)
    ref = make_reference(ds, relu(), 2.0, gen.w_star)
    a = run(ds, relu(), cfg, ref, k_max=200)
    b = run(ds, relu(), cfg, ref, k_max=200)
    for name in a.trace.columns:
        assert np.array_equal(a.trace.column(name), b.trace.column(name), equal_nan=True)


def test_step_schedule_invariants():
    # running sums, closed form and both step-size inequalities
    for nu, c1, kappa, G, nu0 in [(1.0, 8.0, 2.0, 2.0, 1.0), (55.9, 0.035, 45.7, 300.5, 219.0),
                                  (0.01, 0.5, 3.0, 1.0, 0.001), (3.0, 0.2, 10.0, 10.0, 0.25)]:
        sched = step_schedule(nu, c1, kappa, G, nu0)
        A_prev, A, comp = 0.0, 0.0, 0.0
        # stop before (1 + eta)^i overflows when eta is large
        k = min(10_000, int(250 / math.log1p(sched.eta)))
        for i in range(1, k + 1):
            a = sched.a(i)
            t = A + a
            comp += (A - t) + a if abs(A) >= a else (a - t) + A
            A = t
            A_i = A + comp
            assert abs(A_i - sched.A(i)) <= 1e-12 * sched.A(i)
            assert 2 * G ** 2 * a ** 2 <= (1 + 0.5 * c1 * A_i) * (nu0 + nu * A_prev) * (1 + 1e-12)
            assert 2 * kappa ** 2 * a ** 2 <= (1 + 0.5 * c1 * A_i) * (1 + 0.5 * c1 * A_prev) / 4 * (1 + 1e-12)
            A_prev = A_i


def test_zero_test_examples():
    gen = GeneratorConfig(d=2, n=100, w_star=[1.0, 0.0], W=1, seed=2)
    ds = truncate_labels(generate(gen), 3.0)
    cfg = AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01)
    np.testing.assert_array_equal(zero_test(ds, relu(), cfg, [1.0, 0.0]), [1.0, 0.0])
    zeros = truncate_labels(make_dataset(ds.X, np.zeros(100)), 3.0)
    np.testing.assert_array_equal(zero_test(zeros, relu(), cfg, [0.3, 0.1]), [0.0, 0.0])


def test_zero_test_picks_lower_risk():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    y = 0.01 * rng.choice([-1.0, 1.0], 200)
    ds = truncate_labels(make_dataset(X, y), 1.0)
    cfg = AlgoConfig(nu=0.5, c1=1.0, W=1.0, epsilon=0.01)
    obj = RegularizedObjective(ds, relu(), 0.5)
    for w in ([0.001, 0.0], [0.2, -0.1]):
        out = zero_test(ds, relu(), cfg, w)
        r = [risk_closed_form(np.zeros(2), obj)[0], risk_closed_form(w, obj)[0]]
        assert risk_closed_form(out, obj)[0] == min(r)


def test_config_validation():
    with pytest.raises(ValueError, match="nu"):
        AlgoConfig(nu=0.0, c1=1.0, W=1.0, epsilon=0.01)
    with pytest.raises(ValueError, match="bound_mode"):
        AlgoConfig(nu=1.0, c1=1.0, W=1.0, epsilon=0.01, bound_mode="loose")


def test_lower_bound_on_traces(realizable_instance, agnostic_instance):
    # per-iterate gap lower bound (valid while iterates stay in B(2||w*||))
    for inst in (realizable_instance, agnostic_instance):
        tr = inst.result.trace
        inside = tr.column("w_norm") <= 2 * np.linalg.norm(inst.w_star)
        assert np.all(tr.column("gap")[inside] >= tr.column("gap_lb")[inside] - 1e-6)


def test_default_budget_used_when_unset():
    ds = truncate_labels(make_dataset([[1.0]], [0.5]), 2.0)
    cfg = AlgoConfig(nu=1.0, c1=8.0, W=1.0, epsilon=0.4, nu0=1.0)
    ref = make_reference(ds, relu(), 1.0, [0.5])
    res = run(ds, relu(), cfg, ref)
    S, G, kappa = measure_bounds(ds, relu(), 1.0, 2.0)
    assert res.iterations <= theoretical_iteration_budget(cfg, kappa, G, 0.5 * 0.25 + 0.0)
