"""Closed form versus brute-force agreement suites.

Each suite draws seeded random instances, computes a quantity two ways and
reports the worst disagreement.  ``fault=True`` perturbs the fast side by a
small amount so that the suite must fail; it exists to check that the
harness can actually detect a broken implementation.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .activations import relu
from .datagen import GeneratorConfig, TruncationParams, compute_truncation_level, generate, make_dataset, truncate_labels
from .driver import AlgoConfig, calibrate, make_reference, run, step_schedule
from .empirical import RegularizedObjective, objective_L, qhat_closed_form, qhat_general, risk_closed_form
from .solvers import DualStepProblem, brute_dual_max, brute_dual_step, dual_step, simplex_project, weighted_threshold

SUITES = ("qhat", "risk", "dual_step", "simplex_project", "step_sizes", "gap_sandwich")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.cases} cases, worst {self.worst:.3e} "
                f"(tol {self.tolerance:.0e}), {self.seconds:.2f}s")


def _kick(p, size=1e-6):
    # move mass between two coordinates so p stays a weight vector
    q = np.array(p, dtype=float)
    if q.size > 1:
        j = int(np.argmax(q))
        q[j] -= size
        q[(j + 1) % q.size] += size
    return q


def random_instance(rng, max_n=50):
    """Random data, point and penalty with ``nu >= E_p0[loss]``."""
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(1, 5))
    ds = make_dataset(rng.normal(size=(n, d)), rng.normal(size=n) * rng.choice([0.5, 2.0]))
    w = rng.normal(size=d)
    ell = RegularizedObjective(ds, relu(), 1.0).losses(w)
    nu = max(float(ds.ref_weights @ ell), 1e-3) * rng.uniform(1.0, 4.0)
    return RegularizedObjective(ds, relu(), nu), w


def suite_qhat(rng, cases=100, max_n=50, fault=False):
    worst = 0.0
    ok = True
    for _ in range(cases):
        obj, w = random_instance(rng, max_n)
        val, p = brute_dual_max(w, obj)
        c = qhat_closed_form(w, obj)
        g = qhat_general(w, obj)
        if fault:
            c = _kick(c)
        err = max(np.max(np.abs(c - p)), np.max(np.abs(g - p)))
        obj_err = abs(objective_L(w, c, obj) - val) / max(1.0, abs(val))
        worst = max(worst, err)
        ok &= err <= 1e-8 and obj_err <= 1e-9
    return ok, worst, 1e-8


def suite_risk(rng, cases=100, max_n=50, fault=False):
    worst = 0.0
    ok = True
    for _ in range(cases):
        obj, w = random_instance(rng, max_n)
        val, _ = brute_dual_max(w, obj)
        R, c2 = risk_closed_form(w, obj)
        ell = obj.losses(w)
        mean = float(obj.p0 @ ell)
        var = float(obj.p0 @ (ell - mean) ** 2)
        if fault:
            R += 1e-8
        err = max(abs(R - val), abs(c2 - var / (4 * obj.nu ** 2)))
        worst = max(worst, err)
        ok &= err <= 1e-10
    return ok, worst, 1e-10


def suite_dual_step(rng, cases=100, max_n=50, fault=False):
    worst = 0.0
    ok = True
    for _ in range(cases):
        n = int(rng.integers(2, max_n + 1))
        a, m, nu = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), 3))
        ell = rng.exponential(1.0, n) * rng.choice([0.1, 1.0, 10.0])
        p0 = np.full(n, 1.0 / n) if rng.random() < 0.5 else rng.dirichlet(np.full(n, 20.0))
        prob = DualStepProblem(ell, a, m, nu, p0, rng.dirichlet(np.ones(n)))
        p = dual_step(prob)
        if fault:
            p = _kick(p)
        _, q, _ = brute_dual_step(prob)
        err = float(np.max(np.abs(p - q)))
        worst = max(worst, err)
        ok &= err <= 1e-8
    return ok, worst, 1e-8


def enumerate_projection(v, w):
    """Weighted simplex projection by trying every support set."""
    n = len(v)
    best, best_val = None, np.inf
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            S = list(S)
            theta = (v[S].sum() - 1.0) / w[S].sum()
            p = np.zeros(n)
            p[S] = v[S] - w[S] * theta
            if np.any(p < -1e-14):
                continue
            val = np.sum((p - v) ** 2 / w)
            if val < best_val:
                best, best_val = p, val
    return best


def suite_simplex_project(rng, cases=100, max_n=50, fault=False):
    worst = 0.0
    for _ in range(cases):
        # small sizes against enumeration, larger against the sorted threshold
        n = int(rng.integers(1, 7))
        v = rng.normal(size=n) * rng.choice([0.1, 1.0, 5.0])
        w = rng.uniform(0.1, 3.0, n)
        p = simplex_project(v, w)
        if fault:
            p = _kick(p)
        worst = max(worst, float(np.max(np.abs(p - enumerate_projection(v, w)))))

        n = int(rng.integers(2, max(max_n, 2) + 1))
        v = rng.normal(size=n) * rng.choice([0.1, 1.0, 5.0])
        w = rng.uniform(0.1, 3.0, n)
        _, q = weighted_threshold(v / w, w, 1.0)
        worst = max(worst, float(np.max(np.abs(simplex_project(v, w) - q))))
    return worst <= 1e-12, worst, 1e-12


def suite_step_sizes(rng, cases=5, max_n=50, fault=False):
    worst = 0.0
    ok = True
    for _ in range(cases):
        nu, c1, kappa, G, nu0 = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), 5))
        sched = step_schedule(nu, c1, kappa, G, nu0)
        k = min(10_000, int(250 / math.log1p(sched.eta)))
        A = comp = A_prev = 0.0
        for i in range(1, k + 1):
            a = sched.a(i) * (1 + 1e-9 if fault else 1.0)
            t = A + a
            comp += (A - t) + a if abs(A) >= a else (a - t) + A
            A = t
            A_i = A + comp
            rel = abs(A_i - sched.A(i)) / sched.A(i)
            worst = max(worst, rel)
            ok &= rel <= 1e-12
            ok &= 2 * G * G * a * a <= (1 + 0.5 * c1 * A_i) * (nu0 + nu * A_prev) * (1 + 1e-12)
            ok &= 2 * kappa * kappa * a * a <= (1 + 0.5 * c1 * A_i) * (1 + 0.5 * c1 * A_prev) / 4 * (1 + 1e-12)
            A_prev = A_i
    return bool(ok), worst, 1e-12


def suite_gap_sandwich(rng, cases=2, max_n=50, fault=False):
    worst = -np.inf
    act = relu()
    for _ in range(cases):
        d = 2
        w_star = rng.normal(size=d)
        w_star *= rng.uniform(0.5, 1.0) / np.linalg.norm(w_star)
        seed = int(rng.integers(2 ** 31))
        adversarial = rng.random() < 0.5
        W, eps = 2.0, 0.01
        M = compute_truncation_level(TruncationParams(W=W, epsilon=eps))
        gen = GeneratorConfig(d=d, n=max(4 * max_n, 20), w_star=list(w_star), W=W, seed=seed,
                              label_model="adversarial" if adversarial else "realizable",
                              fraction=0.05 if adversarial else 0.0, magnitude=M)
        ds = truncate_labels(generate(gen, act), M)
        cal = calibrate(ds, act, w_star, eps, trials=200, seed=seed)
        cfg = AlgoConfig(nu=cal.nu, c1=cal.c1, W=W, epsilon=eps)
        res = run(ds, act, cfg, make_reference(ds, act, cal.nu, w_star), k_max=300)
        tr = res.trace
        cum_gap = tr.column("cum_gap")
        if fault:
            cum_gap = tr.column("cum_lb") - 1.0
        below = np.max(tr.column("cum_lb") - cum_gap)
        above = np.max(cum_gap - tr.column("gap_ub"))
        step = np.max(tr.column("gap_lb") - tr.column("gap"))
        worst = max(worst, below, above, step)
    return bool(worst <= 1e-6), float(worst), 1e-6


_FUNCS = {
    "qhat": suite_qhat,
    "risk": suite_risk,
    "dual_step": suite_dual_step,
    "simplex_project": suite_simplex_project,
    "step_sizes": suite_step_sizes,
    "gap_sandwich": suite_gap_sandwich,
}


def run_suite(name, seed=0, max_n=50, fault=False) -> SuiteResult:
    rng = np.random.default_rng([seed, SUITES.index(name)])
    t0 = time.perf_counter()
    ok, worst, tol = _FUNCS[name](rng, max_n=max_n, fault=fault)
    cases = _FUNCS[name].__defaults__[0]
    return SuiteResult(name, bool(ok), float(worst), tol, cases, time.perf_counter() - t0)


def run_all(seed=0, max_n=50, threads=1, inject=()) -> list:
    """Run every suite; ``inject`` names suites to run with a planted fault."""
    jobs = [(n, seed, max_n, n in inject) for n in SUITES]
    if threads <= 1:
        return [run_suite(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda j: run_suite(*j), jobs))
