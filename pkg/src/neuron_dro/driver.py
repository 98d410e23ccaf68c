"""The primal-dual method end to end.

Iteration ``i >= 1`` performs

1. ``a_i = a_1 (1 + eta)^(i - 1)``, ``A_i = A_{i-1} + a_i``;
2. ``g = V_{i-1} + (a_{i-1} / a_i) (V_{i-1} - V_{i-2})`` with
   ``V_j = E_{p_j}[v(w_j)]``;
3. ``w_i = proj_B(W)(w_{i-1} - a_i g / (1 + c1 A_{i-1} / 2))``;
4. ``p_i`` maximises ``a_i L(w_i, p) - (nu0 + nu A_{i-1}) D(p, p_{i-1})``,

starting from ``w_0 = 0``, ``p_0 = p0`` and ``a_0 = A_0 = 0``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .activations import Activation
from .datagen import Dataset, PreconditionError, measure_bounds
from .diagnostics import estimate_sharpness, nu_threshold
from .empirical import (RegularizedObjective, chi2, clamp_labels, qhat, risk_closed_form)
from .solvers import DualStepProblem, dual_step, primal_step

STALL_TOL = 1e-12
STALL_COUNT = 10


class NumericalError(FloatingPointError):
    pass


def default_nu0(beta: float, B: float, epsilon: float, c1: float) -> float:
    return 768.0 * beta ** 4 * B * epsilon / c1


@dataclass
class AlgoConfig:
    """Scalars of the method.

    ``nu0`` defaults to ``768 beta^4 B epsilon / c1`` and ``k_max`` to the
    theoretical iteration budget when left as ``None``.  ``k_max = 0``
    returns the initial point.
    """

    nu: float
    c1: float
    W: float
    epsilon: float
    nu0: float | None = None
    k_max: int | None = None
    B: float = 1.0
    C_M: float = 1.0
    bound_mode: str = "tight"
    c1_source: str = "supplied"
    record_diagnostics: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("nu", "c1", "W", "epsilon", "B", "C_M"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"{name}: must be a positive finite number")
        if self.nu0 is not None and not self.nu0 > 0:
            raise ValueError("nu0: must be positive")
        if self.k_max is not None and not (isinstance(self.k_max, int) and self.k_max >= 0):
            raise ValueError("k_max: must be a nonnegative integer")
        if self.bound_mode not in ("tight", "worst_case"):
            raise ValueError("bound_mode: must be 'tight' or 'worst_case'")
        if self.c1_source not in ("supplied", "estimated"):
            raise ValueError("c1_source: must be 'supplied' or 'estimated'")

    def resolved_nu0(self, beta: float) -> float:
        if self.nu0 is not None:
            return self.nu0
        return default_nu0(beta, self.B, self.epsilon, self.c1)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class StepSchedule:
    a1: float
    eta: float
    scale: float  # min(nu0, 1/4) / min(nu, c1/8)

    def a(self, i: int) -> float:
        if i <= 0:
            return 0.0
        return self.a1 * math.exp((i - 1) * math.log1p(self.eta))

    def A(self, k: int) -> float:
        """Closed-form partial sum ``a_1 + ... + a_k``."""
        if k <= 0:
            return 0.0
        return self.scale * math.expm1(k * math.log1p(self.eta))


def step_schedule(nu, c1, kappa, G, nu0) -> StepSchedule:
    big = 2.0 * max(kappa, G)
    small = min(nu, c1 / 8.0)
    return StepSchedule(min(nu0, 0.25) / big, small / big, min(nu0, 0.25) / small)


def step_size(i: int, nu, c1, kappa, G, nu0) -> float:
    """``a_i = (1 + eta)^(i-1) min(nu0, 1/4) / (2 max(kappa, G))``."""
    if i < 1:
        raise ValueError("i must be at least 1")
    return step_schedule(nu, c1, kappa, G, nu0).a(i)


def theoretical_iteration_budget(cfg: AlgoConfig, kappa, G, D0, beta: float = 1.0) -> int:
    """``ceil((1 + 1/eta) log(D0 / epsilon))``, or 1 when ``D0 <= epsilon``."""
    eps = cfg.epsilon
    if D0 <= eps:
        return 1
    eta = step_schedule(cfg.nu, cfg.c1, kappa, G, cfg.resolved_nu0(beta)).eta
    return int(math.ceil((1.0 + 1.0 / eta) * math.log(D0 / eps)))


def initial_distance(w_star, p_star, p0, nu0: float, w0=None) -> float:
    """``||w* - w_0||^2 / 2 + nu0 chi2(p*, p0)``."""
    w_star = np.asarray(w_star, dtype=float)
    w0 = np.zeros_like(w_star) if w0 is None else w0
    return 0.5 * float(np.sum((w_star - w0) ** 2)) + nu0 * chi2(p_star, p0)


# ---------------------------------------------------------------------------
# state


@dataclass
class IterateState:
    """Two most recent iterates with their step sizes and weighted fields."""

    i: int
    w_curr: np.ndarray
    w_prev: np.ndarray
    p_curr: np.ndarray
    p_prev: np.ndarray
    a_curr: float
    a_prev: float
    A_curr: float
    A_prev: float
    V_curr: np.ndarray  # E_{p_curr}[v(w_curr)]
    V_prev: np.ndarray


def extrapolated_gradient(state: IterateState, a_next: float) -> np.ndarray:
    """``V_i + (a_i / a_{i+1}) (V_i - V_{i-1})`` for the next primal step."""
    if not a_next > 0:
        raise ValueError("next step size must be positive")
    return state.V_curr + (state.a_curr / a_next) * (state.V_curr - state.V_prev)


# ---------------------------------------------------------------------------
# reference quantities for diagnostics


@dataclass
class Reference:
    """Target point and derived constants used by the trace diagnostics."""

    w_star: np.ndarray
    p_star: np.ndarray
    OPT: float
    OPT2: float
    B: float


def make_reference(ds: Dataset, act: Activation, nu: float, w_star, B: float = 1.0) -> Reference:
    obj = RegularizedObjective(ds, act, nu)
    w_star = np.asarray(w_star, dtype=float)
    p_star = qhat(w_star, obj)
    ell = obj.losses(w_star)
    return Reference(w_star, p_star, float(p_star @ ell), float(p_star @ (ell * ell)), B)


TRACE_BASE = ("i", "a", "A", "A_closed", "w_norm", "move", "L")
TRACE_DIAG = ("dist", "gap", "gap_lb", "cum_gap", "cum_lb", "gap_ub", "chi2_p_pstar",
              "S", "S_rhs")


@dataclass
class Trace:
    columns: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.columns.get("i", ()))

    def column(self, name) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def rows(self):
        names = list(self.columns)
        for vals in zip(*(self.columns[n] for n in names)):
            yield dict(zip(names, vals))

    def to_csv(self, path) -> None:
        names = list(self.columns)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(names)
            for vals in zip(*(self.columns[n] for n in names)):
                wr.writerow([repr(v) if isinstance(v, float) else v for v in vals])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(list(self.rows()), fh)


@dataclass
class RunResult:
    w_hat: np.ndarray
    p_hat: np.ndarray
    trace: Trace
    iterations: int
    stopped_early: bool
    G: float
    kappa: float
    S: float
    nu0: float
    schedule: StepSchedule


# ---------------------------------------------------------------------------
# the method


def run(ds: Dataset, act: Activation, cfg: AlgoConfig, reference: Reference | None = None,
        k_max: int | None = None) -> RunResult:
    """Run the primal-dual method on a truncated dataset.

    ``reference`` enables the gap, sandwich and per-step diagnostics.
    ``k_max`` overrides ``cfg.k_max``; if both are ``None`` the theoretical
    budget is used (which needs ``reference`` to evaluate ``D0``).
    """
    if not ds.truncated:
        raise PreconditionError("dataset labels must be truncated before training")
    beta = act.beta
    M = ds.M
    W = cfg.W
    S, G, kappa = measure_bounds(ds, act, W, M, cfg.bound_mode)
    nu, c1 = cfg.nu, cfg.c1
    nu0 = cfg.resolved_nu0(beta)
    sched = step_schedule(nu, c1, kappa, G, nu0)

    X, y, p0 = ds.X, ds.y, ds.ref_weights
    yM = clamp_labels(y, M)
    d = ds.d

    if k_max is None:
        k_max = cfg.k_max
    if k_max is None:
        if reference is not None:
            D0 = initial_distance(reference.w_star, reference.p_star, p0, nu0)
        else:
            D0 = unknown_target_distance(W, nu0, c1, beta, cfg.B)
        k_max = theoretical_iteration_budget(cfg, kappa, G, D0, beta)

    diag = reference is not None and cfg.record_diagnostics
    tr = {n: [] for n in TRACE_BASE + (TRACE_DIAG if diag else ())}

    def field_and_losses(w, p):
        z = X @ w
        s = act.value(z)
        r = s - y
        V = 2.0 * beta * (X.T @ (p * (s - yM)))
        return s, r * r, V

    w = np.zeros(d)
    p = p0.copy()
    _, _, V = field_and_losses(w, p)
    state = IterateState(0, w, w.copy(), p, p.copy(), 0.0, 0.0, 0.0, 0.0, V, V.copy())

    if diag:
        w_star, p_star = reference.w_star, reference.p_star
        s_star = act.value(X @ w_star)
        ell_star = (s_star - y) ** 2
        chi2_star = chi2(p_star, p0)
        lb_const = -12.0 * beta ** 2 * reference.B * reference.OPT / c1
        err_coef = 8.0 * beta ** 2 * math.sqrt(6.0 * reference.B) * math.sqrt(reference.OPT2) / c1
        err_const = 48.0 * beta ** 2 * reference.B * reference.OPT / c1
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_pstar = np.where(p_star > 0, 1.0 / p_star, np.inf)
        ub0 = 0.5 * float(w_star @ w_star) + nu0 * chi2_star
        cum_gap = cum_lb = cum_err = 0.0
        c_gap = c_lb = c_err = 0.0  # Neumaier compensation terms

    A_run, A_comp = 0.0, 0.0
    stall = 0
    stopped_early = False
    it = 0
    for i in range(1, k_max + 1):
        a = sched.a(i)
        g = extrapolated_gradient(state, a)
        A_prev = state.A_curr
        w_new = primal_step(state.w_curr, g, a, A_prev, c1, W)
        s = act.value(X @ w_new)
        ell = (s - y) ** 2
        prob = DualStepProblem(ell, a, nu0 + nu * A_prev, nu, p0, state.p_curr)
        p_new = dual_step(prob)
        V_new = 2.0 * beta * (X.T @ (p_new * (s - yM)))

        # Neumaier running sum of the step sizes
        t = A_run + a
        if abs(A_run) >= a:
            A_comp += (A_run - t) + a
        else:
            A_comp += (a - t) + A_run
        A_run = t
        A_new = A_run + A_comp

        if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(p_new))
                and np.all(np.isfinite(V_new))):
            raise NumericalError(f"non-finite iterate at iteration {i}")

        move = float(np.linalg.norm(w_new - state.w_curr))
        L_val = float(p_new @ ell) - nu * float(np.sum((p_new - p0) ** 2 / p0))
        tr["i"].append(i)
        tr["a"].append(a)
        tr["A"].append(A_new)
        tr["A_closed"].append(sched.A(i))
        tr["w_norm"].append(float(np.linalg.norm(w_new)))
        tr["move"].append(move)
        tr["L"].append(L_val)

        if diag:
            dw = w_star - w_new
            dist2 = float(dw @ dw)
            chi2_p = float(np.sum((p_new - p0) ** 2 / p0))
            D_star = float(np.sum((p_star - p_new) ** 2 / p0))
            gap_i = (float(p_star @ ell) - nu * chi2_star) - (float(p_new @ ell_star) - nu * chi2_p)
            lb_i = lb_const + 0.5 * c1 * dist2 + nu * D_star
            with np.errstate(invalid="ignore"):
                chi2_pp = float(np.sum((p_new - p_star) ** 2 * inv_pstar))
            E_i = 0.25 * c1 * dist2 + err_coef * chi2_pp + err_const
            ds_ = s_star - s
            S_i = float(p_new @ (ds_ * ds_)) + float(p_new @ (2.0 * (s - y) * ds_))
            S_rhs = float(V_new @ dw) - E_i

            cum_gap, c_gap = _neumaier(cum_gap, c_gap, a * gap_i)
            cum_lb, c_lb = _neumaier(cum_lb, c_lb, a * lb_i)
            cum_err, c_err = _neumaier(cum_err, c_err, a * (0.25 * c1 * dist2 + err_coef * chi2_pp))
            ub = (ub0 - 0.5 * (1.0 + 0.5 * c1 * A_new) * dist2 - (nu0 + nu * A_new) * D_star
                  + (cum_err + c_err) + err_const * A_new)
            tr["dist"].append(math.sqrt(dist2))
            tr["gap"].append(gap_i)
            tr["gap_lb"].append(lb_i)
            tr["cum_gap"].append(cum_gap + c_gap)
            tr["cum_lb"].append(cum_lb + c_lb)
            tr["gap_ub"].append(ub)
            tr["chi2_p_pstar"].append(chi2_pp)
            tr["S"].append(S_i)
            tr["S_rhs"].append(S_rhs)

        state = IterateState(i, w_new, state.w_curr, p_new, state.p_curr, a, state.a_curr,
                             A_new, A_prev, V_new, state.V_curr)
        it = i
        stall = stall + 1 if move <= STALL_TOL else 0
        if stall >= STALL_COUNT:
            stopped_early = True
            break

    return RunResult(state.w_curr, state.p_curr, Trace(tr), it, stopped_early, G, kappa, S,
                     nu0, sched)


def _neumaier(total, comp, x):
    t = total + x
    if abs(total) >= abs(x):
        comp += (total - t) + x
    else:
        comp += (x - t) + total
    return t, comp


def unknown_target_distance(W: float, nu0: float, c1: float, beta: float, B: float) -> float:
    """Upper estimate of ``D0`` when the target point is not known.

    Uses ``||w*|| <= W`` and the largest ambiguity radius the guarantee allows.
    """
    return 0.5 * W * W + nu0 * c1 / (1536.0 * beta ** 4 * B)


def zero_test(ds: Dataset, act: Activation, cfg: AlgoConfig, w_hat) -> np.ndarray:
    """Return whichever of ``0`` and ``w_hat`` has the smaller DRO risk (ties to ``w_hat``)."""
    obj = RegularizedObjective(ds, act, cfg.nu)
    w_hat = np.asarray(w_hat, dtype=float)
    zero = np.zeros_like(w_hat)
    r0, _ = risk_closed_form(zero, obj)
    r1, _ = risk_closed_form(w_hat, obj)
    return zero if r0 < r1 else w_hat.copy()


# ---------------------------------------------------------------------------
# calibration of nu and c1 on data with a known target


@dataclass
class Calibration:
    nu: float
    c1: float
    OPT: float
    OPT2: float
    rounds: int
    sharpness: object


def calibrate(ds: Dataset, act: Activation, w_star, epsilon: float, B: float = 1.0,
              trials: int = 1000, seed: int = 0, rounds: int = 5, rtol: float = 1e-6,
              c1: float | None = None) -> Calibration:
    """Estimate ``c1`` and the smallest admissible ``nu`` at a known ``w*``.

    The two depend on each other through the worst-case weights ``p*``:
    ``c1`` is measured under ``p*(nu)`` and ``nu`` must satisfy
    ``nu >= 8 beta^2 sqrt(6B) sqrt(OPT_2(nu) + epsilon) / c1``.  For fixed
    ``c1`` the right side is non-increasing in ``nu`` so the smallest
    solution is found by root bracketing; the two estimates are then
    alternated until ``c1`` stops changing.  A supplied ``c1`` is kept
    fixed and only ``nu`` is solved for.
    """
    w_star = np.asarray(w_star, dtype=float)
    beta = act.beta
    ell = RegularizedObjective(ds, act, 1.0).losses(w_star)
    p0 = ds.ref_weights

    def opt2_at(nu):
        obj = RegularizedObjective(ds, act, nu)
        q = qhat(w_star, obj)
        return float(q @ (ell * ell)), float(q @ ell), q

    fixed = c1
    if fixed is not None and not fixed > 0:
        raise ValueError("c1: must be positive")
    weights = p0
    c1 = nu = float("nan")
    rep = None
    r = 0
    for r in range(1, rounds + 1):
        if fixed is None:
            rep = estimate_sharpness(weights, ds, w_star, act, trials, epsilon, B, seed)
            if not rep.c1_hat > 0:
                raise ValueError("estimated sharpness is zero; supply c1 explicitly")
            new_c1 = rep.c1_hat
        else:
            new_c1 = fixed

        def excess(v):
            return v - nu_threshold(opt2_at(v)[0], new_c1, beta, B, epsilon)

        lo = nu_threshold(0.0, new_c1, beta, B, epsilon)
        # E_q[l^2] never exceeds max(l)^2, so this end has nonnegative excess
        hi = nu_threshold(float(np.max(ell)) ** 2, new_c1, beta, B, epsilon)
        if excess(lo) >= 0:
            new_nu = lo
        else:
            new_nu = brentq(excess, lo, hi, xtol=1e-12, rtol=1e-12)
            if excess(new_nu) < 0:
                new_nu = new_nu * (1 + 1e-12)
        done = fixed is not None or (math.isfinite(c1) and abs(new_c1 - c1) <= rtol * c1)
        c1, nu = new_c1, new_nu
        weights = opt2_at(nu)[2]
        if done:
            break
    OPT2, OPT, _ = opt2_at(nu)
    return Calibration(nu, c1, OPT, OPT2, r, rep)
