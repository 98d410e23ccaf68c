"""Empirical checks of the distributional assumptions and final guarantees.

None of these certify anything; they measure the constants on a concrete
sample so the algorithm can be configured and its output judged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .empirical import RegularizedObjective, chi2, qhat, risk_closed_form

GAMMAS = (0.05, 0.1, 0.2, 0.5)


def check_margin(weights, ds, w_star, gamma: float) -> float:
    """Smallest eigenvalue of ``sum_j weights_j x_j x_j^T 1{w* . x_j >= gamma ||w*||}``."""
    w_star = np.asarray(w_star, dtype=float)
    nrm = np.linalg.norm(w_star)
    if nrm == 0:
        raise ValueError("w_star must be nonzero")
    X = ds.X
    sel = (X @ w_star) >= gamma * nrm
    wx = X[sel] * np.asarray(weights)[sel, None]
    A = X[sel].T @ wx
    # A is positive semidefinite; clip round-off below zero
    return max(float(np.linalg.eigvalsh(0.5 * (A + A.T))[0]), 0.0)


def margin_sweep(weights, ds, w_star, gammas=GAMMAS) -> dict:
    return {float(g): check_margin(weights, ds, w_star, g) for g in gammas}


@dataclass
class SharpnessReport:
    c0_hat: float
    c1_hat: float
    moment2_max: float
    moment4_max: float
    margin_lambda_hat: float
    margin_by_gamma: dict
    B: float
    trials: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margin_by_gamma"] = {str(k): v for k, v in self.margin_by_gamma.items()}
        return d


def _ball_points(rng, n, d, radius):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return u * r[:, None]


def sharpness_ratios(weights, X, w_star, act, W_trials, chunk: int = 128) -> np.ndarray:
    """``E_p[(sigma(w.x) - sigma(w*.x)) (w.x - w*.x)] / ||w - w*||^2`` per row of ``W_trials``."""
    z0 = X @ w_star
    s0 = act.value(z0)
    out = np.empty(len(W_trials))
    for k in range(0, len(W_trials), chunk):
        Wc = W_trials[k:k + chunk]
        Z = X @ Wc.T
        num = weights @ ((act.value(Z) - s0[:, None]) * (Z - z0[:, None]))
        out[k:k + chunk] = num / np.sum((Wc - w_star) ** 2, axis=1)
    return out


def estimate_sharpness(weights, ds, w_star, act, trials: int = 1000, epsilon: float = 0.01,
                       B: float = 1.0, seed: int = 0) -> SharpnessReport:
    """Sample ``trials`` points of ``B(2||w*||)`` at distance ``>= sqrt(epsilon)``
    from ``w*`` and report the smallest sharpness ratio (``c0_hat = 2 min``),
    the largest directional second and fourth moments and the margin sweep.
    """
    if trials < 100:
        raise ValueError("trials must be at least 100")
    w_star = np.asarray(w_star, dtype=float)
    weights = np.asarray(weights, dtype=float)
    X = ds.X
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    radius = 2.0 * np.linalg.norm(w_star)
    min_dist = math.sqrt(epsilon)

    pts = np.empty((0, d))
    if radius > min_dist:
        for _ in range(1000):
            cand = _ball_points(rng, 4 * trials, d, radius)
            cand = cand[np.linalg.norm(cand - w_star, axis=1) >= min_dist]
            pts = np.vstack([pts, cand])[:trials]
            if len(pts) == trials:
                break
    if len(pts) < trials:
        # the ball is too small to keep sqrt(epsilon) away from w*; fall back
        # to points on the sphere of that radius around w*
        u = rng.standard_normal((trials - len(pts), d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts = np.vstack([pts, w_star + min_dist * u])
    ratios = sharpness_ratios(weights, X, w_star, act, pts)
    c0 = max(2.0 * float(np.min(ratios)), 0.0)

    U = rng.standard_normal((trials, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    proj = X @ U.T
    m2 = float(np.max(weights @ proj ** 2))
    m4 = float(np.max(weights @ proj ** 4))

    if np.linalg.norm(w_star) > 0:
        sweep = margin_sweep(weights, ds, w_star)
        lam = max(sweep.values())
    else:
        sweep, lam = {}, 0.0
    return SharpnessReport(c0, c0 * c0 / (24.0 * B), m2, m4, lam, sweep, B, trials)


def nu_threshold(opt2: float, c1: float, beta: float, B: float, epsilon: float) -> float:
    """Smallest penalty allowed by the convergence guarantee."""
    return 8.0 * beta ** 2 * math.sqrt(6.0 * B) * math.sqrt(opt2 + epsilon) / c1


def ambiguity_bound(c1: float, beta: float, B: float) -> float:
    return c1 / (1536.0 * beta ** 4 * B)


def check_ambiguity_radius(w_star, obj: RegularizedObjective, B: float, c1: float):
    """Return ``(chi2(p*, p0), bound, passed)``."""
    _, value = risk_closed_form(w_star, obj)
    bound = ambiguity_bound(c1, obj.act.beta, B)
    return value, bound, bool(value <= bound + 1e-12)


def bound_constants(B: float, c1: float, beta: float):
    C3 = 16.0 * beta * math.sqrt(B) / c1
    C4 = 1.0 + 2.0 * (10.0 * B * beta ** 2 + c1) * C3 + c1 * math.sqrt(5.0 * B) * beta ** 2 * C3 ** 2
    return C3, C4


def final_bounds_report(w_hat, w_star, obj: RegularizedObjective, B: float, c1: float,
                        epsilon: float) -> dict:
    """Check the distance, square-loss and risk guarantees for ``w_hat``.

    Each entry carries ``lhs``, ``rhs``, ``margin = rhs - lhs`` and
    ``passed``.  Without ``w_star`` the report is marked not applicable.
    """
    if w_star is None:
        return {"applicable": False}
    beta = obj.act.beta
    w_hat = np.asarray(w_hat, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    C3, C4 = bound_constants(B, c1, beta)
    p_star = qhat(w_star, obj)
    ell_star = obj.losses(w_star)
    OPT = float(np.dot(p_star, ell_star))

    def entry(lhs, rhs):
        return {"lhs": float(lhs), "rhs": float(rhs), "margin": float(rhs - lhs),
                "passed": bool(lhs <= rhs)}

    dist = float(np.linalg.norm(w_hat - w_star))
    sq = float(np.dot(p_star, obj.losses(w_hat)))
    r_hat, _ = risk_closed_form(w_hat, obj)
    r_star, _ = risk_closed_form(w_star, obj)
    return {
        "applicable": True,
        "C3": C3,
        "C4": C4,
        "OPT_hat": OPT,
        "distance": entry(dist, C3 * math.sqrt(OPT) + math.sqrt(epsilon)),
        "square_loss": entry(sq, (2.0 + 20.0 * B * beta ** 2 * C3 ** 2) * OPT
                             + 10.0 * beta ** 2 * B * epsilon),
        "risk": entry(r_hat - r_star, C4 * (OPT + epsilon)),
        "chi2_target": chi2(p_star, obj.p0) if obj.nu > 0 else float("nan"),
    }
