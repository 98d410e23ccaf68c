"""Prox subproblems of the primal-dual method and brute-force oracles.

The primal subproblem is a linear term plus an isotropic quadratic over a
Euclidean ball, so it reduces to a gradient step followed by a radial
projection.  The dual subproblem is a separable concave quadratic over the
probability simplex.  Its KKT conditions give

    p_j = c_j * max(t_j - lam, 0) / b,    sum_j p_j = 1,

for a scalar multiplier ``lam``; :func:`weighted_threshold` solves for it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateProblemError(ValueError):
    pass


class ResidualError(RuntimeError):
    pass


def project_ball(v, W: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w : ||w||_2 <= W}``."""
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= W:
        return v.copy()
    return v * (W / nrm)


def primal_step(w_prev, g, a_i: float, A_prev: float, c1: float, W: float) -> np.ndarray:
    """Minimise ``a_i <g, w> + (1 + c1 A_prev / 2)/2 ||w - w_prev||^2`` over the ball."""
    w_prev = np.asarray(w_prev, dtype=float)
    scale = a_i / (1.0 + 0.5 * c1 * A_prev)
    return project_ball(w_prev - scale * np.asarray(g, dtype=float), W)


# ---------------------------------------------------------------------------
# weighted threshold (water-filling)


def _mass(c, t, lam, b):
    return float(np.dot(c, np.maximum(t - lam, 0.0))) - b


def weighted_threshold(t, c, b: float, tol: float = 1e-12):
    """Solve ``sum_j c_j (t_j - lam)_+ = b`` for ``lam``.

    Parameters
    ----------
    t : array_like
        Thresholds.
    c : array_like
        Nonnegative weights with at least one positive entry.
    b : float
        Positive budget.

    Returns
    -------
    lam : float
    p : ndarray
        ``c * (t - lam)_+ / b``, renormalised to sum to one.

    Notes
    -----
    When the all-active solution is feasible it is returned in O(N).
    Otherwise the exact active set is found from a descending sort of
    ``t``.  If the residual of the exact solve exceeds ``tol`` (relative to
    ``b``) a bisection pass over the bracket
    ``[min t - b / sum c, max t]`` polishes ``lam``.
    """
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    if not b > 0:
        raise DegenerateProblemError("budget must be positive")
    csum = c.sum()
    if not csum > 0:
        raise DegenerateProblemError("weights must have positive mass")

    lam = (np.dot(c, t) - b) / csum
    pos = c > 0
    if not np.all(t[pos] >= lam):
        order = np.argsort(-t[pos], kind="stable")
        ts = t[pos][order]
        cs = c[pos][order]
        C = np.cumsum(cs)
        T = np.cumsum(cs * ts)
        cand = (T - b) / C
        # the active set is the longest prefix whose last threshold is
        # still above the multiplier it implies (j = 0 always qualifies)
        k = int(np.nonzero(ts > cand)[0].max())
        lam = float(cand[k])

    res = _mass(c, t, lam, b)
    if abs(res) > tol * max(b, 1.0):
        lo = float(np.min(t[pos])) - b / csum
        hi = float(np.max(t[pos]))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _mass(c, t, mid, b) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, abs(mid)):
                break
        lam = 0.5 * (lo + hi)
        res = _mass(c, t, lam, b)
        if abs(res) > 1e-9 * max(b, 1.0):
            raise ResidualError(f"threshold residual {res:.3e} too large")

    p = c * np.maximum(t - lam, 0.0) / b
    return float(lam), p / p.sum()


# ---------------------------------------------------------------------------
# dual prox step


@dataclass(frozen=True)
class DualStepProblem:
    """Data of the dual update.

    Maximise over the simplex::

        a * (sum_j p_j l_j - nu * sum_j (p_j - p0_j)^2 / p0_j)
            - m * sum_j (p_j - p_prev_j)^2 / p0_j
    """

    losses: np.ndarray
    a: float
    m: float
    nu: float
    p0: np.ndarray
    p_prev: np.ndarray

    def objective(self, p) -> float:
        p = np.asarray(p, dtype=float)
        lin = float(np.dot(p, self.losses))
        pen = float(np.sum((p - self.p0) ** 2 / self.p0))
        prox = float(np.sum((p - self.p_prev) ** 2 / self.p0))
        return self.a * (lin - self.nu * pen) - self.m * prox

    def gradient(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (self.a * (self.losses - 2.0 * self.nu * (p - self.p0) / self.p0)
                - 2.0 * self.m * (p - self.p_prev) / self.p0)


def dual_step(prob: DualStepProblem) -> np.ndarray:
    """Exact maximiser of the dual prox subproblem."""
    if prob.m < 0:
        raise ValueError("prox weight must be nonnegative")
    curv = prob.a * prob.nu + prob.m
    if not curv > 0:
        raise DegenerateProblemError("a * nu + m must be positive")
    if prob.a == 0:
        return np.array(prob.p_prev, dtype=float)
    p0 = prob.p0
    t = prob.a * prob.losses + 2.0 * prob.a * prob.nu + 2.0 * prob.m * prob.p_prev / p0
    _, p = weighted_threshold(t, p0, 2.0 * curv)
    return p


# ---------------------------------------------------------------------------
# oracles


def simplex_project(v, weights=None) -> np.ndarray:
    """Weighted projection onto the simplex.

    Minimises ``sum_j (p_j - v_j)^2 / weights_j`` subject to ``p >= 0`` and
    ``sum p = 1``.  The minimiser is ``p_j = max(v_j - weights_j * theta, 0)``;
    ``theta`` is found by Michelot's active-set elimination, which only ever
    removes coordinates and therefore terminates after at most N passes.
    """
    v = np.asarray(v, dtype=float)
    if weights is None:
        weights = np.ones_like(v)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("projection weights must be strictly positive")
    active = np.ones(v.shape, dtype=bool)
    while True:
        theta = (v[active].sum() - 1.0) / weights[active].sum()
        keep = active & (v - weights * theta > 0)
        if keep.sum() == active.sum():
            break
        if not keep.any():
            # all removed would be a numerical accident; keep the largest ratio
            keep = np.zeros_like(active)
            keep[np.argmax(v / weights)] = True
            active = keep
            continue
        active = keep
    p = np.where(active, v - weights * theta, 0.0)
    p = np.maximum(p, 0.0)
    return p / p.sum()


def projected_ascent(objective, gradient, p_init, step: float, tol: float = 1e-13,
                     xtol: float = 1e-12, max_iter: int = 200000):
    """Projected gradient ascent on the simplex with a fixed step.

    Stops once a step improves the objective by less than ``tol`` and moves
    no coordinate by more than ``xtol``.  The second test matters when the
    objective is small in absolute terms but the iterate is still drifting.
    Returns ``(value, p, iterations)``.
    """
    p = simplex_project(p_init)
    f = objective(p)
    for it in range(1, max_iter + 1):
        q = simplex_project(p + step * gradient(p))
        fq = objective(q)
        if fq - f < tol and np.max(np.abs(q - p)) <= xtol:
            if fq > f:
                p, f = q, fq
            return f, p, it
        p, f = q, fq
    return f, p, max_iter


def argmax_uniform(losses, tie_tol: float = 1e-12):
    losses = np.asarray(losses, dtype=float)
    top = losses.max()
    mask = losses >= top - tie_tol
    return float(top), mask / mask.sum()


def brute_dual_max(w, obj, tol: float = 1e-13):
    """Oracle for ``max_p L(w, p)`` by projected gradient ascent.

    ``obj`` needs ``losses(w)``, ``p0`` and ``nu``.  For ``nu == 0`` the
    maximum loss is returned together with uniform weights over the indices
    attaining it.
    """
    losses = np.asarray(obj.losses(w), dtype=float)
    p0 = np.asarray(obj.p0, dtype=float)
    nu = float(obj.nu)
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if nu == 0:
        return argmax_uniform(losses)
    prob = DualStepProblem(losses, 1.0, 0.0, nu, p0, p0)
    return brute_dual_step(prob, tol)[:2]


def brute_dual_step(prob: DualStepProblem, tol: float = 1e-13):
    """Oracle for :func:`dual_step`.  Returns ``(value, p, iterations)``."""
    step = 1.0 / (2.0 * (prob.a * prob.nu + prob.m) / float(np.min(prob.p0)))
    return projected_ascent(prob.objective, prob.gradient, prob.p_prev, step, tol)
