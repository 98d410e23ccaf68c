"""Empirical chi-squared DRO model for a single neuron.

Notation: ``p0`` is the reference weighting of the sample (uniform by
default), ``l_j(w) = (sigma(w . x_j) - y_j)^2`` the per-sample loss and

    L(w, p) = sum_j p_j l_j(w) - nu * chi2(p, p0).

For fixed ``w`` the maximiser of ``L(w, .)`` over the simplex is

    q_j = p0_j * max(l_j - xi + 2 nu, 0) / (2 nu)

with ``xi`` normalising the weights.  When ``nu >= E_p0[l] / 2`` the clamp is
inactive, ``xi = E_p0[l]`` and the maximal value has the variance form
``E_p0[l] + Var_p0(l) / (4 nu)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .solvers import argmax_uniform, brute_dual_max, weighted_threshold

SIMPLEX_TOL = 1e-9


class SupportError(ValueError):
    """A weight vector puts mass where the reference weights vanish."""


def weight_vector(values, n: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate a point of the simplex and renormalise it.

    Raises ``ValueError`` on negative entries, wrong length or a total that
    differs from one by more than ``tol``.
    """
    p = np.array(values, dtype=float).ravel()
    if n is not None and p.size != n:
        raise ValueError(f"weight vector has length {p.size}, expected {n}")
    if p.size == 0 or not np.all(np.isfinite(p)):
        raise ValueError("weight vector must be nonempty and finite")
    if np.any(p < 0):
        raise ValueError("weight vector has negative entries")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"weights sum to {s!r}, not 1")
    return p / s


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


# ---------------------------------------------------------------------------
# losses and the vector field


def loss(w, x, y: float, act: Activation) -> float:
    """Square loss ``(sigma(w . x) - y)^2`` of one sample."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape:
        raise ValueError(f"dimension mismatch: w{w.shape} vs x{x.shape}")
    r = float(act.value(np.dot(w, x))) - y
    return r * r


def losses(w, X, y, act: Activation) -> np.ndarray:
    """Per-sample square losses for a design matrix ``X`` (N x d)."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: w has {w.shape[0]} entries, X has {X.shape[1]} columns")
    r = act.value(X @ w) - y
    return r * r


def clamp_labels(y, M: float):
    # sign(y) * min(|y|, M)
    return np.clip(y, -M, M)


def vfield(w, x, y: float, act: Activation, M: float) -> np.ndarray:
    """``2 beta (sigma(w . x) - clamp(y, M)) x`` for one sample."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape:
        raise ValueError(f"dimension mismatch: w{w.shape} vs x{x.shape}")
    r = float(act.value(np.dot(w, x))) - float(clamp_labels(y, M))
    return 2.0 * act.beta * r * x


def expected_vfield(w, X, y, p, act: Activation, M: float) -> np.ndarray:
    """``E_p[v(w; x, y)]`` over the sample."""
    r = act.value(X @ w) - clamp_labels(y, M)
    return 2.0 * act.beta * (X.T @ (p * r))


# ---------------------------------------------------------------------------
# divergences


def _check_support(p, p0):
    bad = (p0 <= 0) & (p != 0)
    if np.any(bad):
        raise SupportError("weights are not absolutely continuous w.r.t. the reference")


def chi2(p, p0) -> float:
    """Chi-squared divergence ``sum_j (p_j - p0_j)^2 / p0_j``."""
    p = np.asarray(p, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    _check_support(p, p0)
    m = p0 > 0
    return float(np.sum((p[m] - p0[m]) ** 2 / p0[m]))


def bregman(p, q, p0) -> float:
    """Bregman divergence of ``chi2(., p0)``; symmetric in ``p`` and ``q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    _check_support(p, p0)
    _check_support(q, p0)
    m = p0 > 0
    return float(np.sum((q[m] - p[m]) ** 2 / p0[m]))


# ---------------------------------------------------------------------------
# the regularised objective


@dataclass
class RegularizedObjective:
    """``L(w, p)`` on a fixed sample.

    ``dataset`` must expose ``X``, ``y`` and ``ref_weights``.  ``nu = 0`` is
    accepted so that the unpenalised maximum can be evaluated; the closed
    forms below require ``nu > 0``.
    """

    dataset: object
    act: Activation
    nu: float

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError("nu must be nonnegative")

    @property
    def p0(self) -> np.ndarray:
        return self.dataset.ref_weights

    def losses(self, w) -> np.ndarray:
        return losses(w, self.dataset.X, self.dataset.y, self.act)

    def with_nu(self, nu: float) -> "RegularizedObjective":
        return RegularizedObjective(self.dataset, self.act, nu)


def objective_L(w, p, obj: RegularizedObjective) -> float:
    p = np.asarray(p, dtype=float)
    ell = obj.losses(w)
    pen = chi2(p, obj.p0) if obj.nu else 0.0
    return float(np.dot(p, ell)) - obj.nu * pen


def _closed_form_applies(ell, p0, nu) -> bool:
    return nu > 0 and nu >= 0.5 * float(np.dot(p0, ell))


def qhat_closed_form(w, obj: RegularizedObjective) -> np.ndarray:
    """Worst-case reweighting when ``nu >= E_p0[l] / 2``.

    Falls through to :func:`qhat_general` when the condition fails.
    """
    ell = obj.losses(w)
    p0 = obj.p0
    if not _closed_form_applies(ell, p0, obj.nu):
        return qhat_general(w, obj)
    mean = float(np.dot(p0, ell))
    q = p0 * (1.0 + (ell - mean) / (2.0 * obj.nu))
    q = np.maximum(q, 0.0)
    return q / q.sum()


def qhat_from_losses(ell, p0, nu: float):
    """Maximiser of ``p -> <p, ell> - nu chi2(p, p0)`` and its normaliser ``xi``."""
    if not nu > 0:
        raise ValueError("nu must be positive; use the argmax oracle for nu = 0")
    ell = np.asarray(ell, dtype=float)
    if ell.size == 1:
        return np.ones(1), float(ell[0])
    xi, q = weighted_threshold(ell + 2.0 * nu, p0, 2.0 * nu)
    return q, xi


def qhat_general(w, obj: RegularizedObjective) -> np.ndarray:
    """Worst-case reweighting for any ``nu > 0`` by water-filling."""
    return qhat_from_losses(obj.losses(w), obj.p0, obj.nu)[0]


def qhat(w, obj: RegularizedObjective) -> np.ndarray:
    """Worst-case reweighting, including the ``nu = 0`` limit."""
    if obj.nu == 0:
        return argmax_uniform(obj.losses(w))[1]
    return qhat_general(w, obj)


def risk_closed_form(w, obj: RegularizedObjective):
    """DRO risk ``max_p L(w, p)`` and ``chi2(q_w, p0)``.

    Uses the variance form when ``nu >= E_p0[l] / 2`` and the projected
    ascent oracle otherwise.

    Returns
    -------
    risk : float
    chi2_q : float
    """
    ell = obj.losses(w)
    p0 = obj.p0
    if _closed_form_applies(ell, p0, obj.nu):
        mean = float(np.dot(p0, ell))
        var = float(np.dot(p0, (ell - mean) ** 2))
        return mean + var / (4.0 * obj.nu), var / (4.0 * obj.nu ** 2)
    val, q = brute_dual_max(w, obj)
    return float(val), (chi2(q, p0) if obj.nu > 0 else float("nan"))


def gap(w, p, w_star, p_star, obj: RegularizedObjective) -> float:
    """``L(w, p_star) - L(w_star, p)``; may be negative."""
    return objective_L(w, p_star, obj) - objective_L(w_star, p, obj)


def opt_statistics(w_star, obj: RegularizedObjective):
    """``(OPT, OPT_2)``: first and second moments of ``l(w_star)`` under its worst case."""
    ell = obj.losses(w_star)
    q = qhat(w_star, obj)
    return float(np.dot(q, ell)), float(np.dot(q, ell * ell))
