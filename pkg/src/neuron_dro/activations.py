"""Convex, monotone activations with linear growth on the nonnegative axis.

Every activation here satisfies, for some ``0 < alpha <= beta``:

* ``sigma`` is non-decreasing, convex and ``beta``-Lipschitz,
* ``sigma(t1) - sigma(t2) >= alpha * (t1 - t2)`` whenever ``t1 >= t2 >= 0``,
* ``sigma(0) == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("relu", "leaky_relu", "softplus")


class DomainError(ValueError):
    """Raised when an activation is evaluated at a non-finite point."""


@dataclass(frozen=True)
class Activation:
    """An (alpha, beta) growth-bounded convex activation.

    Parameters
    ----------
    kind : str
        One of ``"relu"``, ``"leaky_relu"`` or ``"softplus"``.
    alpha, beta : float
        Growth and Lipschitz constants.
    slope : float
        Negative-side slope for ``leaky_relu``.
    temperature : float
        Temperature for the shifted ``softplus``.
    """

    kind: str
    alpha: float
    beta: float
    slope: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.alpha > self.beta:
            raise ValueError("alpha must not exceed beta")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")
        if self.kind == "softplus" and not self.temperature > 0:
            raise ValueError("softplus temperature must be positive")

    # vectorised versions, used by everything downstream
    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "relu":
            return np.maximum(t, 0.0)
        if self.kind == "leaky_relu":
            return np.where(t >= 0.0, t, self.slope * t)
        T = self.temperature
        # T*log(1+e^{t/T}) - T*log 2, written to avoid overflow
        return T * (np.logaddexp(0.0, t / T) - math.log(2.0))

    def deriv(self, t):
        """Right derivative, which is a valid subderivative at every point."""
        t = np.asarray(t, dtype=float)
        if self.kind == "relu":
            return (t >= 0.0).astype(float)
        if self.kind == "leaky_relu":
            return np.where(t >= 0.0, 1.0, self.slope)
        z = t / self.temperature
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope
        if self.kind == "softplus":
            d["temperature"] = self.temperature
        return d


def relu() -> Activation:
    return Activation("relu", alpha=1.0, beta=1.0)


def leaky_relu(slope: float, alpha: float = 1.0) -> Activation:
    # On t >= 0 the function is the identity, so alpha = 1 is exact; any
    # smaller alpha (e.g. the slope itself) is also a valid constant.
    return Activation("leaky_relu", alpha=alpha, beta=1.0, slope=slope)


def softplus(temperature: float = 1.0) -> Activation:
    # sigma' = logistic(t/T) is increasing, so its infimum over t >= 0 is 1/2.
    return Activation("softplus", alpha=0.5, beta=1.0, temperature=temperature)


def from_dict(cfg: dict) -> Activation:
    """Build an activation from a config mapping such as ``{"kind": "relu"}``."""
    kind = cfg.get("kind")
    if kind == "relu":
        return relu()
    if kind == "leaky_relu":
        if "slope" not in cfg:
            raise KeyError("slope")
        return leaky_relu(float(cfg["slope"]))
    if kind == "softplus":
        return softplus(float(cfg.get("temperature", 1.0)))
    raise ValueError(f"unknown activation kind {kind!r}")


def _check_finite(t) -> float:
    t = float(t)
    if not math.isfinite(t):
        raise DomainError(f"activation evaluated at non-finite point {t}")
    return t


def evaluate(act: Activation, t: float) -> float:
    """Return ``sigma(t)`` for a finite scalar ``t``."""
    return float(act.value(_check_finite(t)))


def subgrad(act: Activation, t: float) -> float:
    """Return a subderivative of ``sigma`` at ``t`` (right derivative at kinks)."""
    return float(act.deriv(_check_finite(t)))


@dataclass
class ActivationReport:
    """Outcome of :func:`verify_unbounded_convex`.

    ``violations`` holds ``(condition, t1, t2)`` triples; it is empty when
    every condition holds on every grid pair.
    """

    kind: str
    alpha: float
    beta: float
    measured_min_slope: float
    zero_value: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_unbounded_convex(act: Activation, grid, tol: float = 1e-12) -> ActivationReport:
    """Check monotonicity, Lipschitz, growth and midpoint convexity on a grid.

    All ordered pairs ``t1 >= t2`` of grid points are examined.
    ``measured_min_slope`` is the smallest chord slope over pairs with
    ``t1 > t2 >= 0`` (``nan`` if there are none).
    """
    g = np.asarray(grid, dtype=float)
    if g.size == 0:
        raise ValueError("grid must be nonempty")
    if not np.all(np.isfinite(g)):
        raise DomainError("grid contains non-finite points")
    g = np.sort(g)
    s = act.value(g)
    i1, i2 = np.nonzero(g[:, None] >= g[None, :])
    t1, t2 = g[i1], g[i2]
    d = s[i1] - s[i2]
    dt = t1 - t2
    viol = []

    def flag(name, mask):
        for k in np.nonzero(mask)[0]:
            viol.append((name, float(t1[k]), float(t2[k])))

    scale = tol * (1.0 + np.abs(s[i1]) + np.abs(s[i2]))
    flag("monotone", d < -scale)
    flag("lipschitz", d > act.beta * dt + scale)
    nonneg = t2 >= 0.0
    flag("growth", nonneg & (d < act.alpha * dt - scale))
    mid = act.value(0.5 * (t1 + t2))
    flag("convex", mid > 0.5 * (s[i1] + s[i2]) + scale)
    z = float(act.value(0.0))
    if z != 0.0:
        viol.append(("zero", 0.0, 0.0))

    strict = nonneg & (dt > 0)
    min_slope = float(np.min(d[strict] / dt[strict])) if np.any(strict) else float("nan")
    return ActivationReport(act.kind, act.alpha, act.beta, min_slope, z, viol)
