"""Synthetic data, CSV ingestion, label truncation and bound constants."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .activations import Activation, relu
from .empirical import uniform_weights, weight_vector

MARGINALS = ("gaussian", "discrete_cube")
LABEL_MODELS = ("realizable", "gaussian_noise", "adversarial")


class GenerationError(RuntimeError):
    pass


class DataError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """An immutable labelled sample.

    ``X`` is ``N x d``.  ``S`` is the largest covariate norm and ``M`` the
    truncation level (``nan`` until :func:`truncate_labels` is applied).
    """

    X: np.ndarray
    y: np.ndarray
    ref_weights: np.ndarray
    S: float
    M: float = float("nan")
    truncated: bool = False

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DataError("X must be N x d and y of length N")
        if self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise DataError("dataset must have at least one sample and one feature")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains non-finite values")
        for a in (self.X, self.y, self.ref_weights):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def make_dataset(X, y, ref_weights=None) -> Dataset:
    X = np.array(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.array(y, dtype=float).ravel()
    n = X.shape[0]
    p0 = uniform_weights(n) if ref_weights is None else weight_vector(ref_weights, n)
    S = float(np.max(np.linalg.norm(X, axis=1))) if n else 0.0
    return Dataset(X, y, p0, S)


# ---------------------------------------------------------------------------
# generation


@dataclass
class GeneratorConfig:
    """Recipe for a synthetic dataset.

    ``label_model`` is ``"realizable"``, ``"gaussian_noise"`` (uses
    ``noise_std``) or ``"adversarial"`` (overwrites ``round(fraction * n)``
    labels with ``+-magnitude``).  ``clip_radius`` defaults to ``10 sqrt(d)``.
    """

    d: int
    n: int
    w_star: list
    W: float
    marginal: str = "gaussian"
    label_model: str = "realizable"
    noise_std: float = 0.0
    fraction: float = 0.0
    magnitude: float = 0.0
    seed: int = 0
    B: float = 1.0
    clip_radius: float | None = None

    def __post_init__(self):
        self.w_star = [float(v) for v in self.w_star]
        self.validate()

    def validate(self):
        if self.marginal not in MARGINALS:
            raise ValueError(f"marginal: unknown value {self.marginal!r}")
        if self.label_model not in LABEL_MODELS:
            raise ValueError(f"label_model: unknown value {self.label_model!r}")
        if not (isinstance(self.d, int) and self.d >= 1):
            raise ValueError("d: must be a positive integer")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError("n: must be a positive integer")
        if len(self.w_star) != self.d:
            raise ValueError(f"w_star: expected {self.d} entries, got {len(self.w_star)}")
        if not self.W > 0:
            raise ValueError("W: must be positive")
        if np.linalg.norm(self.w_star) > self.W * (1 + 1e-12):
            raise ValueError("w_star: norm exceeds W")
        if not self.B > 0:
            raise ValueError("B: must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std: must be nonnegative")
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError("fraction: must lie in [0, 1)")
        if self.clip_radius is not None and not self.clip_radius > 0:
            raise ValueError("clip_radius: must be positive")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ValueError("seed: must be a nonnegative integer")

    @property
    def radius(self) -> float:
        return self.clip_radius if self.clip_radius is not None else 10.0 * math.sqrt(self.d)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"{sorted(extra)[0]}: unknown generator field")
        for req in ("d", "n", "w_star", "W"):
            if req not in d:
                raise KeyError(req)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _sample_covariates(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    n, d = cfg.n, cfg.d
    if cfg.marginal == "discrete_cube":
        X = rng.integers(-1, 2, size=(n, d)).astype(float)
        bad = np.linalg.norm(X, axis=1) > cfg.radius
        if np.any(bad):
            raise GenerationError("clip_radius excludes part of the cube")
        return X
    out = np.empty((n, d))
    filled, draws, limit = 0, 0, 1000 * n
    while filled < n:
        need = n - filled
        batch = rng.standard_normal((need, d))
        draws += need
        keep = batch[np.linalg.norm(batch, axis=1) <= cfg.radius]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
        if filled < n and draws >= limit:
            raise GenerationError(
                f"rejection sampling used {draws} draws for {n} samples; clip_radius too small")
    return out


def generate(cfg: GeneratorConfig, act: Activation | None = None) -> Dataset:
    """Draw a dataset; bitwise reproducible for a fixed config."""
    act = act or relu()
    rng = np.random.default_rng(cfg.seed)
    X = _sample_covariates(cfg, rng)
    w = np.asarray(cfg.w_star, dtype=float)
    y = act.value(X @ w)
    if cfg.label_model == "gaussian_noise":
        y = y + cfg.noise_std * rng.standard_normal(cfg.n)
    elif cfg.label_model == "adversarial":
        k = int(math.floor(cfg.fraction * cfg.n + 0.5))
        idx = rng.choice(cfg.n, size=k, replace=False)
        signs = rng.choice(np.array([-1.0, 1.0]), size=k)
        y = y.copy()
        y[idx] = signs * cfg.magnitude
    return make_dataset(X, y)


# ---------------------------------------------------------------------------
# truncation and bounds


@dataclass(frozen=True)
class TruncationParams:
    W: float
    epsilon: float
    beta: float = 1.0
    B: float = 1.0
    C_M: float = 1.0


def compute_truncation_level(p: TruncationParams) -> float:
    """``M = C_M W B beta log(beta B W / epsilon)``."""
    for name in ("W", "epsilon", "beta", "B", "C_M"):
        if not getattr(p, name) > 0:
            raise ValueError(f"{name} must be positive")
    ratio = p.beta * p.B * p.W / p.epsilon
    if ratio <= 1.0:
        raise ValueError("beta * B * W / epsilon must exceed 1")
    return p.C_M * p.W * p.B * p.beta * math.log(ratio)


def truncate_labels(ds: Dataset, M: float) -> Dataset:
    """Clamp labels to ``[-M, M]`` (sign kept, magnitude capped)."""
    if not M > 0:
        raise ValueError("M must be positive")
    return replace(ds, y=np.clip(ds.y, -M, M), M=float(M), truncated=True)


def measure_bounds(ds: Dataset, act: Activation, W: float, M: float, mode: str = "tight"):
    """Return ``(S, G, kappa)`` bounding the vector field over ``B(W)``.

    ``G`` bounds ``||v(w; x_i, y_i)||`` and ``kappa`` its Lipschitz constant
    in ``w``.  ``mode="tight"`` maximises per-sample bounds;
    ``mode="worst_case"`` uses the dimension-dependent worst-case expressions
    ``G = 2 beta S sqrt(d) (sqrt(2) beta W S + M)`` and
    ``kappa = 2 beta^2 S^2 d``.  In both modes ``S`` is the largest
    Euclidean norm of a covariate.
    """
    if not ds.truncated:
        raise PreconditionError("labels must be truncated before measuring bounds")
    if mode not in ("tight", "worst_case"):
        raise ValueError(f"unknown bound mode {mode!r}")
    beta = act.beta
    norms = np.linalg.norm(ds.X, axis=1)
    S = float(norms.max())
    if mode == "tight":
        G = float(np.max(2.0 * beta * (beta * W * norms + M) * norms))
        kappa = 2.0 * beta ** 2 * S ** 2
    else:
        d = ds.d
        G = 2.0 * beta * S * math.sqrt(d) * (math.sqrt(2.0) * beta * W * S + M)
        kappa = 2.0 * beta ** 2 * S ** 2 * d
    return S, G, kappa


# ---------------------------------------------------------------------------
# files


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"x{j + 1}" for j in range(ds.d)] + ["y"])
        for xi, yi in zip(ds.X, ds.y):
            wr.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def read_csv(path) -> Dataset:
    """Parse a dataset CSV; errors name the offending line."""
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"x{j + 1}" for j in range(d)]:
            raise DataError(f"{path}: line 1: header must be x1,...,xd,y")
        for row in rd:
            line = rd.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}: line {line}: expected {d + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: line {line}: unparsable number") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {line}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no samples")
    arr = np.array(rows)
    return make_dataset(arr[:, :-1], arr[:, -1])


@dataclass
class DatasetMeta:
    seed: int
    w_star: list
    S: float
    d: int
    n: int
    generator: dict = field(default_factory=dict)


def write_meta(meta: DatasetMeta, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(meta), fh, indent=2)
