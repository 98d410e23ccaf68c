"""Shared desk-scale instances.

The two d = 5, N = 10^4 ReLU runs are expensive (about ten seconds each),
so they are built once per session and reused by the driver and acceptance
tests.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from neuron_dro.activations import relu
from neuron_dro.datagen import (GeneratorConfig, TruncationParams, compute_truncation_level,
                                generate, truncate_labels)
from neuron_dro.driver import (AlgoConfig, calibrate, initial_distance, make_reference, run,
                               theoretical_iteration_budget)

D, N, W, EPS, B = 5, 10_000, 3.0, 0.01, 1.0
K_CAP = 15_000
SEED = 1


@dataclass
class Instance:
    ds: object
    act: object
    w_star: np.ndarray
    cal: object
    cfg: AlgoConfig
    ref: object
    result: object
    budget: int
    D0: float
    seconds: float


def build_instance(adversarial: bool) -> Instance:
    t0 = time.perf_counter()
    act = relu()
    w_star = np.zeros(D)
    w_star[0] = 1.0
    M = compute_truncation_level(TruncationParams(W=W, epsilon=EPS, beta=act.beta, B=B))
    gen = GeneratorConfig(d=D, n=N, w_star=list(w_star), W=W, seed=SEED,
                          label_model="adversarial" if adversarial else "realizable",
                          fraction=0.05 if adversarial else 0.0, magnitude=M)
    ds = truncate_labels(generate(gen, act), M)
    cal = calibrate(ds, act, w_star, EPS, B=B, trials=1000, seed=SEED)
    cfg = AlgoConfig(nu=cal.nu, c1=cal.c1, W=W, epsilon=EPS, B=B, c1_source="estimated")
    ref = make_reference(ds, act, cal.nu, w_star, B)
    # budget needs kappa and G, which run() measures; a zero-iteration run is cheap
    probe = run(ds, act, cfg, ref, k_max=0)
    D0 = initial_distance(w_star, ref.p_star, ds.ref_weights, probe.nu0)
    budget = theoretical_iteration_budget(cfg, probe.kappa, probe.G, D0, act.beta)
    res = run(ds, act, cfg, ref, k_max=min(budget, K_CAP))
    return Instance(ds, act, w_star, cal, cfg, ref, res, budget, D0, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def realizable_instance():
    return build_instance(adversarial=False)


@pytest.fixture(scope="session")
def agnostic_instance():
    return build_instance(adversarial=True)
