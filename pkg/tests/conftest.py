import time

import numpy as np
import pytest

from vflab.data import (
    load_dataset,
    load_registry,
    scenario_grid,
    splitnn_scenarios,
    vertical_split,
)
from vflab.experiments import run_scenario


@pytest.fixture(scope="session")
def breast_data():
    registry = load_registry()
    return load_dataset(registry["breast_cancer"])


@pytest.fixture(scope="session")
def breast_grid(breast_data):
    """Full CV grid for the representation methods, shared by several
    acceptance criteria. Returns {"reports": {(method, aligned, a): report},
    "elapsed": {method: seconds}}.
    """
    reports = {}
    elapsed = {}
    cells = scenario_grid("breast_cancer")
    for method in ("apcvfl", "local", "ablation"):
        t0 = time.perf_counter()
        cache = {}
        for sc in cells:
            key = (tuple(sc.active_features), sc.seeds)
            if method in ("local", "ablation") and key in cache:
                report = cache[key]
            else:
                report = run_scenario(method, sc, breast_data)
                cache[key] = report
            reports[(method, sc.aligned_count, sc.n_active)] = report
        elapsed[method] = time.perf_counter() - t0
    return {"reports": reports, "cells": cells, "elapsed": elapsed}


@pytest.fixture(scope="session")
def breast_splitnn(breast_data):
    """Held-out-test scenarios: the iterative baseline plus the pipeline's
    fully-aligned variant, every alignment level, five seeds each.
    """
    out = {}
    for sc in splitnn_scenarios("breast_cancer"):
        out[("splitnn", sc.aligned_count)] = run_scenario("splitnn", sc, breast_data)
        out[("apcvfl", sc.aligned_count)] = run_scenario("apcvfl", sc, breast_data)
    return out


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / scale
