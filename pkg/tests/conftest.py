"""Shared oracles and session fixtures for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from bikefault.data_model import assemble_records, parse_gps, parse_labels, parse_trips, stratified_split
from bikefault.feature_engine import build_dataset
from bikefault.synthetic import SynthConfig, generate_fleet


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. x, perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise relative error; absolute where both are below 1e-6."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    out = np.where(scale < 1e-6, diff, diff / np.where(scale == 0.0, 1.0, scale))
    return float(out.max()) if out.size else 0.0


EASY_SYNTH = SynthConfig(n_bikes=2000, faulty_fraction=0.15, days=3,
                         lambda_normal=8.0, lambda_faulty=2.0,
                         fragmentation=0.8, seed=42)


@pytest.fixture(scope="session")
def easy_fleet(tmp_path_factory):
    """The pinned easy synthetic fleet: clearly separated classes."""
    out = tmp_path_factory.mktemp("easy_fleet")
    manifest = generate_fleet(EASY_SYNTH, out)
    return out, EASY_SYNTH, manifest


@pytest.fixture(scope="session")
def easy_split_tensors(easy_fleet):
    """80/20 split of the easy fleet, built into T=32 tensors."""
    fleet_dir, _, _ = easy_fleet
    records, _ = assemble_records(parse_trips(fleet_dir / "trips.csv"),
                                  parse_gps(fleet_dir / "gps.csv"),
                                  parse_labels(fleet_dir / "labels.csv"))
    train, test = stratified_split(records, ratio=0.8, seed=42)
    train_tensor = build_dataset(train, norm="fit", t_steps=32)
    test_tensor = build_dataset(test, norm=train_tensor.norm, t_steps=32)
    return train_tensor, test_tensor
