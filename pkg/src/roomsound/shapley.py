"""Exact Shapley attribution over grouped design variables.

The design space has seven independent knobs once shading is folded into
the effective window absorption: room dimensions (with volume), window
ratio, furniture fraction, and the four surface absorptions. 2^7
coalitions per instance is cheap enough to enumerate outright, which
removes sampling variance from every downstream assertion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import (GEOMETRY_FEATURES, band_feature_names,
                      sti_feature_names)
from .mlp import MLPModel, forward


class ShapleyError(ValueError):
    pass


VARIABLE_ORDER = ("dimensions", "wwr", "furniture", "wall_alpha",
                  "floor_alpha", "ceiling_alpha", "window_alpha")


def feature_groups(feature_names):
    """Group feature columns into design variables by name prefix."""
    names = list(feature_names)
    idx = {n: i for i, n in enumerate(names)}
    groups = {}
    dims = [idx[n] for n in ("length", "width", "height", "volume")
            if n in idx]
    if dims:
        groups["dimensions"] = dims
    if "wwr" in idx:
        groups["wwr"] = [idx["wwr"]]
    if "furniture_fraction" in idx:
        groups["furniture"] = [idx["furniture_fraction"]]
    for surface in ("wall", "floor", "ceiling", "window"):
        cols = [i for i, n in enumerate(names)
                if n.startswith(f"{surface}_alpha")]
        if cols:
            groups[f"{surface}_alpha"] = cols
    covered = sorted(i for cols in groups.values() for i in cols)
    if covered != list(range(len(names))):
        raise ShapleyError(
            f"feature names {names} do not partition into known groups")
    return [(v, groups[v]) for v in VARIABLE_ORDER if v in groups]


def shapley_exact(value_fn, instance, background, groups):
    """Exact Shapley values of ``value_fn`` over grouped features.

    ``value_fn`` maps a (k, d) feature matrix to (k, t) outputs; a
    coalition evaluates the function with member groups at the instance
    values and the rest at the background. Returns (n_groups, t).
    """
    instance = np.asarray(instance, dtype=float)
    background = np.asarray(background, dtype=float)
    if instance.shape != background.shape:
        raise ShapleyError("instance and background shapes differ")
    n = len(groups)
    if n > 16:
        raise ShapleyError(f"{n} groups is too many for exact enumeration")

    # one batched evaluation for all 2^n coalitions
    coalitions = np.tile(background, (1 << n, 1))
    for mask in range(1 << n):
        for gi in range(n):
            if mask >> gi & 1:
                cols = groups[gi][1]
                coalitions[mask, cols] = instance[cols]
    values = np.atleast_2d(np.asarray(value_fn(coalitions), dtype=float))
    if values.shape[0] != (1 << n):
        raise ShapleyError("value_fn must return one row per input row")

    fact = [math.factorial(k) for k in range(n + 1)]
    phi = np.zeros((n, values.shape[1]))
    for mask in range(1 << n):
        size = bin(mask).count("1")
        w = fact[size] * fact[n - size - 1] / fact[n]
        for gi in range(n):
            if not mask >> gi & 1:
                phi[gi] += w * (values[mask | 1 << gi] - values[mask])
    return phi


def model_value_fn(model: MLPModel):
    """Denormalized model output as the game value."""
    def fn(batch):
        return model.denormalize(forward(model, batch))
    return fn


def efficiency_gap(phi, value_fn, instance, background):
    """Relative efficiency residual |sum(phi) - (f(x) - f(bg))|."""
    fx = np.asarray(value_fn(np.atleast_2d(instance)))[0]
    fb = np.asarray(value_fn(np.atleast_2d(background)))[0]
    gap = phi.sum(axis=0) - (fx - fb)
    scale = np.maximum(np.abs(fx - fb), 1e-12)
    return float(np.max(np.abs(gap) / scale))


@dataclass(frozen=True)
class ShapReport:
    """Mean absolute attributions, per model target and overall."""
    records: tuple  # (variable, model_id, target, mean |phi|)
    overall: dict  # variable -> cross-target average

    def ranking(self):
        return sorted(self.overall, key=self.overall.get, reverse=True)

    def to_text(self):
        lines = [f"{'variable':<16} {'mean |shapley|':>16}"]
        for v in self.ranking():
            lines.append(f"{v:<16} {self.overall[v]:>16.6f}")
        return "\n".join(lines)

    def long_records(self):
        return [{"variable": v, "model": m, "target": t, "value": val}
                for v, m, t, val in self.records]


def explain_model(model: MLPModel, x_rows, background=None):
    """Per-variable |phi| averaged over instances, per target."""
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    if background is None:
        background = x_rows.mean(axis=0)
    groups = feature_groups(model.feature_names)
    fn = model_value_fn(model)
    acc = np.zeros((len(groups), len(model.target_names)))
    for row in x_rows:
        acc += np.abs(shapley_exact(fn, row, background, groups))
    acc /= len(x_rows)
    return [g[0] for g in groups], acc


def aggregate(models: dict, datasets: dict) -> ShapReport:
    """Cross-model mean |Shapley| report over each test split.

    Backgrounds are the per-model training-mean feature vectors. The
    overall column averages each variable over every model and target.
    """
    if not models:
        raise ShapleyError("no models to aggregate")
    records = []
    sums = {v: 0.0 for v in VARIABLE_ORDER}
    counts = {v: 0 for v in VARIABLE_ORDER}
    for model_id, model in models.items():
        ds = datasets[model_id]
        background = ds.x[ds.train_mask].mean(axis=0)
        x_test, _ = ds.test_arrays()
        names, acc = explain_model(model, x_test, background)
        for gi, variable in enumerate(names):
            for ti, target in enumerate(model.target_names):
                records.append((variable, model_id, target,
                                float(acc[gi, ti])))
                sums[variable] += float(acc[gi, ti])
                counts[variable] += 1
    overall = {v: sums[v] / counts[v] for v in VARIABLE_ORDER if counts[v]}
    return ShapReport(tuple(records), overall)
