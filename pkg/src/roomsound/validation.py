"""Unseen-room validation: simulate a held-out grid, predict it with the
trained models, and compare both error columns side by side.

The grid deliberately uses materials absent from training, so this
measures generalization across the absorption-coefficient encoding,
not interpolation between seen rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import MODEL_IDS, SweepStore, assemble_rows, model_targets
from .mlp import evaluate, forward


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ValidationReport:
    """Per-target MAE on the test split vs on the unseen grid."""
    rows: tuple  # dicts: target, model, test_mae, unseen_mae, n_unseen
    failures: tuple  # config indices the simulator could not complete

    def by_target(self):
        return {r["target"]: r for r in self.rows}

    def exceed_count(self):
        """How many targets have unseen MAE above test MAE."""
        return sum(1 for r in self.rows if r["unseen_mae"] >= r["test_mae"])

    def to_text(self):
        lines = [f"{'target':<12} {'test mae':>12} {'unseen mae':>12}"]
        for r in self.rows:
            lines.append(f"{r['target']:<12} {r['test_mae']:>12.6f} "
                         f"{r['unseen_mae']:>12.6f}")
        if self.failures:
            lines.append(f"# unsimulated configs: {list(self.failures)}")
        return "\n".join(lines)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"format": "roomsound-validation", "version": 1,
                       "rows": list(self.rows),
                       "failures": list(self.failures)}, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "roomsound-validation":
            raise ValidationError(f"{path} is not a validation report")
        return cls(tuple(doc["rows"]), tuple(doc["failures"]))


def run_validation(models: dict, store: SweepStore, datasets=None,
                   db=None) -> ValidationReport:
    """Build the two-column error report from a finished validation sweep.

    The store must hold simulated targets for the unseen grid; configs
    that failed to simulate are listed, their rows skipped. Test-split
    MAE comes from ``datasets`` when given, else from the figures the
    models recorded at training time.
    """
    missing = [m for m in MODEL_IDS if m not in models]
    if missing:
        raise ValidationError(f"missing models: {missing}")
    rows = []
    for model_id in MODEL_IDS:
        model = models[model_id]
        if datasets is not None:
            ds = datasets[model_id]
            x_test, y_test = ds.test_arrays()
            test_report = evaluate(model, x_test, y_test)
            test_mae = {n: float(test_report.mae[i])
                        for i, n in enumerate(ds.target_names)}
        else:
            test_mae = model.metadata.get("test_mae")
            if not test_mae:
                raise ValidationError(
                    f"model {model_id} carries no test MAE; pass datasets")

        x_val, y_val, _ = assemble_rows(store, model_id, db)
        pred = model.denormalize(forward(model, x_val))
        unseen_mae = np.mean(np.abs(pred - y_val), axis=0)

        for ti, target in enumerate(model_targets(model_id)):
            rows.append({
                "target": target, "model": model_id,
                "test_mae": float(test_mae[target]),
                "unseen_mae": float(unseen_mae[ti]),
                "n_unseen": int(len(x_val)),
            })
    return ValidationReport(tuple(rows), tuple(store.failures()))


def target_spans(source: dict):
    """target -> training range span, from datasets or trained models."""
    spans = {}
    for holder in source.values():
        for i, name in enumerate(holder.target_names):
            spans[name] = float(np.asarray(holder.y_max)[i]
                                - np.asarray(holder.y_min)[i])
    return spans


def percentage_error_summary(report: ValidationReport, spans: dict):
    """MAE as a percentage of each target's training-range span.

    ``spans`` maps targets to their training range (see target_spans).
    Returns per-target percentages plus per-indicator means (t30, edt,
    c80, d50, sti averaged over bands).
    """
    per_target = {}
    for r in report.rows:
        span = spans[r["target"]]
        if span <= 0:
            raise ValidationError(f"zero range for target {r['target']}")
        per_target[r["target"]] = {
            "test_pct": 100.0 * r["test_mae"] / span,
            "unseen_pct": 100.0 * r["unseen_mae"] / span,
        }
    indicators = {}
    for kind in ("t30", "edt", "c80", "d50", "sti"):
        keys = [t for t in per_target if t == kind or t.startswith(kind + "_")]
        indicators[kind] = {
            "test_pct": float(np.mean([per_target[k]["test_pct"]
                                       for k in keys])),
            "unseen_pct": float(np.mean([per_target[k]["unseen_pct"]
                                         for k in keys])),
        }
    return per_target, indicators
