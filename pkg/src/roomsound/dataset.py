"""Parametric sweep runner and dataset assembly.

One sweep store holds the 25 simulated targets per room configuration.
Seven dataset views are cut from it: one per octave band (targets T30,
EDT, C80, D50 at that band) and one for STI. Features are continuous
absorption coefficients plus geometry scalars, so rooms built from
materials the models never saw remain encodable.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import indices as indices_mod
from .engine import SimulationParams, simulate
from .rooms import (BANDS_HZ, RoomConfig, build_geometry,
                    enumerate_reduced_grid, enumerate_training_grid,
                    enumerate_validation_grid)

MODEL_IDS = ("125", "250", "500", "1000", "2000", "4000", "sti")

BAND_TARGET_KINDS = ("t30", "edt", "c80", "d50")

GEOMETRY_FEATURES = ("length", "width", "height", "volume", "wwr",
                     "furniture_fraction")
SURFACE_ORDER = ("wall", "floor", "ceiling", "window")

JOURNAL_NAME = "journal.jsonl"


class DatasetError(ValueError):
    """Sweep or dataset bookkeeping failure."""


def grid_configs(grid_id, db):
    if grid_id == "training":
        return enumerate_training_grid(db)
    if grid_id == "validation":
        return enumerate_validation_grid(db)
    if grid_id == "reduced":
        return enumerate_reduced_grid(db)
    raise DatasetError(f"unknown grid {grid_id!r}")


def config_seed(grid_id, index, base_seed):
    """Stable per-config seed, independent of sweep order and workers."""
    digest = hashlib.sha256(
        f"{grid_id}:{index}:{base_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def config_key(config: RoomConfig):
    doc = json.dumps(config.to_full_dict(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _grid_hash(configs):
    h = hashlib.sha256()
    for c in configs:
        h.update(config_key(c).encode())
    return h.hexdigest()[:16]


@dataclass
class SweepStore:
    grid_id: str
    base_seed: int
    params: SimulationParams
    configs: list
    records: dict = field(default_factory=dict)  # index -> record dict

    @property
    def grid_hash(self):
        return _grid_hash(self.configs)

    def completed(self):
        return sorted(i for i, r in self.records.items() if r.get("targets"))

    def failures(self):
        return sorted(i for i, r in self.records.items() if r.get("error"))

    def target_matrix(self, names=indices_mod.TARGET_NAMES):
        """(n_complete, 25) target array with the matching config indices."""
        idx = self.completed()
        out = np.array([[self.records[i]["targets"][n] for n in names]
                        for i in idx])
        return idx, out


def _simulate_one(config, params):
    geo = build_geometry(config)
    response = simulate(geo, params)
    acc = indices_mod.compute_all(response)
    return acc


def run_sweep(grid_id, params: SimulationParams, out_dir, base_seed=0,
              workers=None, configs=None, db=None, progress=None):
    """Simulate every config in the grid, journaling results to disk.

    Restartable: configs already present in ``out_dir/journal.jsonl`` are
    skipped, so an interrupted sweep resumes where it stopped and ends in
    the same store. Per-config failures are recorded and do not stop the
    sweep. Worker threads share nothing; the journal has a single writer.
    """
    if configs is None:
        configs = grid_configs(grid_id, db)
    os.makedirs(out_dir, exist_ok=True)
    journal_path = os.path.join(out_dir, JOURNAL_NAME)
    store = SweepStore(grid_id, base_seed, params, configs)

    if os.path.exists(journal_path):
        for rec in _read_journal(journal_path):
            if rec.get("grid_id") not in (None, grid_id):
                raise DatasetError(
                    f"journal at {journal_path} belongs to grid "
                    f"{rec['grid_id']!r}, not {grid_id!r}")
            store.records[rec["index"]] = rec

    pending = []
    for i, cfg in enumerate(configs):
        old = store.records.get(i)
        if old is not None:
            if old["key"] != config_key(cfg):
                raise DatasetError(
                    f"journal config {i} does not match the grid "
                    f"(key {old['key']} != {config_key(cfg)}); wrong out dir?")
            if old.get("targets") is not None:
                continue
        pending.append(i)

    def job(i):
        cfg = configs[i]
        run_params = SimulationParams(
            ray_count=params.ray_count, cutoff_ms=params.cutoff_ms,
            temperature_c=params.temperature_c,
            rel_humidity_pct=params.rel_humidity_pct,
            pressure_hpa=params.pressure_hpa,
            image_source_order=params.image_source_order,
            histogram_bin_ms=params.histogram_bin_ms,
            rng_seed=config_seed(grid_id, i, base_seed),
            receiver_radius_m=params.receiver_radius_m,
            air_absorption=params.air_absorption)
        rec = {"index": i, "grid_id": grid_id, "key": config_key(cfg),
               "seed": run_params.rng_seed, "config": cfg.to_full_dict(),
               "targets": None, "quality": None, "error": None}
        try:
            acc = _simulate_one(cfg, run_params)
            rec["targets"] = acc.to_dict()
            rec["quality"] = {f"t30_{b}": q
                              for b, q in zip(BANDS_HZ, acc.t30_quality)}
        except Exception as exc:  # noqa: BLE001 - sweep must survive any config
            rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec

    with open(journal_path, "a") as journal:
        if workers is None or workers <= 1:
            for n, i in enumerate(pending):
                rec = job(i)
                store.records[i] = rec
                journal.write(json.dumps(rec) + "\n")
                journal.flush()
                if progress:
                    progress(n + 1, len(pending))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(job, i): i for i in pending}
                for n, fut in enumerate(as_completed(futures)):
                    rec = fut.result()
                    store.records[rec["index"]] = rec
                    journal.write(json.dumps(rec) + "\n")
                    journal.flush()
                    if progress:
                        progress(n + 1, len(pending))
    return store


def load_sweep(grid_id, out_dir, params=None, base_seed=0, db=None):
    """Read a finished (or partial) sweep store back from its journal.

    ``grid_id=None`` takes the grid recorded in the journal. Named grids
    re-enumerate their configs; ad-hoc grids are rebuilt from the config
    documents stored with each record.
    """
    journal_path = os.path.join(out_dir, JOURNAL_NAME)
    if not os.path.exists(journal_path):
        raise DatasetError(f"no sweep journal at {journal_path}")
    records = {}
    for rec in _read_journal(journal_path):
        records[rec["index"]] = rec
    if not records:
        raise DatasetError(f"empty sweep journal at {journal_path}")
    journal_grid = next(iter(records.values())).get("grid_id")
    grid_id = grid_id or journal_grid
    if journal_grid != grid_id:
        raise DatasetError(
            f"journal belongs to grid {journal_grid!r}, not {grid_id!r}")
    if grid_id in ("training", "validation", "reduced"):
        configs = grid_configs(grid_id, db)
    else:
        n = max(records) + 1
        missing = [i for i in range(n)
                   if i not in records or "config" not in records[i]]
        if missing:
            raise DatasetError(
                f"cannot rebuild ad-hoc grid {grid_id!r}: journal lacks "
                f"configs for indices {missing[:10]}")
        configs = [RoomConfig.from_flat_dict(records[i]["config"], db)
                   for i in range(n)]
    store = SweepStore(grid_id, base_seed, params or SimulationParams(),
                       configs, records)
    return store


def _read_journal(path):
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(
                    f"corrupt journal line {line_no} in {path}: {exc}") from exc


def band_feature_names(band_hz):
    return GEOMETRY_FEATURES + tuple(
        f"{s}_alpha_{band_hz}" for s in SURFACE_ORDER)


def sti_feature_names():
    return GEOMETRY_FEATURES + tuple(
        f"{s}_alpha_{b}" for s in SURFACE_ORDER for b in BANDS_HZ)


def encode_features(config: RoomConfig, band_hz=None, db=None):
    """Feature vector for one room: geometry scalars plus absorption rows.

    ``band_hz`` picks the 10-value single-band encoding; None gives the
    30-value all-band encoding used by the STI model. Shading is folded
    into the effective window absorption, so it is not a separate input.
    """
    geom = [config.length, config.width, config.height, config.volume,
            config.wwr, config.furniture_fraction]
    window = config.effective_window_material(db)
    rows = (config.wall_material.absorption, config.floor_material.absorption,
            config.ceiling_material.absorption, window.absorption)
    if band_hz is not None:
        bi = BANDS_HZ.index(band_hz)
        vals = [r[bi] for r in rows]
    else:
        vals = [a for r in rows for a in r]
    return np.array(geom + vals)


def model_targets(model_id):
    if model_id == "sti":
        return ("sti",)
    band = int(model_id)
    if band not in BANDS_HZ:
        raise DatasetError(f"unknown model id {model_id!r}")
    return tuple(f"{k}_{band}" for k in BAND_TARGET_KINDS)


def assemble_rows(store: SweepStore, model_id, db=None):
    """(features, targets, config indices) for one model view of a sweep."""
    names = model_targets(model_id)
    band = None if model_id == "sti" else int(model_id)
    idx = store.completed()
    if not idx:
        raise DatasetError("sweep store holds no completed configs")
    x = np.array([encode_features(store.configs[i], band, db) for i in idx])
    y = np.array([[store.records[i]["targets"][n] for n in names]
                  for i in idx])
    if not np.all(np.isfinite(y)):
        bad = [idx[i] for i in np.argwhere(~np.isfinite(y).all(axis=1))[:, 0]]
        raise DatasetError(f"non-finite targets at configs {bad}")
    return x, y, idx


@dataclass
class Dataset:
    """One model view: features, raw targets, split, and normalization.

    Targets are stored raw. Normalization maps each target to [0, 1] with
    min/max taken from training rows only, matching a sigmoid output
    layer; test rows are free to land outside [0, 1] and are never
    clipped.
    """
    model_id: str
    feature_names: tuple
    target_names: tuple
    x: np.ndarray
    y: np.ndarray
    split: np.ndarray  # "train"/"test" per row
    y_min: np.ndarray
    y_max: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.y_max - self.y_min <= 0):
            flat = np.argwhere(self.y_max - self.y_min <= 0)[:, 0]
            names = [self.target_names[i] for i in flat]
            raise DatasetError(f"degenerate target range for {names}")

    @property
    def train_mask(self):
        return self.split == "train"

    def normalize(self, y):
        return (y - self.y_min) / (self.y_max - self.y_min)

    def denormalize(self, yn):
        return yn * (self.y_max - self.y_min) + self.y_min

    def train_arrays(self):
        m = self.train_mask
        return self.x[m], self.normalize(self.y[m])

    def test_arrays(self):
        m = ~self.train_mask
        return self.x[m], self.y[m]

    def save(self, path):
        header = list(self.feature_names) + list(self.target_names) + ["split"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self.x)):
                cells = [repr(v) for v in self.x[i]]
                cells += [repr(v) for v in self.y[i]]
                cells.append(self.split[i])
                fh.write(",".join(cells) + "\n")
        meta = {
            "format": "roomsound-dataset", "version": 1,
            "model_id": self.model_id,
            "feature_names": list(self.feature_names),
            "target_names": list(self.target_names),
            "y_min": self.y_min.tolist(), "y_max": self.y_max.tolist(),
            "provenance": self.provenance,
        }
        with open(_meta_path(path), "w") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, path):
        meta_path = _meta_path(path)
        if not os.path.exists(meta_path):
            raise DatasetError(f"missing dataset metadata {meta_path}")
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("format") != "roomsound-dataset":
            raise DatasetError(f"{meta_path} is not a dataset metadata file")
        if meta.get("version") != 1:
            raise DatasetError(
                f"unsupported dataset version {meta.get('version')}")
        n_f = len(meta["feature_names"])
        n_t = len(meta["target_names"])
        x_rows, y_rows, split = [], [], []
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            expect = meta["feature_names"] + meta["target_names"] + ["split"]
            if header != expect:
                raise DatasetError(f"dataset header mismatch in {path}")
            for line in fh:
                cells = line.strip().split(",")
                x_rows.append([float(v) for v in cells[:n_f]])
                y_rows.append([float(v) for v in cells[n_f:n_f + n_t]])
                split.append(cells[-1])
        return cls(meta["model_id"], tuple(meta["feature_names"]),
                   tuple(meta["target_names"]), np.array(x_rows),
                   np.array(y_rows), np.array(split),
                   np.array(meta["y_min"]), np.array(meta["y_max"]),
                   meta["provenance"])


def _meta_path(path):
    return str(path) + ".meta.json"


def split_indices(n, train_n, test_n, seed):
    if train_n + test_n != n:
        raise DatasetError(
            f"split {train_n}:{test_n} does not partition {n} rows")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    split = np.empty(n, dtype=object)
    split[order[:train_n]] = "train"
    split[order[train_n:]] = "test"
    return np.array([str(s) for s in split])


def build_dataset(store: SweepStore, model_id, train_n, test_n, seed,
                  db=None, split=None):
    """Cut one model view from a sweep store and fix its normalization."""
    x, y, idx = assemble_rows(store, model_id, db)
    if split is None:
        split = split_indices(len(idx), train_n, test_n, seed)
    train = split == "train"
    y_min = y[train].min(axis=0)
    y_max = y[train].max(axis=0)
    band = None if model_id == "sti" else int(model_id)
    names = sti_feature_names() if band is None else band_feature_names(band)
    prov = {"grid_id": store.grid_id, "grid_hash": store.grid_hash,
            "sweep_seed": store.base_seed, "split_seed": seed,
            "ray_count": store.params.ray_count,
            "config_indices": [int(i) for i in idx]}
    return Dataset(model_id, names, model_targets(model_id), x, y, split,
                   y_min, y_max, prov)


def build_all_datasets(store: SweepStore, train_n, test_n, seed, db=None):
    """All seven views sharing one config-level split."""
    idx = store.completed()
    split = split_indices(len(idx), train_n, test_n, seed)
    return {m: build_dataset(store, m, train_n, test_n, seed, db, split)
            for m in MODEL_IDS}
