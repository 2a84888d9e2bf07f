"""Fully connected feed-forward network, written out by hand on numpy.

Rectifier hidden layers, sigmoid outputs, inverted dropout after every
hidden layer, Adam on minibatch MSE. The point is a dependency-free
trainable surrogate whose gradients can be checked against finite
differences.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class MLPError(ValueError):
    pass


class TrainingError(MLPError):
    pass


class ModelFormatError(MLPError):
    pass


# per model id: hidden layers, hidden units, batch size, epochs
DEFAULT_ARCHITECTURES = {
    "125": (7, 100, 128, 100),
    "250": (7, 100, 128, 100),
    "500": (5, 150, 128, 100),
    "1000": (9, 150, 128, 150),
    "2000": (5, 150, 128, 150),
    "4000": (5, 100, 128, 100),
    "sti": (5, 50, 64, 50),
}

MODEL_FORMAT = "roomsound-mlp"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_layers: int
    hidden_units: int
    output_dim: int
    batch_size: int = 128
    epochs: int = 100
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.hidden_units,
               self.output_dim, self.batch_size) < 1:
            raise MLPError("dimensions and batch size must be positive")
        if self.epochs < 1:
            raise MLPError("epochs must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise MLPError(f"dropout {self.dropout_rate} outside [0, 1)")

    @classmethod
    def for_model(cls, model_id, input_dim, output_dim, **overrides):
        layers, units, batch, epochs = DEFAULT_ARCHITECTURES[model_id]
        base = dict(input_dim=input_dim, hidden_layers=layers,
                    hidden_units=units, output_dim=output_dim,
                    batch_size=batch, epochs=epochs)
        base.update(overrides)
        return cls(**base)

    def layer_dims(self):
        return [self.input_dim] + [self.hidden_units] * self.hidden_layers \
            + [self.output_dim]


@dataclass
class MLPModel:
    spec: MLPSpec
    weights: list
    biases: list
    feature_names: tuple = ()
    target_names: tuple = ()
    y_min: np.ndarray | None = None
    y_max: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    history: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def denormalize(self, yn):
        if self.y_min is None:
            return yn
        return yn * (self.y_max - self.y_min) + self.y_min

    def scale_features(self, x):
        if self.x_mean is None:
            return x
        return (x - self.x_mean) / self.x_scale

    def set_feature_scaling(self, x_train):
        """Standardize inputs by train statistics; constant columns pass
        through unscaled."""
        x_train = np.asarray(x_train, dtype=float)
        self.x_mean = x_train.mean(axis=0)
        std = x_train.std(axis=0)
        self.x_scale = np.where(std < 1e-12, 1.0, std)


def init_model(spec: MLPSpec) -> MLPModel:
    """He-scaled gaussian weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims()
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
        biases.append(np.zeros(b))
    return MLPModel(spec, weights, biases)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: MLPModel, x, training=False, dropout_rng=None):
    """Batch predictions in normalized (sigmoid) space.

    Dropout runs only with ``training=True``; inverted scaling keeps the
    inference path a plain affine chain.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.spec.input_dim:
        raise MLPError(
            f"batch has {x.shape[1]} features, model wants "
            f"{model.spec.input_dim}")
    a = model.scale_features(x)
    p = model.spec.dropout_rate
    for i in range(model.spec.hidden_layers):
        z = a @ model.weights[i] + model.biases[i]
        a = np.maximum(z, 0.0)
        if training and p > 0.0:
            mask = (dropout_rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
    return _sigmoid(a @ model.weights[-1] + model.biases[-1])


def _forward_backward(model, x, y, dropout_rng):
    """MSE loss and gradients for one minibatch."""
    spec = model.spec
    p = spec.dropout_rate
    a = model.scale_features(x)
    acts = [a]
    masks = []
    for i in range(spec.hidden_layers):
        z = a @ model.weights[i] + model.biases[i]
        a = np.maximum(z, 0.0)
        if dropout_rng is not None and p > 0.0:
            mask = (dropout_rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
        acts.append(a)
    out = _sigmoid(a @ model.weights[-1] + model.biases[-1])

    diff = out - y
    loss = float(np.mean(diff * diff))
    # d loss / d preactivation of the output layer
    delta = 2.0 * diff / diff.size * out * (1.0 - out)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    grads_w[-1] = acts[-1].T @ delta
    grads_b[-1] = delta.sum(axis=0)
    for i in range(spec.hidden_layers - 1, -1, -1):
        delta = delta @ model.weights[i + 1].T
        if masks[i] is not None:
            delta = delta * masks[i]
        delta = delta * (acts[i + 1] > 0.0)
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
    return loss, grads_w, grads_b, out


def train(model: MLPModel, x_train, y_train, x_test=None, y_test=None,
          progress=None) -> MLPModel:
    """Adam on minibatch MSE; per-epoch seeded shuffle.

    History records train and test MSE (normalized space, dropout off)
    after every epoch. Deterministic for a fixed (spec, data) pair.
    """
    spec = model.spec
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if y_train.ndim == 1:
        y_train = y_train[:, None]
    if model.x_mean is None:
        model.set_feature_scaling(x_train)
    rng = np.random.default_rng(spec.seed + 1)
    dropout_rng = np.random.default_rng(spec.seed + 2)

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    history = {"train_mse": [], "test_mse": []}
    n = len(x_train)

    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, spec.batch_size):
            batch = order[lo:lo + spec.batch_size]
            loss, gw, gb, _ = _forward_backward(
                model, x_train[batch], y_train[batch],
                dropout_rng if spec.dropout_rate > 0 else None)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}; lower the learning "
                    f"rate (currently {spec.learning_rate})")
            step += 1
            bc1 = 1.0 - spec.beta1 ** step
            bc2 = 1.0 - spec.beta2 ** step
            for i in range(len(model.weights)):
                m_w[i] = spec.beta1 * m_w[i] + (1 - spec.beta1) * gw[i]
                v_w[i] = spec.beta2 * v_w[i] + (1 - spec.beta2) * gw[i] ** 2
                model.weights[i] -= spec.learning_rate * (m_w[i] / bc1) / (
                    np.sqrt(v_w[i] / bc2) + spec.eps)
                m_b[i] = spec.beta1 * m_b[i] + (1 - spec.beta1) * gb[i]
                v_b[i] = spec.beta2 * v_b[i] + (1 - spec.beta2) * gb[i] ** 2
                model.biases[i] -= spec.learning_rate * (m_b[i] / bc1) / (
                    np.sqrt(v_b[i] / bc2) + spec.eps)
        history["train_mse"].append(_mse(model, x_train, y_train))
        if x_test is not None:
            history["test_mse"].append(_mse(model, x_test, y_test))
        if progress:
            progress(epoch + 1, spec.epochs, history)
    model.history = history
    return model


def fit_dataset(ds, progress=None, **spec_overrides) -> MLPModel:
    """Init + train one model from a dataset view, wiring normalization.

    Architecture defaults come from the model id; overrides win. The
    trained model carries the dataset's target normalization and records
    its test-split MAE in metadata.
    """
    x_train, y_train = ds.train_arrays()
    spec = MLPSpec.for_model(ds.model_id, x_train.shape[1],
                             y_train.shape[1], **spec_overrides)
    model = init_model(spec)
    model.feature_names = tuple(ds.feature_names)
    model.target_names = tuple(ds.target_names)
    model.y_min = np.asarray(ds.y_min, dtype=float)
    model.y_max = np.asarray(ds.y_max, dtype=float)
    x_test, y_test = ds.test_arrays()
    train(model, x_train, y_train, x_test, ds.normalize(y_test),
          progress=progress)
    report = evaluate(model, x_test, y_test)
    model.metadata = {
        "model_id": ds.model_id,
        "provenance": dict(getattr(ds, "provenance", {})),
        "test_mae": {n: float(report.mae[i])
                     for i, n in enumerate(model.target_names)},
        "test_r2": {n: float(report.r2[i])
                    for i, n in enumerate(model.target_names)},
    }
    return model


def _mse(model, x, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    pred = forward(model, x)
    return float(np.mean((pred - y) ** 2))


@dataclass(frozen=True)
class EvalReport:
    target_names: tuple
    mse: np.ndarray
    mae: np.ndarray
    r2: np.ndarray

    def to_dict(self):
        return {name: {"mse": float(self.mse[i]), "mae": float(self.mae[i]),
                       "r2": float(self.r2[i])}
                for i, name in enumerate(self.target_names)}

    def to_text(self):
        lines = [f"{'target':<12} {'mse':>12} {'mae':>12} {'r2':>8}"]
        for i, name in enumerate(self.target_names):
            lines.append(f"{name:<12} {self.mse[i]:>12.6f} "
                         f"{self.mae[i]:>12.6f} {self.r2[i]:>8.4f}")
        return "\n".join(lines)


def evaluate(model: MLPModel, x, y_raw) -> EvalReport:
    """MSE/MAE/R^2 per target, in denormalized units."""
    y_raw = np.asarray(y_raw, dtype=float)
    if y_raw.ndim == 1:
        y_raw = y_raw[:, None]
    pred = model.denormalize(forward(model, x))
    err = pred - y_raw
    mse = np.mean(err ** 2, axis=0)
    mae = np.mean(np.abs(err), axis=0)
    ss_res = np.sum(err ** 2, axis=0)
    ss_tot = np.sum((y_raw - y_raw.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    names = model.target_names or tuple(
        f"y{i}" for i in range(y_raw.shape[1]))
    return EvalReport(names, mse, mae, r2)


def predict(model: MLPModel, features):
    """One feature vector in, denormalized targets out.

    Returns ``(values, raw)``: raw is the sigmoid output, useful for
    spotting predictions pushed against the training range.
    """
    raw = forward(model, np.asarray(features, dtype=float))[0]
    return model.denormalize(raw), raw


def gradient_check(spec: MLPSpec, n_samples=None, batch=4, h=1e-5, seed=5):
    """Max relative error between backprop and central differences.

    ``n_samples`` limits the number of probed parameters per weight and
    bias array (None checks all of them); dropout is forced off so both
    sides see the same function.
    """
    spec = MLPSpec(**{**asdict(spec), "dropout_rate": 0.0})
    model = init_model(spec)
    rng = np.random.default_rng(seed)
    x = rng.random((batch, spec.input_dim))
    y = rng.random((batch, spec.output_dim))
    _, gw, gb, _ = _forward_backward(model, x, y, None)

    def loss_at():
        out = forward(model, x)
        return float(np.mean((out - y) ** 2))

    worst = 0.0
    for arrays, grads in ((model.weights, gw), (model.biases, gb)):
        for arr, grad in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            if n_samples is None or n_samples >= flat.size:
                probe = np.arange(flat.size)
            else:
                probe = rng.choice(flat.size, size=n_samples, replace=False)
            for j in probe:
                keep = flat[j]
                flat[j] = keep + h
                up = loss_at()
                flat[j] = keep - h
                down = loss_at()
                flat[j] = keep
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(numeric), abs(gflat[j]), 1e-12)
                worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst


def _encode_array(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype=np.float64)
                            .tobytes()).decode("ascii")


def _decode_array(payload, shape):
    raw = base64.b64decode(payload.encode("ascii"))
    a = np.frombuffer(raw, dtype=np.float64).copy()
    if a.size != int(np.prod(shape)):
        raise ModelFormatError(
            f"weight payload holds {a.size} values, shape {shape} wants "
            f"{int(np.prod(shape))}")
    return a.reshape(shape)


def save(model: MLPModel, path):
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": asdict(model.spec),
        "feature_names": list(model.feature_names),
        "target_names": list(model.target_names),
        "y_min": None if model.y_min is None else model.y_min.tolist(),
        "y_max": None if model.y_max is None else model.y_max.tolist(),
        "x_mean": None if model.x_mean is None else model.x_mean.tolist(),
        "x_scale": None if model.x_scale is None else model.x_scale.tolist(),
        "history": model.history,
        "metadata": model.metadata,
        "layers": [
            {"shape": list(w.shape), "w": _encode_array(w),
             "b": _encode_array(b)}
            for w, b in zip(model.weights, model.biases)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load(path) -> MLPModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(
            f"{path} is not a valid model file: {exc.msg} at offset "
            f"{exc.pos}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r} "
            f"(supported: {MODEL_VERSION})")
    try:
        spec = MLPSpec(**doc["spec"])
        weights, biases = [], []
        dims = spec.layer_dims()
        for layer, (a, b) in zip(doc["layers"], zip(dims[:-1], dims[1:])):
            if list(layer["shape"]) != [a, b]:
                raise ModelFormatError(
                    f"layer shape {layer['shape']} does not chain with the "
                    f"spec ({a}x{b} expected)")
            weights.append(_decode_array(layer["w"], (a, b)))
            biases.append(_decode_array(layer["b"], (b,)))
        if len(weights) != spec.hidden_layers + 1:
            raise ModelFormatError(
                f"{len(weights)} layers present, spec wants "
                f"{spec.hidden_layers + 1}")
        def arr(key):
            v = doc.get(key)
            return None if v is None else np.array(v)

        return MLPModel(
            spec, weights, biases,
            tuple(doc.get("feature_names", ())),
            tuple(doc.get("target_names", ())),
            arr("y_min"), arr("y_max"), arr("x_mean"), arr("x_scale"),
            doc.get("history", {}), doc.get("metadata", {}))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
