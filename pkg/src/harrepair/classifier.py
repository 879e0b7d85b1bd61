"""A small 1D CNN in numpy: layers, training, micro-F1 evaluation and the
phone/watch cross-hardware harness.

Architecture: input batch norm (per channel) -> 3 x [conv "same" -> ReLU ->
max-pool] -> dense -> ReLU -> dropout -> dense -> softmax.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from harrepair.preprocess import WindowSet, leave_one_out

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class EmptyTrainingSet(ValueError):
    pass


class EmptySet(ValueError):
    pass


class ClassMapMismatch(ValueError):
    pass


@dataclass
class CnnConfig:
    input_length: int = 100
    input_channels: int = 3
    filters: tuple = (32, 64, 128)
    kernel_size: int = 5
    pool: int = 2
    hidden: int = 128
    n_classes: int = 5
    dropout: float = 0.5
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.flat_length < 1:
            raise ValueError(f"conv stack leaves no samples for input length {self.input_length}")

    @property
    def feature_length(self) -> int:
        n = self.input_length
        for _ in self.filters:
            n //= self.pool
        return n

    @property
    def flat_length(self) -> int:
        return self.feature_length * (self.filters[-1] if self.filters else self.input_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CnnConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CnnConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class BatchNorm1d(Layer):
    """Per-channel standardization over batch and time axes of ``(B, C, L)``."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.buffers = {"running_mean": np.zeros(channels, dtype), "running_var": np.ones(channels, dtype)}

    def forward(self, x, train):
        g, b = self.params["gamma"], self.params["beta"]
        if train:
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            n = x.shape[0] * x.shape[2]
            m = self.momentum
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mu).astype(g.dtype)
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(g.dtype)
        else:
            mu, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None]) * inv_std[None, :, None]
        self._cache = (xhat, inv_std, train)
        return g[None, :, None] * xhat + b[None, :, None]

    def backward(self, dout):
        xhat, inv_std, train = self._cache
        g = self.params["gamma"]
        self.grads["beta"] = dout.sum(axis=(0, 2))
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2))
        dxhat = dout * g[None, :, None]
        if not train:
            return dxhat * inv_std[None, :, None]
        n = dout.shape[0] * dout.shape[2]
        s1 = dxhat.sum(axis=(0, 2))[None, :, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        return (inv_std[None, :, None] / n) * (n * dxhat - s1 - xhat * s2)


class Conv1d(Layer):
    """Stride-1 convolution with "same" zero padding, via im2col."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, dtype=np.float32):
        super().__init__()
        std = np.sqrt(2.0 / (in_channels * kernel_size))
        self.params = {
            "weight": (rng.standard_normal((out_channels, in_channels, kernel_size)) * std).astype(dtype),
            "bias": np.zeros(out_channels, dtype),
        }
        self.k = kernel_size
        self.pad = (kernel_size // 2, kernel_size - 1 - kernel_size // 2)

    def forward(self, x, train):
        B, C, L = x.shape
        w = self.params["weight"]
        F = w.shape[0]
        xp = np.pad(x, ((0, 0), (0, 0), self.pad))
        cols = sliding_window_view(xp, self.k, axis=2).transpose(0, 2, 1, 3).reshape(B * L, C * self.k)
        out = cols @ w.reshape(F, -1).T + self.params["bias"]
        self._cache = (cols, x.shape)
        return out.reshape(B, L, F).transpose(0, 2, 1)

    def backward(self, dout):
        cols, (B, C, L) = self._cache
        w = self.params["weight"]
        F = w.shape[0]
        d = dout.transpose(0, 2, 1).reshape(B * L, F)
        self.grads["weight"] = (d.T @ cols).reshape(w.shape)
        self.grads["bias"] = d.sum(axis=0)
        dcols = (d @ w.reshape(F, -1)).reshape(B, L, C, self.k)
        dxp = np.zeros((B, C, L + self.k - 1), dtype=dout.dtype)
        for j in range(self.k):
            dxp[:, :, j : j + L] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, self.pad[0] : self.pad[0] + L]


class ReLU(Layer):
    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling; a trailing remainder is dropped."""

    def __init__(self, width=2):
        super().__init__()
        self.width = width

    def forward(self, x, train):
        B, C, L = x.shape
        n = L // self.width
        xr = x[:, :, : n * self.width].reshape(B, C, n, self.width)
        idx = xr.argmax(axis=3)
        self._cache = (x.shape, idx)
        return np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]

    def backward(self, dout):
        (B, C, L), idx = self._cache
        n = dout.shape[2]
        mask = np.arange(self.width) == idx[..., None]
        dx = np.zeros((B, C, L), dtype=dout.dtype)
        dx[:, :, : n * self.width] = (mask * dout[..., None]).reshape(B, C, n * self.width)
        return dx


class Flatten(Layer):
    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        std = np.sqrt(2.0 / n_in)
        self.params = {
            "weight": (rng.standard_normal((n_in, n_out)) * std).astype(dtype),
            "bias": np.zeros(n_out, dtype),
        }

    def forward(self, x, train):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = self._x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


class Dropout(Layer):
    """Inverted dropout; masks come from the layer's own generator."""

    def __init__(self, p, rng):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x, train):
        if not train or self.p == 0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(labels)
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class CnnModel:
    def __init__(self, config: CnnConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        init_rng = np.random.default_rng([config.seed, 0])
        self.dropout_rng = np.random.default_rng([config.seed, 2])
        layers: list[Layer] = [BatchNorm1d(config.input_channels, dtype=dtype)]
        c = config.input_channels
        for f in config.filters:
            layers += [Conv1d(c, f, config.kernel_size, init_rng, dtype), ReLU(), MaxPool1d(config.pool)]
            c = f
        layers += [
            Flatten(),
            Dense(config.flat_length, config.hidden, init_rng, dtype),
            ReLU(),
            Dropout(config.dropout, self.dropout_rng),
            Dense(config.hidden, config.n_classes, init_rng, dtype),
        ]
        self.layers = layers
        self.training = False
        self.last_predictions = None

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.buffers.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def _check(self, x):
        x = np.asarray(x)
        expected = (self.config.input_channels, self.config.input_length)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeMismatch(f"expected batch of shape (B, {expected[0]}, {expected[1]}), got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def logits(self, x, train: bool):
        out = self._check(x)
        self.training = train
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def forward(self, x, mode: str = "infer"):
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        return softmax(self.logits(x, mode == "train"))

    def backward(self, x, labels):
        """Train-mode forward and backward pass; returns ``(grads, loss)``."""
        labels = np.asarray(labels)
        if labels.shape != (np.asarray(x).shape[0],):
            raise ShapeMismatch("one label per window required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.config.n_classes):
            raise ValueError("label outside the class range")
        logits = self.logits(x, True)
        self.last_predictions = logits.argmax(axis=1)
        loss, d = cross_entropy(logits, labels)
        d = d.astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return self.named_grads(), loss

    def predict(self, x, batch_size=1024):
        x = np.asarray(x)
        return np.concatenate(
            [self.logits(x[i : i + batch_size], False).argmax(axis=1) for i in range(0, len(x), batch_size)]
        ) if len(x) else np.zeros(0, dtype=np.int64)

    def state(self) -> dict[str, np.ndarray]:
        return {**{f"param/{k}": v.copy() for k, v in self.named_params().items()},
                **{f"buffer/{k}": v.copy() for k, v in self.named_buffers().items()}}

    def load_state(self, state: dict) -> None:
        for kind, group in (("param", "params"), ("buffer", "buffers")):
            for i, layer in enumerate(self.layers):
                store = getattr(layer, group)
                for k in store:
                    arr = np.asarray(state[f"{kind}/{i}.{k}"])
                    if arr.shape != store[k].shape:
                        raise ShapeMismatch(f"{kind} {i}.{k}: {arr.shape} != {store[k].shape}")
                    store[k] = arr.astype(self.dtype)


def forward(model: CnnModel, batch, mode: str = "infer"):
    return model.forward(batch, mode)


def backward(model: CnnModel, batch, labels):
    return model.backward(batch, labels)


def save_model(model: CnnModel, path) -> None:
    header = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "dtype": model.dtype.name}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **model.state())


def load_model(path) -> CnnModel:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        model = CnnModel(CnnConfig.from_dict(header["config"]), dtype=header["dtype"])
        model.load_state({k: z[k] for k in z.files if k != "header"})
    return model


@dataclass
class EvalResult:
    micro_f1: float
    accuracy: float
    confusion: np.ndarray
    n: int


def micro_f1(confusion) -> float:
    """F1 from class-pooled TP/FP/FN counts (rows: true, columns: predicted)."""
    confusion = np.asarray(confusion)
    tp = float(np.trace(confusion))
    fp = float(confusion.sum(axis=0).sum() - tp)
    fn = float(confusion.sum(axis=1).sum() - tp)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def confusion_matrix(labels, preds, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def evaluate(model: CnnModel, windows: WindowSet) -> EvalResult:
    """Micro-F1 and accuracy (identical for single-label multiclass)."""
    if len(windows) == 0:
        raise EmptySet("cannot evaluate on an empty window set")
    preds = model.predict(windows.values)
    cm = confusion_matrix(windows.labels, preds, model.config.n_classes)
    return EvalResult(micro_f1(cm), float(np.mean(preds == windows.labels)), cm, len(windows))


def train(config: CnnConfig, train_set: WindowSet, validation: WindowSet | None = None, dtype=np.float32):
    """SGD with momentum; deterministic for a fixed ``config.seed``.

    Early stopping runs only with a validation set and ``config.patience``;
    the best-validation parameters are restored.

    Returns:
        ``(model, curve)`` where ``curve`` holds one dict per epoch.
    """
    if len(train_set) == 0:
        raise EmptyTrainingSet("training set is empty")
    model = CnnModel(config, dtype)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    params = model.named_params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    x_all, y_all = train_set.values, train_set.labels
    n = len(train_set)
    curve = []
    best = (np.inf, None)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss, correct = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i : i + config.batch_size]
            grads, loss = model.backward(x_all[idx], y_all[idx])
            total_loss += loss * len(idx)
            correct += int(np.sum(model.last_predictions == y_all[idx]))
            for k, p in model.named_params().items():
                v = velocity[k]
                v *= config.momentum
                v -= config.learning_rate * grads[k]
                p += v
        row = {"epoch": epoch, "loss": total_loss / n, "accuracy": correct / n}
        if validation is not None and len(validation):
            probs = np.concatenate([model.forward(validation.values[j : j + 1024]) for j in range(0, len(validation), 1024)])
            row["val_loss"] = float(np.mean(-np.log(np.clip(probs[np.arange(len(validation)), validation.labels], 1e-12, None))))
            row["val_accuracy"] = float(np.mean(probs.argmax(axis=1) == validation.labels))
            if config.patience is not None:
                if row["val_loss"] < best[0]:
                    best, stale = (row["val_loss"], model.state()), 0
                else:
                    stale += 1
        curve.append(row)
        if config.patience is not None and stale > config.patience:
            logger.info("early stop at epoch %d", epoch)
            break
    if config.patience is not None and best[1] is not None:
        model.load_state(best[1])
    return model, curve


DEVICE_ORDER = ("phone", "watch")


@dataclass
class CellResult:
    train_device: str
    test_device: str
    micro_f1: float | None
    confusion: np.ndarray | None
    protocol: str
    per_subject: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)


@dataclass
class EvalReport:
    """2 x 2 micro-F1 grid keyed by (train device, test device)."""

    cells: dict = field(default_factory=dict)
    class_names: tuple = ()

    def f1(self, train_device, test_device):
        return self.cells[(train_device, test_device)].micro_f1

    def grid(self) -> np.ndarray:
        return np.array(
            [[np.nan if self.f1(a, b) is None else self.f1(a, b) for b in DEVICE_ORDER] for a in DEVICE_ORDER]
        )

    def cross_device_mean(self) -> float:
        return float(np.mean([self.f1("phone", "watch"), self.f1("watch", "phone")]))

    def write_table(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_on", *(f"test_{d}" for d in DEVICE_ORDER)])
            for a in DEVICE_ORDER:
                w.writerow([a, *("" if self.f1(a, b) is None else f"{self.f1(a, b):.4f}" for b in DEVICE_ORDER)])

    def write_confusions(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_on", "test_on", "true_class", *self.class_names])
            for (a, b), cell in sorted(self.cells.items()):
                if cell.confusion is None:
                    continue
                for name, row in zip(self.class_names, cell.confusion.tolist()):
                    w.writerow([a, b, name, *row])

    def write_per_subject(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_on", "test_on", "subject", "micro_f1"])
            for (a, b), cell in sorted(self.cells.items()):
                for s, f in sorted(cell.per_subject.items()):
                    w.writerow([a, b, s, f"{f:.6f}"])

    def write_curves(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train_on", "test_on", "run", "epoch", "loss", "accuracy"])
            for (a, b), cell in sorted(self.cells.items()):
                for run, curve in enumerate(cell.curves):
                    for row in curve:
                        w.writerow([a, b, run, row["epoch"], f"{row['loss']:.6f}", f"{row['accuracy']:.6f}"])


def _leave_one_out_cell(ws: WindowSet, device: str, config: CnnConfig, dtype) -> CellResult:
    per_subject, curves = {}, []
    cm = np.zeros((config.n_classes, config.n_classes), dtype=np.int64)
    for plan in leave_one_out(ws.subject_ids()):
        model, curve = train(config, ws.for_subjects(plan.train), dtype=dtype)
        (subject,) = plan.test
        res = evaluate(model, ws.for_subjects(plan.test))
        per_subject[subject] = res.micro_f1
        cm += res.confusion
        curves.append(curve)
    return CellResult(device, device, float(np.mean(list(per_subject.values()))), cm, "leave-one-out", per_subject, curves)


def cross_eval(phone: WindowSet, watch: WindowSet, config: CnnConfig, diagonal: str = "loo", dtype=np.float32) -> EvalReport:
    """Phone/watch cross-hardware evaluation.

    Diagonal cells average leave-one-subject-out scores; off-diagonal cells
    train on every subject of one device and test on every subject of the
    other. ``diagonal="skip"`` leaves the diagonal empty, which is much
    cheaper when only the cross-device cells matter.
    """
    if tuple(phone.class_names) != tuple(watch.class_names):
        raise ClassMapMismatch(f"{phone.class_names} != {watch.class_names}")
    if len(phone) == 0 or len(watch) == 0:
        raise EmptySet("both window sets must be nonempty")
    if diagonal not in ("loo", "skip"):
        raise ValueError(f"unknown diagonal mode {diagonal!r}")
    sets = {"phone": phone, "watch": watch}
    report = EvalReport(class_names=tuple(phone.class_names))
    for a in DEVICE_ORDER:
        model, curve = train(config, sets[a], dtype=dtype)
        for b in DEVICE_ORDER:
            if a == b:
                continue
            res = evaluate(model, sets[b])
            report.cells[(a, b)] = CellResult(a, b, res.micro_f1, res.confusion, "all-subjects", curves=[curve])
        if diagonal == "loo":
            report.cells[(a, a)] = _leave_one_out_cell(sets[a], a, config, dtype)
        else:
            report.cells[(a, a)] = CellResult(a, a, None, None, "skipped")
    return report
