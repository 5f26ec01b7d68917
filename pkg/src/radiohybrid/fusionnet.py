"""Feature fusion and the trainable classification head.

The head is ``input -> [dense -> batchnorm -> GELU -> dropout] x k -> dense -> softmax``,
trained with Adam on categorical cross-entropy, a reduce-on-plateau learning
rate schedule and early stopping that restores the best epoch.
Everything runs in float64 NumPy.
"""
from __future__ import annotations

import copy
import csv
import io
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._backend import kernels
from .errors import (
    BadMagic,
    CorruptFile,
    DegenerateBatch,
    DimMismatch,
    EmptyComponent,
    EmptyDataset,
    InvalidParam,
    ShapeMismatch,
    StaleCache,
)
from .imgio import CLASS_NAMES

__all__ = [
    "compound_scaling",
    "FusedVector",
    "fuse_features",
    "fuse_matrices",
    "gelu",
    "gelu_grad",
    "softmax",
    "cross_entropy",
    "ModelParams",
    "init_params",
    "head_forward",
    "head_backward",
    "update_running_stats",
    "OptimizerState",
    "adam_step",
    "PlateauScheduler",
    "EarlyStopping",
    "TrainConfig",
    "TrainHistory",
    "train",
    "predict_proba",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_FLOOR = 1e-12
BN_EPS = 1e-5


def compound_scaling(alpha: float, beta: float, gamma: float, phi: float):
    """Depth/width/resolution multipliers ``alpha**phi, beta**phi, gamma**phi``.

    The fourth value is the residual ``|alpha * beta**2 * gamma**2 - 2|`` of
    the FLOPs-doubling constraint.
    """
    if not (alpha > 0 and beta > 0 and gamma > 0):
        raise InvalidParam("scaling bases must be positive")
    return alpha**phi, beta**phi, gamma**phi, abs(alpha * beta**2 * gamma**2 - 2.0)


# ---------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------
@dataclass
class FusedVector:
    vector: np.ndarray
    deep_dim: int
    radiomic_dim: int


def fuse_features(deep, radiomic) -> FusedVector:
    """Concatenate ``deep || radiomic``; ``radiomic`` may be a RadiomicTensor."""
    deep = np.asarray(deep, dtype=np.float64).ravel()
    rad = np.asarray(getattr(radiomic, "vector", radiomic), dtype=np.float64).ravel()
    if deep.size == 0 or rad.size == 0:
        raise EmptyComponent("both fusion inputs must be non-empty")
    return FusedVector(np.concatenate([deep, rad]), deep.size, rad.size)


def fuse_matrices(deep: np.ndarray | None, radiomic: np.ndarray) -> np.ndarray:
    """Row-wise fusion of feature matrices; ``deep=None`` gives radiomics-only rows."""
    radiomic = np.asarray(radiomic, dtype=np.float64)
    if deep is None:
        return radiomic
    deep = np.asarray(deep, dtype=np.float64)
    if deep.shape[0] != radiomic.shape[0]:
        raise DimMismatch(f"{deep.shape[0]} deep rows vs {radiomic.shape[0]} radiomic rows")
    if deep.shape[1] == 0 or radiomic.shape[1] == 0:
        raise EmptyComponent("both fusion inputs must be non-empty")
    return np.hstack([deep, radiomic])


# ---------------------------------------------------------------------
# Elementwise pieces
# ---------------------------------------------------------------------
def gelu(x):
    """``x * Phi(x)`` with the exact Gaussian CDF."""
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean categorical cross-entropy; predictions are clipped to [1e-12, 1]."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeMismatch(f"predictions {pred.shape} vs targets {target.shape}")
    logp = np.log(np.clip(pred, PROB_FLOOR, 1.0))
    return float(-np.sum(target * logp) / pred.shape[0]) + 0.0  # no -0.0


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ---------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------
@dataclass
class ModelParams:
    """Dense weights (``fan_in x fan_out``), biases and per-hidden-layer BatchNorm state."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray]
    bn_beta: list[np.ndarray]
    bn_mean: list[np.ndarray]
    bn_var: list[np.ndarray]
    dropout: float = 0.5
    classes: tuple[str, ...] = CLASS_NAMES
    version: int = 0

    @property
    def n_hidden(self) -> int:
        return len(self.sizes) - 2

    def trainable(self) -> dict[str, np.ndarray]:
        """Name -> array views of every trainable tensor (updated in place by Adam)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        for i, (g, be) in enumerate(zip(self.bn_gamma, self.bn_beta)):
            out[f"gamma{i}"] = g
            out[f"beta{i}"] = be
        return out

    def n_parameters(self) -> int:
        return sum(a.size for a in self.trainable().values())

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def init_params(
    sizes, seed: int = 0, dropout: float = 0.5, classes: tuple[str, ...] = CLASS_NAMES
) -> ModelParams:
    """He-normal weights, zero biases, identity BatchNorm."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidParam(f"bad layer sizes {sizes}")
    if sizes[-1] != len(classes):
        raise InvalidParam(f"output width {sizes[-1]} != {len(classes)} classes")
    if not 0.0 <= dropout < 1.0:
        raise InvalidParam(f"dropout must be in [0, 1), got {dropout}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    hidden = sizes[1:-1]
    return ModelParams(
        sizes,
        weights,
        biases,
        [np.ones(h) for h in hidden],
        [np.zeros(h) for h in hidden],
        [np.zeros(h) for h in hidden],
        [np.ones(h) for h in hidden],
        dropout,
        tuple(classes),
    )


# ---------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------
def head_forward(params: ModelParams, batch: np.ndarray, mode: str = "eval", dropout_seed: int = 0):
    """Run the head; returns ``(logits, cache)``.

    Pure: BatchNorm running statistics are not touched here; see
    :func:`update_running_stats`. In train mode BatchNorm uses batch
    statistics and dropout masks come from a Philox stream keyed by
    ``dropout_seed``.
    """
    if mode not in ("train", "eval"):
        raise InvalidParam(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != params.sizes[0]:
        raise ShapeMismatch(f"batch width {x.shape[1]} != input size {params.sizes[0]}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise DegenerateBatch("train-mode BatchNorm needs at least 2 rows")
    rng = np.random.Generator(np.random.Philox(key=dropout_seed)) if train else None
    layers = []
    h = x
    for i in range(params.n_hidden):
        z = h @ params.weights[i] + params.biases[i]
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
        else:
            mu, var = params.bn_mean[i], params.bn_var[i]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        y = params.bn_gamma[i] * xhat + params.bn_beta[i]
        a = gelu(y)
        mask = None
        if train and params.dropout > 0.0:
            keep = rng.random(a.shape) >= params.dropout
            mask = keep / (1.0 - params.dropout)
            a = a * mask
        layers.append({"h_in": h, "mu": mu, "var": var, "xhat": xhat, "inv_std": inv_std, "y": y, "mask": mask})
        h = a
    logits = h @ params.weights[-1] + params.biases[-1]
    cache = {"mode": mode, "params": params, "version": params.version, "layers": layers, "h_last": h, "logits": logits}
    return logits, cache


def head_backward(cache: dict, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy w.r.t. every trainable tensor.

    ``cache`` must come from a train-mode :func:`head_forward` on parameters
    that have not been updated since.
    """
    params: ModelParams = cache["params"]
    if cache["mode"] != "train":
        raise StaleCache("backward needs a train-mode forward cache")
    if cache["version"] != params.version:
        raise StaleCache("parameters changed since the forward pass")
    logits = cache["logits"]
    y_true = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if y_true.shape != logits.shape:
        raise ShapeMismatch(f"targets {y_true.shape} vs logits {logits.shape}")
    n = logits.shape[0]
    grads: dict[str, np.ndarray] = {}
    d = (softmax(logits) - y_true) / n
    last = len(params.weights) - 1
    grads[f"W{last}"] = cache["h_last"].T @ d
    grads[f"b{last}"] = d.sum(axis=0)
    dh = d @ params.weights[last].T
    for i in reversed(range(params.n_hidden)):
        L = cache["layers"][i]
        if L["mask"] is not None:
            dh = dh * L["mask"]
        dy = dh * gelu_grad(L["y"])
        grads[f"gamma{i}"] = np.sum(dy * L["xhat"], axis=0)
        grads[f"beta{i}"] = dy.sum(axis=0)
        dxhat = dy * params.bn_gamma[i]
        xhat = L["xhat"]
        dz = (L["inv_std"] / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        grads[f"W{i}"] = L["h_in"].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ params.weights[i].T
    return grads


def update_running_stats(params: ModelParams, cache: dict, momentum: float = 0.1) -> None:
    """Fold a train-mode cache's batch statistics into the running estimates."""
    n = cache["logits"].shape[0]
    for i, L in enumerate(cache["layers"]):
        unbiased = L["var"] * (n / (n - 1))
        params.bn_mean[i] = (1.0 - momentum) * params.bn_mean[i] + momentum * L["mu"]
        params.bn_var[i] = (1.0 - momentum) * params.bn_var[i] + momentum * unbiased


# ---------------------------------------------------------------------
# Optimiser and schedules
# ---------------------------------------------------------------------
@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place.

    ``weight_decay > 0`` adds decoupled (AdamW-style) decay.
    """
    tensors = params.trainable()
    if set(grads) != set(tensors):
        raise ShapeMismatch(f"gradient keys {sorted(grads)} != parameter keys {sorted(tensors)}")
    for name, p in tensors.items():
        if grads[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {grads[name].shape} vs parameter {p.shape}")
        if not p.flags.c_contiguous:
            raise ValueError(f"{name} must be C-contiguous for the in-place update")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in tensors.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        kernels.adam_update(
            p.reshape(-1),
            np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.lr, b1, b2, c1, c2, state.eps, state.lr * state.weight_decay,
        )
    params.version += 1


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, factor: float = 0.1, patience: int = 5, min_lr: float = 1e-6, threshold: float = 1e-8):
        if not 0.0 < factor < 1.0 or patience < 1:
            raise InvalidParam("plateau factor must be in (0, 1) and patience >= 1")
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = np.inf
        self.wait = 0

    def step(self, val_loss: float, lr: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.wait = 0
            return lr
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return max(lr * self.factor, self.min_lr)
        return lr


class EarlyStopping:
    def __init__(self, patience: int = 10, threshold: float = 1e-8):
        self.patience = patience
        self.threshold = threshold
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def step(self, val_loss: float, epoch: int) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.wait == 0


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    lr: float = 1e-3
    early_stop_patience: int = 10
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    min_lr: float = 1e-6
    hidden: tuple[int, ...] = (512, 128)
    dropout: float = 0.5
    weight_decay: float = 0.0
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if min(self.batch_size, self.max_epochs, self.early_stop_patience, self.plateau_patience) < 1:
            raise InvalidParam("batch size, epochs and patiences must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise InvalidParam("plateau factor must be in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in HISTORY_FIELDS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append({k: (int(r[k]) if k == "epoch" else float(r[k])) for k in HISTORY_FIELDS})
        return cls(rows)


def _batches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    out = [perm[i : i + size] for i in range(0, len(perm), size)]
    # a 1-row batch cannot be batch-normalised; fold it into its predecessor
    if len(out) > 1 and len(out[-1]) == 1:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def _evaluate_split(params: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    probs = predict_proba(params, x)
    k = params.sizes[-1]
    loss = cross_entropy(probs, _onehot(y, k))
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return loss, acc


def train(x_train, y_train, x_val, y_val, cfg: TrainConfig | None = None, classes=CLASS_NAMES, log=None):
    """Mini-batch Adam training; returns ``(best ModelParams, TrainHistory)``.

    The learning rate for an epoch is recorded in that epoch's history row;
    the plateau scheduler then decides the rate for the next epoch.
    """
    cfg = cfg or TrainConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if x_train.ndim != 2 or x_val.ndim != 2 or x_train.shape[1] != x_val.shape[1]:
        raise DimMismatch(f"feature widths differ: {x_train.shape} vs {x_val.shape}")
    if len(y_train) != len(x_train) or len(y_val) != len(x_val):
        raise DimMismatch("label count does not match feature rows")
    if len(x_train) < 2:
        raise DegenerateBatch("need at least 2 training rows")

    sizes = (x_train.shape[1], *cfg.hidden, len(classes))
    params = init_params(sizes, cfg.seed, cfg.dropout, tuple(classes))
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    plateau = PlateauScheduler(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
    stopper = EarlyStopping(cfg.early_stop_patience)
    targets = _onehot(y_train, len(classes))
    history = TrainHistory()
    best = params.copy()

    for epoch in range(1, cfg.max_epochs + 1):
        perm = np.random.Generator(np.random.Philox(key=[cfg.seed, epoch])).permutation(len(x_train))
        for bi, idx in enumerate(_batches(perm, cfg.batch_size)):
            dropout_seed = (cfg.seed << 40) ^ (epoch << 20) ^ bi
            _, cache = head_forward(params, x_train[idx], "train", dropout_seed)
            grads = head_backward(cache, targets[idx])
            update_running_stats(params, cache, cfg.bn_momentum)
            adam_step(params, grads, opt)
        tr_loss, tr_acc = _evaluate_split(params, x_train, y_train)
        va_loss, va_acc = _evaluate_split(params, x_val, y_val)
        history.rows.append(
            {"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc, "val_loss": va_loss, "val_acc": va_acc, "lr": opt.lr}
        )
        if log is not None:
            log(f"epoch {epoch:3d} loss {tr_loss:.4f} acc {tr_acc:.4f} val_loss {va_loss:.4f} val_acc {va_acc:.4f} lr {opt.lr:.2e}")
        stop = stopper.step(va_loss, epoch)
        if stopper.improved_last:
            best = params.copy()
        opt.lr = plateau.step(va_loss, opt.lr)
        if stop:
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    return best, history


def predict_proba(params: ModelParams, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = [softmax(head_forward(params, x[i : i + chunk], "eval")[0]) for i in range(0, len(x), chunk)]
    return np.vstack(out) if out else np.zeros((0, params.sizes[-1]))


# ---------------------------------------------------------------------
# RHN1 checkpoint
# ---------------------------------------------------------------------
CHECKPOINT_MAGIC = b"RHN1"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    """Little-endian: magic, version, layer-size table, dropout, class table,
    then float32 W/b per dense layer and gamma/beta/mean/var per hidden layer."""
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(params.sizes))
    buf += struct.pack(f"<{len(params.sizes)}I", *params.sizes)
    buf += struct.pack("<f", params.dropout)
    buf += struct.pack("<I", len(params.classes))
    for name in params.classes:
        raw = name.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw
    for w, b in zip(params.weights, params.biases):
        buf += w.astype("<f4").tobytes() + b.astype("<f4").tobytes()
    for arrs in zip(params.bn_gamma, params.bn_beta, params.bn_mean, params.bn_var):
        for a in arrs:
            buf += a.astype("<f4").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not an RHN1 checkpoint")
    try:
        pos = 4
        version, n = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != CHECKPOINT_VERSION:
            raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
        sizes = struct.unpack_from(f"<{n}I", blob, pos)
        pos += 4 * n
        (dropout,) = struct.unpack_from("<f", blob, pos)
        pos += 4
        (n_cls,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        classes = []
        for _ in range(n_cls):
            (ln,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            classes.append(blob[pos : pos + ln].decode("utf-8"))
            pos += ln

        def take(shape):
            nonlocal pos
            count = int(np.prod(shape))
            if pos + 4 * count > len(blob):
                raise CorruptFile(f"{path}: truncated parameter blob")
            a = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).astype(np.float64).reshape(shape)
            pos += 4 * count
            return a

        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(take((fan_in, fan_out)))
            biases.append(take((fan_out,)))
        bn = [[take((h,)) for _ in range(4)] for h in sizes[1:-1]]
    except struct.error as exc:
        raise CorruptFile(f"{path}: truncated header ({exc})") from None
    if pos != len(blob):
        raise CorruptFile(f"{path}: {len(blob) - pos} trailing bytes")
    return ModelParams(
        tuple(sizes),
        weights,
        biases,
        [b[0] for b in bn],
        [b[1] for b in bn],
        [b[2] for b in bn],
        [b[3] for b in bn],
        float(np.float32(dropout)),
        tuple(classes),
    )
