"""A small numpy MLP: training by minibatch SGD and exact input gradients.

Model file layout (all integers little-endian)::

    bytes 0..7    magic b"MSSURR01"
    bytes 8..11   uint32 header length H
    next H bytes  UTF-8 JSON header: version, widths, activation, kind,
                  n_pid, payload_count, norm (normalization stats or null)
    next 8*P      float64 parameters, layer by layer: W (fan_in x fan_out,
                  row-major) then b (fan_out)
    last 32       sha256 over everything before it
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import NormStats
from .workload import AlgorithmKind

MODEL_MAGIC = b"MSSURR01"
MODEL_VERSION = 1
ACTIVATIONS = ("relu", "softplus")
LOSSES = ("huber", "mse", "mae")

DESK_HIDDEN = (32, 64, 64, 32)
FULL_HIDDEN = (64, 256, 1024, 2048, 2048, 1024, 256, 64)


class ModelFileError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class MlpModel:
    widths: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    kind: AlgorithmKind | None = None
    n_pid: int = 0
    norm: NormStats | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match widths")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def copy(self) -> "MlpModel":
        return replace(self, weights=[W.copy() for W in self.weights], biases=[b.copy() for b in self.biases])

    def params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])


def init_model(widths, activation: str = "relu", seed: int = 0, kind=None, n_pid: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in widths)
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    kind = AlgorithmKind.parse(kind) if kind is not None else None
    return MlpModel(widths, activation, Ws, bs, kind=kind, n_pid=n_pid)


def _act(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.logaddexp(0.0, z)


def _act_grad(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free


def _check_in(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_in:
        raise ValueError(f"input width {x.shape[-1]} != model input width {model.n_in}")
    return x


def _forward_cache(model: MlpModel, x: np.ndarray):
    zs, hs = [], [x]
    h = x
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if i == last:
            return z, zs, hs
        zs.append(z)
        h = _act(z, model.activation)
        hs.append(h)


def forward(model: MlpModel, x) -> np.ndarray:
    """Normalized prediction for one input vector or a batch of rows."""
    return _forward_cache(model, _check_in(model, x))[0]


def _backward(model: MlpModel, zs, hs, g_out: np.ndarray, want_params: bool):
    """Backpropagate ``g_out`` (d scalar / d output); returns (d input, param grads)."""
    gW, gb = [], []
    g = g_out
    for i in range(len(model.weights) - 1, -1, -1):
        if want_params:
            gW.append(hs[i].T @ g)
            gb.append(g.sum(axis=0))
        g = g @ model.weights[i].T
        if i > 0:
            g = g * _act_grad(zs[i - 1], model.activation)
    return g, gW[::-1], gb[::-1]


# ---- losses -------------------------------------------------------------------


def loss(pred, target, kind: str = "huber", delta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean elementwise loss and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float)
    r = pred - np.asarray(target, dtype=float)
    n = r.size
    if kind == "mse":
        return float(np.mean(r * r)), 2.0 * r / n
    if kind == "mae":
        return float(np.mean(np.abs(r))), np.sign(r) / n
    if kind == "huber":
        if delta <= 0:
            raise ValueError("huber delta must be positive")
        a = np.abs(r)
        quad = a <= delta
        val = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
        grad = np.where(quad, r, delta * np.sign(r))
        return float(np.mean(val)), grad / n
    raise ValueError(f"unknown loss {kind!r}; choose from {LOSSES}")


# ---- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-2
    lr_decay: float = 0.1
    lr_decay_every: int = 25
    momentum: float = 0.9
    loss: str = "huber"
    delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.delta <= 0:
            raise ValueError("huber delta must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch size and decay period must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    test_loss: float | None


def dataset_loss(model: MlpModel, X, Y, kind: str = "huber", delta: float = 1.0,
                 chunk: int = 8192) -> float:
    total = 0.0
    for s in range(0, X.shape[0], chunk):
        v, _ = loss(forward(model, X[s : s + chunk]), Y[s : s + chunk], kind, delta)
        total += v * Y[s : s + chunk].size
    return total / Y.size


def train(model: MlpModel, Xtr, Ytr, cfg: TrainConfig, Xte=None, Yte=None) -> tuple[MlpModel, list[EpochStats]]:
    """Minibatch SGD with momentum on normalized data; returns a new model and the loss curve."""
    model = model.copy()
    Xtr = _check_in(model, Xtr)
    Ytr = np.asarray(Ytr, dtype=float)
    if Ytr.shape != (Xtr.shape[0], model.n_out):
        raise ValueError("training targets do not match the model output width")
    rng = np.random.default_rng(cfg.seed)
    vW = [np.zeros_like(W) for W in model.weights]
    vb = [np.zeros_like(b) for b in model.biases]
    curve = []
    n = Xtr.shape[0]
    # overflow shows up as a non-finite loss and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
            perm = rng.permutation(n)
            for s in range(0, n, cfg.batch_size):
                idx = perm[s : s + cfg.batch_size]
                xb = Xtr[idx]
                out, zs, hs = _forward_cache(model, xb)
                val, g = loss(out, Ytr[idx], cfg.loss, cfg.delta)
                if not np.isfinite(val):
                    raise TrainingDivergedError(
                        f"loss became {val} in epoch {epoch}; lower the learning rate (now {lr})"
                    )
                _, gW, gb = _backward(model, zs, hs, g, want_params=True)
                for i in range(len(model.weights)):
                    vW[i] = cfg.momentum * vW[i] - lr * gW[i]
                    vb[i] = cfg.momentum * vb[i] - lr * gb[i]
                    model.weights[i] += vW[i]
                    model.biases[i] += vb[i]
            tr = dataset_loss(model, Xtr, Ytr, cfg.loss, cfg.delta)
            if not np.isfinite(tr) or not np.all(np.isfinite(model.params())):
                raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}; lower the learning rate")
            te = dataset_loss(model, Xte, Yte, cfg.loss, cfg.delta) if Xte is not None and len(Xte) else None
            curve.append(EpochStats(epoch, lr, tr, te))
    return model, curve


# ---- input gradients ----------------------------------------------------------


def input_gradient(model: MlpModel, x, objective_weights) -> np.ndarray:
    """d(weights . forward(x)) / dx, with the problem-id coordinates zeroed.

    ``objective_weights`` has one entry per output, or one row per input row.
    """
    x = _check_in(model, x)
    w = np.asarray(objective_weights, dtype=float)
    if w.shape[-1] != model.n_out:
        raise ValueError(f"objective weights need {model.n_out} entries")
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    _, zs, hs = _forward_cache(model, xb)
    g_out = np.broadcast_to(w, (xb.shape[0], model.n_out))
    g, _, _ = _backward(model, zs, hs, g_out, want_params=False)
    g = np.array(g)
    g[:, : model.n_pid] = 0.0
    return g[0] if single else g


def edp_index(model: MlpModel) -> tuple[int, int]:
    """Output positions of total energy and cycles."""
    return model.n_out - 3, model.n_out - 2


def predicted_edp(model: MlpModel, yn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bound-normalized energy x cycles for normalized predictions ``yn``, and the
    output weights whose dot with d(yn)/dx gives its input gradient (product rule)."""
    if model.norm is None:
        raise ValueError("EDP scalarization needs a model carrying normalization stats")
    st = model.norm
    ie, ic = edp_index(model)
    yn = np.atleast_2d(yn)
    e = yn[:, ie] * st.y_std[ie] + st.y_mean[ie]
    c = yn[:, ic] * st.y_std[ic] + st.y_mean[ic]
    # both ratios are >= 1 for real mappings; clamp so a wild prediction cannot flip the sign
    e_pos, c_pos = np.maximum(e, 1e-6), np.maximum(c, 1e-6)
    w = np.zeros_like(yn)
    w[:, ie] = np.where(e > 1e-6, c_pos * st.y_std[ie], 0.0)
    w[:, ic] = np.where(c > 1e-6, e_pos * st.y_std[ic], 0.0)
    return e_pos * c_pos, w


def edp_value_and_gradient(model: MlpModel, x) -> tuple[float, np.ndarray]:
    """Predicted bound-normalized EDP at one normalized input and its input gradient.

    Same arithmetic as ``predicted_edp`` followed by ``_backward``, written for a
    single vector: this is the per-step cost of gradient search.
    """
    x = _check_in(model, x)
    if model.norm is None:
        raise ValueError("EDP scalarization needs a model carrying normalization stats")
    relu = model.activation == "relu"
    Ws, bs = model.weights, model.biases
    masks, h = [], x
    # ndarray.dot has less call overhead than @ on vectors this small
    for W, b in zip(Ws[:-1], bs[:-1]):
        z = h.dot(W)
        z += b
        if relu:
            h = np.maximum(z, 0.0)
            masks.append(z > 0)
        else:
            h = np.logaddexp(0.0, z)
            masks.append(_act_grad(z, model.activation))
    out = h.dot(Ws[-1])
    out += bs[-1]

    st = model.norm
    ie, ic = edp_index(model)
    se, sc = float(st.y_std[ie]), float(st.y_std[ic])
    e = float(out[ie]) * se + float(st.y_mean[ie])
    c = float(out[ic]) * sc + float(st.y_mean[ic])
    e_pos, c_pos = max(e, 1e-6), max(c, 1e-6)
    g = (c_pos * se if e > 1e-6 else 0.0) * Ws[-1][:, ie] + (e_pos * sc if c > 1e-6 else 0.0) * Ws[-1][:, ic]
    for i in range(len(Ws) - 2, -1, -1):
        g = Ws[i].dot(g * masks[i])
    g[: model.n_pid] = 0.0
    return e_pos * c_pos, g


# ---- persistence --------------------------------------------------------------


def save(model: MlpModel, path) -> None:
    header = {
        "version": MODEL_VERSION,
        "widths": list(model.widths),
        "activation": model.activation,
        "kind": model.kind.value if model.kind else None,
        "n_pid": model.n_pid,
        "payload_count": int(model.params().size),
        "norm": model.norm.to_dict() if model.norm is not None else None,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = MODEL_MAGIC + struct.pack("<I", len(hb)) + hb + model.params().astype("<f8").tobytes()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path, kind=None, accel_fingerprint: str | None = None) -> MlpModel:
    """Read a model file; optional ``kind``/``accel_fingerprint`` must match what it was trained for."""
    blob = Path(path).read_bytes()
    if len(blob) < 8 + 4 + 32 or blob[:8] != MODEL_MAGIC:
        raise ModelFileError(f"{path}: not a surrogate model file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError(f"{path}: checksum mismatch (truncated or corrupt)")
    (hlen,) = struct.unpack("<I", body[8:12])
    try:
        header = json.loads(body[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path}: unreadable header ({e})") from None
    if header.get("version") != MODEL_VERSION:
        raise ModelFileError(f"{path}: unsupported model version {header.get('version')}")
    params = np.frombuffer(body[12 + hlen :], dtype="<f8").astype(float)
    if params.size != header["payload_count"]:
        raise ModelFileError(f"{path}: parameter payload has the wrong length")
    widths = tuple(header["widths"])
    Ws, bs, pos = [], [], 0
    for a, b in zip(widths[:-1], widths[1:]):
        Ws.append(params[pos : pos + a * b].reshape(a, b).copy())
        pos += a * b
        bs.append(params[pos : pos + b].copy())
        pos += b
    norm = NormStats.from_dict(header["norm"]) if header["norm"] is not None else None
    mkind = AlgorithmKind.parse(header["kind"]) if header["kind"] else None
    model = MlpModel(widths, header["activation"], Ws, bs, kind=mkind, n_pid=header["n_pid"], norm=norm)
    if kind is not None and model.kind is not AlgorithmKind.parse(kind):
        raise ModelFileError(f"{path}: model was trained for {model.kind}, not {AlgorithmKind.parse(kind).value}")
    if accel_fingerprint is not None and (norm is None or norm.accel_fingerprint != accel_fingerprint):
        raise ModelFileError(f"{path}: model was trained for a different accelerator")
    return model
