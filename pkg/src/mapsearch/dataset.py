"""Training-set generation and the input/output normalization pipeline.

File format (text, one record per line after a ``#`` header block)::

    # mapsearch-dataset v1
    # kind=conv1d
    # accel=<fingerprint>
    # accel_json={...}
    # seed=0
    # range=W:8-64;R:2-8
    # columns=split,<mapping vector...>,<cost vector...>
    train,8.0,3.0,...,1234.5,...

The mapping vector starts with the problem dims, so every record carries its
own problem id.  Floats are written with ``repr`` and read back exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from math import exp, floor, log
from pathlib import Path

import numpy as np

from .accel import AcceleratorConfig
from .costmodel import CostVector, algorithmic_minimum, component_names, evaluate_ctx, make_ctx
from .mapspace import encode, sample_mappings
from .workload import DIMS, TENSOR_AXES, AlgorithmKind, Problem

DATASET_SCHEMA_VERSION = 1
NORM_EPS = 1e-8
DEFAULT_TEST_FRACTION = 0.1


class DatasetError(ValueError):
    pass


# ---- problem ranges -----------------------------------------------------------


@dataclass(frozen=True)
class ProblemRange:
    """Inclusive per-dim sampling interval, in dim order of the kind."""

    kind: AlgorithmKind
    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        kind = AlgorithmKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        b = tuple((int(lo), int(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", b)
        names = DIMS[kind]
        if len(b) != len(names):
            raise DatasetError(f"{kind.value} range needs {len(names)} intervals, got {len(b)}")
        for name, (lo, hi) in zip(names, b):
            if lo < 1 or hi < lo:
                raise DatasetError(f"empty or non-positive interval for {name}: [{lo}, {hi}]")
        v = dict(zip(names, b))
        if kind is not AlgorithmKind.MTTKRP:
            # every sampled R must fit every sampled W, so intervals stay independent
            if v["R"][1] > v["W"][0]:
                raise DatasetError("range allows R > W")
            if kind is AlgorithmKind.CONV_LAYER and v["S"][1] > v["H"][0]:
                raise DatasetError("range allows S > H")

    @classmethod
    def parse(cls, kind, text: str) -> "ProblemRange":
        """``"W:8-64;R:2-8"``; a single value ``"R:3"`` pins the dim."""
        kind = AlgorithmKind.parse(kind)
        got = {}
        for part in text.split(";"):
            if not part.strip():
                continue
            name, _, spec = part.partition(":")
            lo, _, hi = spec.partition("-")
            got[name.strip()] = (int(lo), int(hi or lo))
        names = DIMS[kind]
        if set(got) != set(names):
            raise DatasetError(f"range must name exactly the dims {names}, got {sorted(got)}")
        return cls(kind, tuple(got[n] for n in names))

    def __str__(self) -> str:
        return ";".join(f"{n}:{lo}-{hi}" for n, (lo, hi) in zip(DIMS[self.kind], self.bounds))

    def sample(self, rng: np.random.Generator) -> Problem:
        dims = []
        for lo, hi in self.bounds:
            if hi >= 8 * lo:
                # log-uniform over [lo, hi + 1), floored to an integer
                x = floor(exp(rng.uniform(log(lo), log(hi + 1))))
                dims.append(min(max(x, lo), hi))
            else:
                dims.append(int(rng.integers(lo, hi + 1)))
        return Problem(self.kind, tuple(dims))


DEFAULT_RANGES: dict[AlgorithmKind, ProblemRange] = {
    AlgorithmKind.CONV1D: ProblemRange(AlgorithmKind.CONV1D, ((8, 64), (2, 8))),
    AlgorithmKind.CONV_LAYER: ProblemRange(
        AlgorithmKind.CONV_LAYER, ((1, 8), (4, 16), (4, 16), (6, 16), (6, 16), (1, 3), (1, 3))
    ),
    AlgorithmKind.MTTKRP: ProblemRange(AlgorithmKind.MTTKRP, ((2, 16), (2, 16), (2, 16), (2, 16))),
}


# ---- datasets -----------------------------------------------------------------


@dataclass
class Dataset:
    kind: AlgorithmKind
    accel: AcceleratorConfig
    seed: int
    range_text: str
    X: np.ndarray  # (N, schema length) raw mapping vectors
    Y: np.ndarray  # (N, components) raw cost vectors
    is_test: np.ndarray  # (N,) bool

    @property
    def n_dims(self) -> int:
        return len(DIMS[self.kind])

    @property
    def pids(self) -> np.ndarray:
        return self.X[:, : self.n_dims].astype(np.int64)

    def __len__(self) -> int:
        return self.X.shape[0]

    def split(self, test: bool) -> tuple[np.ndarray, np.ndarray]:
        mask = self.is_test if test else ~self.is_test
        return self.X[mask], self.Y[mask]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.value.encode())
        h.update(self.accel.fingerprint().encode())
        for a in (self.X, self.Y, self.is_test):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def header_lines(self) -> list[str]:
        cols = ["split"] + [f"x{i}" for i in range(self.X.shape[1])] + list(component_names(self.kind))
        return [
            f"# mapsearch-dataset v{DATASET_SCHEMA_VERSION}",
            f"# kind={self.kind.value}",
            f"# accel={self.accel.fingerprint()}",
            "# accel_json=" + json.dumps(self.accel.to_dict(), sort_keys=True),
            f"# seed={self.seed}",
            f"# range={self.range_text}",
            "# columns=" + ",".join(cols),
        ]


def _record_line(is_test: bool, x: np.ndarray, y: np.ndarray) -> str:
    vals = [repr(float(v)) for v in x] + [repr(float(v)) for v in y]
    return ("test," if is_test else "train,") + ",".join(vals)


def generate(accel: AcceleratorConfig, kind, prange: ProblemRange | None, n: int, seed: int,
             test_fraction: float = DEFAULT_TEST_FRACTION) -> Dataset:
    """``n`` records of (problem, uniformly sampled valid mapping, cost).

    Record ``i`` draws from its own stream seeded by ``(seed, i)``, so any
    subset of records can be regenerated independently.
    """
    kind = AlgorithmKind.parse(kind)
    if n < 1:
        raise DatasetError("dataset size must be >= 1")
    if not 0.0 <= test_fraction < 1.0:
        raise DatasetError("test fraction must be in [0, 1)")
    prange = prange or DEFAULT_RANGES[kind]
    if prange.kind is not kind:
        raise DatasetError(f"range is for {prange.kind.value}, not {kind.value}")
    L = 8 * len(DIMS[kind]) + 2 * len(TENSOR_AXES[kind])
    X = np.empty((n, L))
    Y = np.empty((n, 3 * len(TENSOR_AXES[kind]) + 3))
    is_test = np.empty(n, dtype=bool)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        p = prange.sample(rng)
        ctx = make_ctx(p, accel)
        m = sample_mappings(ctx, rng, 1)[0]
        X[i] = encode(ctx, m)
        Y[i] = evaluate_ctx(ctx, m, check=False).as_vector()
        is_test[i] = rng.random() < test_fraction
    return Dataset(kind, accel, seed, str(prange), X, Y, is_test)


def write_dataset(path, ds: Dataset, append: bool = False) -> None:
    """Write ``ds``; with ``append`` the existing header must match and records are added."""
    path = Path(path)
    header = ds.header_lines()
    lines = [_record_line(t, x, y) for x, y, t in zip(ds.X, ds.Y, ds.is_test)]
    if append and path.exists():
        existing = _read_header(path)
        if existing[:5] != header[:5]:
            raise DatasetError(f"{path}: header does not match the records being appended")
        with path.open("a") as f:
            f.write("\n".join(lines) + "\n")
        return
    path.write_text("\n".join(header + lines) + "\n")


def _read_header(path: Path) -> list[str]:
    out = []
    with path.open() as f:
        for line in f:
            if not line.startswith("#"):
                break
            out.append(line.rstrip("\n"))
    return out


def read_dataset(path) -> Dataset:
    path = Path(path)
    text = path.read_text().splitlines()
    meta = {}
    body = []
    for line in text:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line.strip():
            body.append(line)
    if not text or not text[0].startswith("# mapsearch-dataset v"):
        raise DatasetError(f"{path}: not a dataset file")
    version = int(text[0].rsplit("v", 1)[1])
    if version != DATASET_SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    try:
        kind = AlgorithmKind.parse(meta["kind"])
        accel = AcceleratorConfig.from_dict(json.loads(meta["accel_json"]))
        seed = int(meta["seed"])
    except KeyError as e:
        raise DatasetError(f"{path}: header lacks {e}") from None
    if accel.fingerprint() != meta.get("accel"):
        raise DatasetError(f"{path}: accelerator fingerprint does not match its description")
    L = 8 * len(DIMS[kind]) + 2 * len(TENSOR_AXES[kind])
    C = 3 * len(TENSOR_AXES[kind]) + 3
    if not body:
        raise DatasetError(f"{path}: no records")
    X = np.empty((len(body), L))
    Y = np.empty((len(body), C))
    is_test = np.empty(len(body), dtype=bool)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != 1 + L + C or parts[0] not in ("train", "test"):
            raise DatasetError(f"{path}: malformed record {i}")
        is_test[i] = parts[0] == "test"
        vals = np.array([float(v) for v in parts[1:]])
        X[i], Y[i] = vals[:L], vals[L:]
    return Dataset(kind, accel, seed, meta.get("range", ""), X, Y, is_test)


# ---- normalization ------------------------------------------------------------


_BOUND_CACHE: dict = {}


def bound_divisors(kind, accel: AcceleratorConfig, pids) -> np.ndarray:
    """Per-record divisor for each cost component: energies by the bound's total
    energy, cycles by the bound's cycles, utilization by 1."""
    kind = AlgorithmKind.parse(kind)
    pids = np.atleast_2d(np.asarray(pids, dtype=np.int64))
    T = len(TENSOR_AXES[kind])
    out = np.ones((pids.shape[0], 3 * T + 3))
    fp = accel.fingerprint()
    for i, pid in enumerate(pids):
        key = (kind, fp, tuple(int(v) for v in pid))
        b = _BOUND_CACHE.get(key)
        if b is None:
            lb = algorithmic_minimum(accel, Problem(kind, key[2]))
            b = _BOUND_CACHE[key] = (lb.energy_total, float(lb.cycles))
        out[i, : 3 * T + 1] = b[0]
        out[i, 3 * T + 1] = b[1]
    return out


@dataclass
class NormStats:
    kind: AlgorithmKind
    accel_fingerprint: str
    dataset_fingerprint: str
    n_pid: int
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    accel: AcceleratorConfig = field(repr=False, default=None)

    def norm_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def denorm_x(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.x_std + self.x_mean

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "accel_fingerprint": self.accel_fingerprint,
            "accel": self.accel.to_dict(),
            "dataset_fingerprint": self.dataset_fingerprint,
            "n_pid": self.n_pid,
            "x_mean": [float(v) for v in self.x_mean],
            "x_std": [float(v) for v in self.x_std],
            "y_mean": [float(v) for v in self.y_mean],
            "y_std": [float(v) for v in self.y_std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        accel = AcceleratorConfig.from_dict(d["accel"])
        if accel.fingerprint() != d["accel_fingerprint"]:
            raise DatasetError("normalization stats: accelerator fingerprint mismatch")
        return cls(
            kind=AlgorithmKind.parse(d["kind"]),
            accel_fingerprint=d["accel_fingerprint"],
            dataset_fingerprint=d["dataset_fingerprint"],
            n_pid=int(d["n_pid"]),
            x_mean=np.array(d["x_mean"], dtype=float),
            x_std=np.array(d["x_std"], dtype=float),
            y_mean=np.array(d["y_mean"], dtype=float),
            y_std=np.array(d["y_std"], dtype=float),
            accel=accel,
        )


def fit_norm(ds: Dataset) -> NormStats:
    """Statistics from the training split only."""
    Xtr, Ytr = ds.split(test=False)
    if Xtr.shape[0] == 0:
        raise DatasetError("training split is empty")
    Ys = Ytr / bound_divisors(ds.kind, ds.accel, Xtr[:, : ds.n_dims])
    return NormStats(
        kind=ds.kind,
        accel_fingerprint=ds.accel.fingerprint(),
        dataset_fingerprint=ds.fingerprint(),
        n_pid=ds.n_dims,
        x_mean=Xtr.mean(axis=0),
        x_std=np.maximum(Xtr.std(axis=0), NORM_EPS),
        y_mean=Ys.mean(axis=0),
        y_std=np.maximum(Ys.std(axis=0), NORM_EPS),
        accel=ds.accel,
    )


def _check_width(stats: NormStats, X, Y=None) -> None:
    if np.shape(X)[-1] != stats.x_mean.size:
        raise DatasetError(f"input width {np.shape(X)[-1]} != {stats.x_mean.size}")
    if Y is not None and np.shape(Y)[-1] != stats.y_mean.size:
        raise DatasetError(f"output width {np.shape(Y)[-1]} != {stats.y_mean.size}")


def apply_norm(stats: NormStats, X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Normalize raw records (rows of ``X``/``Y``); the p_id is read from ``X``."""
    _check_width(stats, X, Y)
    X = np.asarray(X, dtype=float)
    div = bound_divisors(stats.kind, stats.accel, np.atleast_2d(X)[:, : stats.n_pid])
    Yn = (np.atleast_2d(np.asarray(Y, dtype=float)) / div - stats.y_mean) / stats.y_std
    return stats.norm_x(X), Yn.reshape(np.shape(Y))


def apply_norm_dataset(stats: NormStats, ds: Dataset, test: bool) -> tuple[np.ndarray, np.ndarray]:
    """Normalize one split of the dataset the stats were fitted on."""
    if ds.fingerprint() != stats.dataset_fingerprint:
        raise DatasetError("normalization stats were fitted on a different dataset")
    return apply_norm(stats, *ds.split(test))


def invert_norm_array(stats: NormStats, Yn, pids) -> np.ndarray:
    _check_width(stats, np.zeros(stats.x_mean.size), Yn)
    Yn = np.atleast_2d(np.asarray(Yn, dtype=float))
    div = bound_divisors(stats.kind, stats.accel, pids)
    return (Yn * stats.y_std + stats.y_mean) * div


def invert_norm(stats: NormStats, yn, pid):
    """Raw cost vector for one normalized prediction."""
    T = len(TENSOR_AXES[stats.kind])
    raw = invert_norm_array(stats, yn, [pid])[0]
    return CostVector.from_vector(raw, T, stats.accel.clock_hz)
