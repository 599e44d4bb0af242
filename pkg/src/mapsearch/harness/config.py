"""Strict flat ``key = value`` experiment configuration.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored; keys are lowercase dotted identifiers; a key may appear once.
Unknown keys are rejected.  See ``configs/`` for examples and
:data:`KEYS` for every key with its default.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from ..accel import AcceleratorConfig, preset
from ..dataset import DEFAULT_RANGES, ProblemRange
from ..search import METHODS, GaConfig, GradSearchConfig, SaConfig, SearchBudget
from ..surrogate import DESK_HIDDEN, FULL_HIDDEN, TrainConfig
from ..workload import DIMS, TARGET_PROBLEMS, AlgorithmKind, Problem


class ConfigError(ValueError):
    pass


_ACCEL_FIELDS = tuple(AcceleratorConfig.__dataclass_fields__)

KEYS: dict[str, str | None] = {
    "kind": "conv1d",
    "accel": "desk",
    **{f"accel.{f}": None for f in _ACCEL_FIELDS},
    "problems": None,
    "methods": "mm,sa,ga,random",
    "runs": "20",
    "iterations": "500",
    "wall_seconds": None,
    "record_time": "false",
    "seed": "0",
    "out_dir": "out",
    "workers": "1",
    "dataset.path": None,
    "dataset.size": "50000",
    "dataset.range": None,
    "dataset.test_fraction": "0.1",
    "model.path": None,
    "model.topology": "desk",
    "model.hidden": None,
    "model.activation": "relu",
    "train.epochs": "30",
    "train.batch_size": "128",
    "train.lr": "0.01",
    "train.lr_decay": "0.1",
    "train.lr_decay_every": "25",
    "train.momentum": "0.9",
    "train.loss": "huber",
    "train.delta": "1.0",
    "mm.alpha": "1.0",
    "mm.inject_every": "10",
    "mm.t0": "50",
    "mm.anneal_factor": "0.75",
    "mm.anneal_every": "50",
    "sa.t0": None,
    "sa.cooling": None,
    "sa.final_ratio": "0.001",
    "sa.tune_moves": "50",
    "sa.tune_acceptance": "0.8",
    "ga.population": "100",
    "ga.crossover": "0.75",
    "ga.mutation": "0.05",
    "ga.tournament": "3",
    "ga.elitism": "1",
    "surface.x": None,
    "surface.y": None,
    "surface.seed": "0",
}

_LINE = re.compile(r"^([a-z][a-z0-9_]*(?:\.[a-z][a-z0-9_]*)*)\s*=\s*(.*?)\s*$")


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{origin}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, val = m.groups()
        if key not in KEYS:
            raise ConfigError(f"{origin}:{no}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{origin}:{no}: duplicate key {key!r}")
        if val == "":
            raise ConfigError(f"{origin}:{no}: empty value for {key!r}")
        out[key] = val
    return out


def _bool(key: str, s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {s!r}")


def _num(key: str, s: str | None, typ):
    if s is None:
        return None
    try:
        return typ(s)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {s!r}") from None


def _csv(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def parse_problem(kind: AlgorithmKind, s: str) -> tuple[str, Problem]:
    """A built-in target name or dims joined by ``x`` (``8x3``)."""
    s = s.strip()
    if s in TARGET_PROBLEMS:
        p = TARGET_PROBLEMS[s]
        if p.kind is not kind:
            raise ConfigError(f"problem {s} is a {p.kind.value} problem, config kind is {kind.value}")
        return s, p
    try:
        dims = tuple(int(x) for x in s.split("x"))
        return s, Problem(kind, dims)
    except ValueError as e:
        raise ConfigError(f"bad problem {s!r}: {e}") from None


@dataclass
class ExperimentConfig:
    raw: dict[str, str]
    kind: AlgorithmKind
    accel: AcceleratorConfig
    problems: list[tuple[str, Problem]]
    methods: list[str]
    runs: int
    budget: SearchBudget
    seed: int
    out_dir: Path
    workers: int
    dataset_path: Path
    dataset_size: int
    dataset_range: ProblemRange
    test_fraction: float
    model_path: Path
    hidden: tuple[int, ...]
    activation: str
    train: TrainConfig
    mm: GradSearchConfig
    sa: SaConfig
    ga: GaConfig
    surface_x: str | None
    surface_y: str | None
    surface_seed: int

    def hash(self) -> str:
        canon = "\n".join(f"{k}={v}" for k, v in sorted(self.raw.items()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def value(self, key: str) -> str | None:
        return self.raw.get(key, KEYS[key])


def build(raw: dict[str, str]) -> ExperimentConfig:
    get = lambda k: raw.get(k, KEYS[k])  # noqa: E731
    try:
        kind = AlgorithmKind.parse(get("kind"))
        accel = preset(get("accel"))
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e)) from None
    over = {f: raw[f"accel.{f}"] for f in _ACCEL_FIELDS if f"accel.{f}" in raw}
    if over:
        try:
            accel = AcceleratorConfig.from_dict({**accel.to_dict(), **over})
        except ValueError as e:
            raise ConfigError(f"accelerator override: {e}") from None

    if get("problems") is None:
        raise ConfigError("problems: at least one problem is required")
    problems = [parse_problem(kind, s) for s in get("problems").split(";") if s.strip()]
    if not problems:
        raise ConfigError("problems: at least one problem is required")

    methods = _csv(get("methods"))
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        raise ConfigError(f"methods: choose from {METHODS}, got {get('methods')!r}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods: duplicates")

    runs = _num("runs", get("runs"), int)
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    record_time = _bool("record_time", get("record_time"))
    try:
        if "wall_seconds" in raw:
            if "iterations" in raw:
                raise ConfigError("set either iterations or wall_seconds, not both")
            budget = SearchBudget(max_wall_seconds=_num("wall_seconds", raw["wall_seconds"], float))
        else:
            budget = SearchBudget(max_iterations=_num("iterations", get("iterations"), int), record_time=record_time)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    seed = _num("seed", get("seed"), int)
    out_dir = Path(get("out_dir"))
    workers = _num("workers", get("workers"), int)
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    try:
        prange = ProblemRange.parse(kind, get("dataset.range")) if get("dataset.range") else DEFAULT_RANGES[kind]
    except ValueError as e:
        raise ConfigError(f"dataset.range: {e}") from None
    size = _num("dataset.size", get("dataset.size"), int)
    if size < 1:
        raise ConfigError("dataset.size must be >= 1")

    topo = get("model.topology")
    if get("model.hidden"):
        try:
            hidden = tuple(int(x) for x in _csv(get("model.hidden")))
        except ValueError:
            raise ConfigError("model.hidden: expected comma-separated widths") from None
    elif topo in ("desk", "full"):
        hidden = DESK_HIDDEN if topo == "desk" else FULL_HIDDEN
    else:
        raise ConfigError("model.topology must be desk or full")
    if get("model.activation") not in ("relu", "softplus"):
        raise ConfigError("model.activation must be relu or softplus")

    try:
        train = TrainConfig(
            epochs=_num("train.epochs", get("train.epochs"), int),
            batch_size=_num("train.batch_size", get("train.batch_size"), int),
            lr=_num("train.lr", get("train.lr"), float),
            lr_decay=_num("train.lr_decay", get("train.lr_decay"), float),
            lr_decay_every=_num("train.lr_decay_every", get("train.lr_decay_every"), int),
            momentum=_num("train.momentum", get("train.momentum"), float),
            loss=get("train.loss"),
            delta=_num("train.delta", get("train.delta"), float),
            seed=seed,
        )
        mm = GradSearchConfig(
            alpha=_num("mm.alpha", get("mm.alpha"), float),
            inject_every=_num("mm.inject_every", get("mm.inject_every"), int),
            T0=_num("mm.t0", get("mm.t0"), float),
            anneal_factor=_num("mm.anneal_factor", get("mm.anneal_factor"), float),
            anneal_every_injections=_num("mm.anneal_every", get("mm.anneal_every"), int),
        )
        sa = SaConfig(
            T0=_num("sa.t0", get("sa.t0"), float),
            cooling=_num("sa.cooling", get("sa.cooling"), float),
            final_ratio=_num("sa.final_ratio", get("sa.final_ratio"), float),
            tune_moves=_num("sa.tune_moves", get("sa.tune_moves"), int),
            tune_acceptance=_num("sa.tune_acceptance", get("sa.tune_acceptance"), float),
        )
        ga = GaConfig(
            population=_num("ga.population", get("ga.population"), int),
            crossover=_num("ga.crossover", get("ga.crossover"), float),
            mutation=_num("ga.mutation", get("ga.mutation"), float),
            tournament=_num("ga.tournament", get("ga.tournament"), int),
            elitism=_num("ga.elitism", get("ga.elitism"), int),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None

    names = DIMS[kind]
    for key in ("surface.x", "surface.y"):
        if get(key) is not None and get(key) not in names:
            raise ConfigError(f"{key}: {get(key)!r} is not a dim of {kind.value} {names}")

    return ExperimentConfig(
        raw=dict(raw),
        kind=kind,
        accel=accel,
        problems=problems,
        methods=methods,
        runs=runs,
        budget=budget,
        seed=seed,
        out_dir=out_dir,
        workers=workers,
        dataset_path=Path(get("dataset.path") or out_dir / "dataset.csv"),
        dataset_size=size,
        dataset_range=prange,
        test_fraction=_num("dataset.test_fraction", get("dataset.test_fraction"), float),
        model_path=Path(get("model.path") or out_dir / "model.bin"),
        hidden=hidden,
        activation=get("model.activation"),
        train=train,
        mm=mm,
        sa=sa,
        ga=ga,
        surface_x=get("surface.x"),
        surface_y=get("surface.y"),
        surface_seed=_num("surface.seed", get("surface.seed"), int),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return build(parse_text(text, str(path)))
