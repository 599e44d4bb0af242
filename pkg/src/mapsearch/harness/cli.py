"""``mapsearch`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from .. import __version__
from ..costmodel import algorithmic_minimum, make_ctx
from ..dataset import (
    DatasetError,
    apply_norm_dataset,
    fit_norm,
    generate,
    read_dataset,
    write_dataset,
)
from ..mapspace import read_mappings
from ..search import TrueObjective, write_traces
from ..surrogate import ModelFileError, init_model, load, save, train
from . import runner
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _ensure_out(cfg: ExperimentConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")


def _load_model(cfg: ExperimentConfig, path: str | None):
    p = Path(path) if path else cfg.model_path
    if not p.exists():
        raise FileNotFoundError(f"model file {p} not found; run 'mapsearch train' first")
    return load(p, kind=cfg.kind, accel_fingerprint=cfg.accel.fingerprint())


# ---- subcommands ----------------------------------------------------------------------


def cmd_gen_dataset(cfg: ExperimentConfig, args) -> None:
    out = Path(args.out) if args.out else cfg.dataset_path
    ds = generate(cfg.accel, cfg.kind, cfg.dataset_range, cfg.dataset_size, cfg.seed, cfg.test_fraction)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds)
    print(f"wrote {out}: {len(ds)} records ({int(ds.is_test.sum())} held out)")


def cmd_train(cfg: ExperimentConfig, args) -> None:
    ds_path = Path(args.dataset) if args.dataset else cfg.dataset_path
    if not ds_path.exists():
        raise FileNotFoundError(f"dataset {ds_path} not found; run 'mapsearch gen-dataset' first")
    ds = read_dataset(ds_path)
    if ds.kind is not cfg.kind or ds.accel.fingerprint() != cfg.accel.fingerprint():
        raise DatasetError(f"{ds_path} was generated for another kind or accelerator")
    stats = fit_norm(ds)
    Xtr, Ytr = apply_norm_dataset(stats, ds, test=False)
    Xte, Yte = apply_norm_dataset(stats, ds, test=True)
    widths = (Xtr.shape[1], *cfg.hidden, Ytr.shape[1])
    model = init_model(widths, cfg.activation, cfg.seed, kind=cfg.kind, n_pid=ds.n_dims)
    model.norm = stats
    model, curve = train(model, Xtr, Ytr, cfg.train, Xte, Yte)
    out = Path(args.out) if args.out else cfg.model_path
    out.parent.mkdir(parents=True, exist_ok=True)
    save(model, out)
    print(f"wrote {out}")

    rho = runner.heldout_spearman(model, ds)
    buf = io.StringIO()
    for h in runner.header_lines(cfg, dataset=ds.fingerprint(), heldout_spearman_edp=repr(rho)):
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr", "train_loss", "test_loss"])
    for e in curve:
        w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), "" if e.test_loss is None else repr(e.test_loss)])
    _write(out.with_name(out.name + ".loss.csv"), buf.getvalue())
    if rho is not None:
        print(f"held-out Spearman rho (predicted vs true EDP): {rho:.4f}")


def cmd_search(cfg: ExperimentConfig, args) -> None:
    if args.method not in cfg.methods:
        raise ConfigError(f"method {args.method!r} is not enabled in the config ({cfg.methods})")
    model = _load_model(cfg, args.model) if args.method == "mm" else None
    out = _ensure_out(cfg)
    for pi in _problem_indices(cfg, args.problem):
        name, problem = cfg.problems[pi]
        traces = runner.run_many(cfg, args.method, pi, model)
        path = out / f"trace_{_slug(name)}_{args.method}.csv"
        mp = write_traces(path, traces, make_ctx(problem, cfg.accel),
                          runner.header_lines(cfg, problem=name, method=args.method))
        print(f"wrote {path} and {mp}")


def cmd_compare(cfg: ExperimentConfig, args) -> None:
    model = _load_model(cfg, args.model) if "mm" in cfg.methods else None
    out = _ensure_out(cfg)
    results, divisors, objectives = {}, {}, {}
    for pi, (name, problem) in enumerate(cfg.problems):
        ctx = make_ctx(problem, cfg.accel)
        divisors[name] = runner.lower_bound_edp(cfg, problem)
        objectives[name] = TrueObjective(ctx)
        for method in cfg.methods:
            traces = runner.run_many(cfg, method, pi, model)
            results[(name, method)] = traces
            write_traces(out / f"trace_{_slug(name)}_{method}.csv", traces, ctx,
                         runner.header_lines(cfg, problem=name, method=method))
    report = runner.aggregate(results, divisors, objectives)
    hdr = runner.header_lines(cfg)
    _write(out / "report.csv", report.to_csv(hdr))
    _write(out / "ratios.csv", report.ratios_csv(hdr))
    summary = report.summary()
    _write(out / "summary.txt", summary + "\n")
    print(summary)


def cmd_surface(cfg: ExperimentConfig, args) -> None:
    x, y = args.x or cfg.surface_x, args.y or cfg.surface_y
    if not x or not y:
        raise ConfigError("surface needs two dims (surface.x / surface.y or --x / --y)")
    pi = _problem_indices(cfg, args.problem)[0]
    name, problem = cfg.problems[pi]
    buf = io.StringIO()
    for h in runner.header_lines(cfg, problem=name, x=x, y=y, surface_seed=cfg.surface_seed):
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "edp", "valid"])
    n = valid = 0
    for tx, ty, edp in runner.surface(cfg, problem, x, y, cfg.surface_seed):
        w.writerow([tx, ty, "" if edp is None else repr(edp), int(edp is not None)])
        n += 1
        valid += edp is not None
    _write(_ensure_out(cfg) / f"surface_{_slug(name)}_{x}_{y}.csv", buf.getvalue())
    print(f"{n} grid points, {valid} valid")


def cmd_lower_bound(cfg: ExperimentConfig, args) -> None:
    print("problem,energy_total_pj,cycles,delay_s,edp_pj_s")
    for pi in _problem_indices(cfg, args.problem):
        name, problem = cfg.problems[pi]
        lb = algorithmic_minimum(cfg.accel, problem)
        print(f"{name},{lb.energy_total!r},{lb.cycles},{lb.delay!r},{lb.edp!r}")


def cmd_evaluate_trace(cfg: ExperimentConfig, args) -> None:
    """Hidden helper: re-evaluate a trace's companion mappings file."""
    pi = _problem_indices(cfg, args.problem)[0]
    ctx = make_ctx(cfg.problems[pi][1], cfg.accel)
    obj = TrueObjective(ctx)
    for i, m in enumerate(read_mappings(args.mappings, ctx)):
        print(f"{i},{obj(m)!r}")


def _problem_indices(cfg: ExperimentConfig, which: str | None) -> list[int]:
    if which is None:
        return list(range(len(cfg.problems)))
    names = [n for n, _ in cfg.problems]
    if which in names:
        return [names.index(which)]
    try:
        i = int(which)
    except ValueError:
        raise ConfigError(f"unknown problem {which!r}; config has {names}") from None
    if not 0 <= i < len(names):
        raise ConfigError(f"problem index {i} out of range")
    return [i]


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mapsearch", description="Accelerator mapping search with a learned cost surrogate.")
    ap.add_argument("--version", action="version", version=f"mapsearch {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", "-c", required=True, help="experiment config file")
        p.set_defaults(fn=fn)
        return p

    p = add("gen-dataset", cmd_gen_dataset, "sample (problem, mapping, cost) training records")
    p.add_argument("--out", help="dataset path (default: dataset.path)")
    p = add("train", cmd_train, "train the surrogate; writes the model and a loss-curve CSV")
    p.add_argument("--dataset")
    p.add_argument("--out", help="model path (default: model.path)")
    p = add("search", cmd_search, "run one method for every configured run")
    p.add_argument("--method", required=True)
    p.add_argument("--problem", help="problem name or index (default: all)")
    p.add_argument("--model")
    p = add("compare", cmd_compare, "run every method and write the comparison report")
    p.add_argument("--model")
    p = add("surface", cmd_surface, "sweep EDP over the L2 tiles of two dims")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--problem")
    p = add("lower-bound", cmd_lower_bound, "print the algorithmic minimum per problem")
    p.add_argument("--problem")
    p = add("evaluate-trace", cmd_evaluate_trace, argparse.SUPPRESS)
    p.add_argument("--mappings", required=True)
    p.add_argument("--problem")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        args.fn(cfg, args)
    except ConfigError as e:
        print(f"mapsearch: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError, KeyError, ModelFileError, DatasetError) as e:
        print(f"mapsearch: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
