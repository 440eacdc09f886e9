"""Command-line front end.

Subcommands: ``synth``, ``select``, ``huq``, ``toy``, ``bench``.  Options
may come from a JSON config file (``--config``) using the same names as the
long flags; explicit flags win, and unknown config keys are rejected.

stdout carries exactly one final JSON status line; all diagnostics go to
stderr.  Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 constraint violation (e.g. a budget larger than the sequence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import DEFAULT_SIZES, run_scaling_benchmark
from .core import DEFAULT_WEIGHTS, RatioWeights
from .errors import ConstraintError, DataError, FormatError
from .io import (
    SyntheticSpec,
    TraceWriter,
    generate_synthetic,
    read_embeddings,
    read_prob_csv,
    uncertainty_report,
    write_embeddings,
    write_labels_sidecar,
    write_selection,
)
from .selection import SelectionParams, select_subset
from .uncertainty import (
    boundary_concentration,
    hybrid_score,
    make_grid,
    make_two_blob_dataset,
    misdiagnosis_recall,
    toy_train,
    uncertainty_components,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CONSTRAINT = 4


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """A command name plus its fully merged option values."""

    command: str
    options: dict


# ---------------------------------------------------------------------------
# Option plumbing


def _cast_int(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(v)


def _cast_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _cast_str(v):
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _cast_bool(v):
    if not isinstance(v, bool):
        raise ConfigError(f"expected a boolean, got {v!r}")
    return v


def _cast_floats_list(v):
    if isinstance(v, str):
        v = v.split(",")
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"expected a comma-separated list of numbers, got {v!r}")
    try:
        return tuple(float(t) for t in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad number list {v!r}") from exc


def _cast_ints_list(v):
    floats = _cast_floats_list(v)
    if any(f != int(f) for f in floats):
        raise ConfigError(f"expected integers, got {v!r}")
    return tuple(int(f) for f in floats)


def _cast_paths(v):
    if isinstance(v, str):
        return [v]
    if isinstance(v, (list, tuple)) and v and all(isinstance(t, str) for t in v):
        return list(v)
    raise ConfigError(f"expected a path or list of paths, got {v!r}")


# name -> (caster, default, required); ``None`` default means optional-empty.
_OPTIONS: dict[str, dict] = {
    "synth": {
        "mode": (_cast_str, None, True),
        "n": (_cast_int, None, True),
        "d": (_cast_int, None, True),
        "count": (_cast_int, 8, False),
        "sigma": (_cast_float, 0.1, False),
        "seed": (_cast_int, 0, False),
        "out": (_cast_str, None, True),
    },
    "select": {
        "input": (_cast_paths, None, True),
        "m": (_cast_int, None, True),
        "weights": (_cast_floats_list, tuple(DEFAULT_WEIGHTS), False),
        "k": (_cast_int, 10, False),
        "alpha": (_cast_float, 0.5, False),
        "beta": (_cast_float, 0.9, False),
        "lam": (_cast_float, 0.5, False),
        "iters": (_cast_int, 10, False),
        "h": (_cast_int, 64, False),
        "seed": (_cast_int, 0, False),
        "out": (_cast_str, None, True),
        "trace": (_cast_str, None, False),
        "format": (_cast_str, "auto", False),
        "backend": (_cast_str, "hnsw", False),
        "threads": (_cast_int, None, False),
    },
    "huq": {
        "probs": (_cast_str, None, True),
        "q": (_cast_int, 15, False),
        "out": (_cast_str, None, True),
        "plot": (_cast_str, None, False),
    },
    "toy": {
        "epochs": (_cast_int, 500, False),
        "lr": (_cast_float, 0.1, False),
        "seed": (_cast_int, 0, False),
        "out_dir": (_cast_str, None, True),
    },
    "bench": {
        "sizes": (_cast_ints_list, tuple(DEFAULT_SIZES), False),
        "reps": (_cast_int, 3, False),
        "d": (_cast_int, 64, False),
        "m": (_cast_int, 32, False),
        "seed": (_cast_int, 0, False),
        "brute_force": (_cast_bool, False, False),
        "out": (_cast_str, None, True),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coresel")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding file")
    p.add_argument("--mode", choices=["blobs", "prototypes", "uniform-sphere"])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")

    p = sub.add_parser("select", help="run the subset-selection pipeline")
    p.add_argument("--input", nargs="+")
    p.add_argument("--m", type=int)
    p.add_argument("--weights")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--trace")
    p.add_argument("--format", choices=["auto", "binary", "csv"])
    p.add_argument("--backend", choices=["hnsw", "exact"])
    p.add_argument("--threads", type=int)
    p.add_argument("--config")

    p = sub.add_parser("huq", help="hybrid uncertainty scores from a probability table")
    p.add_argument("--probs")
    p.add_argument("--q", type=int)
    p.add_argument("--out")
    p.add_argument("--plot")
    p.add_argument("--config")

    p = sub.add_parser("toy", help="train the 2-D demonstration model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")

    p = sub.add_parser("bench", help="scaling benchmark over sequence length")
    p.add_argument("--sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--brute-force", dest="brute_force", action="store_const", const=True)
    p.add_argument("--out")
    p.add_argument("--config")
    return parser


def merge_options(args: argparse.Namespace) -> RunConfig:
    """Overlay defaults, config-file values, and explicit flags (flags win)."""
    spec = _OPTIONS[args.command]
    config: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(config) - set(spec)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged: dict = {}
    for name, (caster, default, required) in spec.items():
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            merged[name] = caster(flag_value)
        elif name in config:
            merged[name] = caster(config[name])
        elif required:
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")
        else:
            merged[name] = default
    return RunConfig(args.command, merged)


def _status(command: str, **fields) -> dict:
    return {"command": command, "status": "ok", **fields}


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: RunConfig) -> dict:
    o = cfg.options
    try:
        spec = SyntheticSpec(
            mode=o["mode"], n=o["n"], d=o["d"], count=o["count"],
            sigma=o["sigma"], seed=o["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    emb, labels = generate_synthetic(spec)
    out = Path(o["out"])
    write_embeddings(out, emb)
    sidecar = Path(str(out) + ".labels.json")
    write_labels_sidecar(sidecar, spec, labels)
    return _status("synth", outputs=[str(out), str(sidecar)], n=spec.n, d=spec.d)


def cmd_select(cfg: RunConfig) -> dict:
    o = cfg.options
    try:
        weights = RatioWeights(o["weights"])
        params = SelectionParams(
            k=o["k"], alpha=o["alpha"], beta=o["beta"], lam=o["lam"],
            iterations=o["iters"], h=o["h"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if o["backend"] not in ("hnsw", "exact"):
        raise ConfigError(f"unknown backend {o['backend']!r}")
    inputs = [Path(p) for p in o["input"]]
    out = Path(o["out"])
    multi = len(inputs) > 1
    out_is_dir = multi or out.is_dir()
    if out_is_dir:
        out.mkdir(parents=True, exist_ok=True)
    trace_opt = o["trace"]
    trace_dir: Path | None = None
    if trace_opt is not None and multi:
        trace_dir = Path(trace_opt)
        trace_dir.mkdir(parents=True, exist_ok=True)

    def run_one(path: Path) -> str:
        try:
            emb = read_embeddings(path, o["format"])
            if trace_opt is None:
                sink = None
            else:
                trace_path = (
                    trace_dir / f"{path.stem}.trace.jsonl" if trace_dir else Path(trace_opt)
                )
                sink = TraceWriter(trace_path)
            try:
                result = select_subset(
                    emb, o["m"], weights, params, o["seed"],
                    backend=o["backend"], trace_sink=sink,
                )
            finally:
                if sink is not None:
                    sink.close()
        except ConstraintError as exc:
            raise ConstraintError(f"{path}: {exc}") from exc
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc
        target = out / f"{path.stem}.selection.json" if out_is_dir else out
        write_selection(result, target)
        return str(target)

    threads = o["threads"] or os.cpu_count() or 1
    if multi and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run_one, inputs))
    else:
        outputs = [run_one(p) for p in inputs]
    return _status("select", outputs=outputs, m=o["m"], backend=o["backend"])


def cmd_huq(cfg: RunConfig) -> dict:
    o = cfg.options
    if o["q"] < 1:
        raise ConfigError("q must be >= 1")
    triples = read_prob_csv(o["probs"])
    records = [hybrid_score(t) for t in triples]
    labeled = all(t.label is not None for t in triples)
    summary = misdiagnosis_recall(records, o["q"]) if labeled else None
    doc = uncertainty_report(records, summary)
    out = Path(o["out"])
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    outputs = [str(out)]
    if o["plot"]:
        from .plots import save_uncertainty_figure

        save_uncertainty_figure(records, o["plot"])
        outputs.append(o["plot"])
    fields = {"outputs": outputs, "count": len(records)}
    if summary is not None:
        fields["recall_mis"] = summary.recall_mis
    return _status("huq", **fields)


def cmd_toy(cfg: RunConfig) -> dict:
    o = cfg.options
    if o["epochs"] < 0:
        raise ConfigError("epochs must be >= 0")
    out_dir = Path(o["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    x, y = make_two_blob_dataset(o["seed"])
    trained = toy_train(x, y, epochs=o["epochs"], lr=o["lr"], seed=o["seed"])
    model = trained.model
    accuracy = float(np.mean(model.predict(x) == y))

    loss_path = out_dir / "loss_history.csv"
    with open(loss_path, "w") as fh:
        fh.write("epoch,total,ce_main,ce_aux1,ce_aux2,d_dis\n")
        for row in trained.history:
            fh.write(
                f"{row['epoch']},{row['total']:.12g},{row['ce_main']:.12g},"
                f"{row['ce_aux1']:.12g},{row['ce_aux2']:.12g},{row['d_dis']:.12g}\n"
            )

    grid = make_grid(4.0, 81)
    d_dis, ent, u, p = uncertainty_components(model, grid)
    grid_path = out_dir / "grid_scores.csv"
    with open(grid_path, "w") as fh:
        fh.write("x,y,p1,d_dis,entropy,u\n")
        for i in range(grid.shape[0]):
            fh.write(
                f"{grid[i, 0]:.12g},{grid[i, 1]:.12g},{p[i, 1]:.12g},"
                f"{d_dis[i]:.12g},{ent[i]:.12g},{u[i]:.12g}\n"
            )

    stats = boundary_concentration(model, grid)
    stats_path = out_dir / "boundary_stats.json"
    with open(stats_path, "w") as fh:
        json.dump(
            {
                "near_mean": stats.near_mean,
                "far_mean": stats.far_mean,
                "ratio": stats.ratio,
                "near_count": stats.near_count,
                "far_count": stats.far_count,
                "defined": stats.defined,
                "degenerate_boundary": stats.degenerate_boundary,
                "accuracy": accuracy,
                "epochs": o["epochs"],
                "lr": o["lr"],
                "seed": o["seed"],
            },
            fh,
            indent=2,
        )
        fh.write("\n")

    from .plots import save_toy_figure

    fig_path = out_dir / "uncertainty_map.png"
    save_toy_figure(model, x, y, fig_path)
    return _status(
        "toy",
        outputs=[str(loss_path), str(grid_path), str(stats_path), str(fig_path)],
        accuracy=accuracy,
        ratio=stats.ratio,
    )


def cmd_bench(cfg: RunConfig) -> dict:
    o = cfg.options
    try:
        report = run_scaling_benchmark(
            sizes=o["sizes"], reps=o["reps"], d=o["d"], m=o["m"], seed=o["seed"],
            naive=o["brute_force"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(o["out"])
    with open(out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write("size,rep,seconds\n")
        for size in report.sizes:
            for rep, t in enumerate(report.times[size]):
                fh.write(f"{size},{rep},{t:.9g}\n")
    from .plots import save_scaling_figure

    fig_path = out.with_suffix(".png")
    save_scaling_figure(report, fig_path)
    if report.timer_warning:
        print("warning: timer resolution is coarse relative to measured times", file=sys.stderr)
    return _status(
        "bench",
        outputs=[str(out), str(csv_path), str(fig_path)],
        slope=report.slope,
        backend=report.backend,
    )


_HANDLERS = {
    "synth": cmd_synth,
    "select": cmd_select,
    "huq": cmd_huq,
    "toy": cmd_toy,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_options(args)
        status = _HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, ConstraintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    print(json.dumps(status))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
