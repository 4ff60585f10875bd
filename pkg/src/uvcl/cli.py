"""Command-line entry point: ``uvcl {synth,run,ablate,export-buffers}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error. Failures print one JSON object to stdout; logs go to stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ABLATION_AXES, RunConfigFile, load_run_config, load_synthetic_spec
from .engine import RunReport, resolve_stream, run_stream
from .errors import ConfigError, DataError, NumericalError
from .ingest import (
    StreamManifest,
    generate_synthetic_stream,
    generate_test_set,
    load_manifest,
    read_features,
    save_manifest,
    write_features,
)
from .registry import Registry

log = logging.getLogger("uvcl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SUMMARY_FIELDS = ("L_k", "cacc", "acacc", "bwf", "fwf")


class KeyValueFormatter(logging.Formatter):
    """``level=INFO task=3 msg="task done" L_k=4 ...``"""

    _skip = set(vars(logging.makeLogRecord({})))

    def format(self, record):
        parts = [f"level={record.levelname}"]
        extra = {k: v for k, v in vars(record).items() if k not in self._skip and k != "message"}
        if "task" in extra:
            parts.append(f"task={extra.pop('task')}")
        parts.append(f"msg={json.dumps(record.getMessage())}")
        parts.extend(f"{k}={v}" for k, v in extra.items())
        return " ".join(parts)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger("uvcl")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


# --------------------------------------------------------------------------
# synth


def cmd_synth(spec_path, out_dir) -> Path:
    spec = load_synthetic_spec(spec_path)
    tasks = generate_synthetic_stream(spec)
    test = generate_test_set(spec) if spec.test_examples_per_class > 0 else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for batch in tasks:
        name = f"task_{batch.task_index:03d}.uvcl"
        write_features(batch, out / name)
        names.append(Path(name))
    if test is not None:
        write_features(test, out / "test.uvcl")
    manifest = StreamManifest(
        dimension=spec.dim,
        tasks=names,
        seed=spec.seed,
        synthetic=spec,
        test=Path("test.uvcl") if test is not None else None,
        base_dir=out,
    )
    save_manifest(manifest, out / "manifest.json")
    log.info("synthetic stream written", extra={"tasks": len(tasks), "out": str(out)})
    return out / "manifest.json"


# --------------------------------------------------------------------------
# run


def _sources(cfg: RunConfigFile):
    """Load every stream named by ``cfg`` up front so bad inputs fail before any write."""
    test = read_features(cfg.test, 0) if cfg.test is not None else None
    if cfg.synthetic is not None:
        return [resolve_stream(cfg.synthetic, test)]
    manifests = [cfg.manifest] if cfg.manifest is not None else cfg.folds
    return [resolve_stream(load_manifest(m), test) for m in manifests]


def _final(report: RunReport) -> dict:
    last = report.per_task[-1]
    return {
        "L_k": last.L_k,
        "cacc": last.cacc,
        "acacc": report.acacc,
        "bwf": report.bwf,
        "fwf": report.fwf,
    }


def summarize(reports: list[RunReport]) -> dict:
    """Arithmetic mean of the final-task columns over folds (``None`` if any is missing)."""
    rows = [_final(r) for r in reports]
    out = {"folds": len(rows)}
    for key in SUMMARY_FIELDS:
        vals = [r[key] for r in rows]
        out[key] = None if any(v is None for v in vals) else sum(vals) / len(vals)
    return out


def _execute(cfg: RunConfigFile, sources):
    results = []
    for tasks, test in sources:
        report, learner = run_stream(tasks, cfg.engine, test, return_learner=True)
        results.append((report, learner))
    return results


def _write_run(out: Path, report: RunReport, learner) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "trace.csv").write_text(report.trace_csv())
    learner.registry.save(out / "registry.json")
    if learner.head is not None:
        learner.head.save(out / "head.json")


def _write_summary(out: Path, summary: dict) -> None:
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["folds", *SUMMARY_FIELDS])
    w.writerow([summary["folds"], *(summary[k] for k in SUMMARY_FIELDS)])
    (out / "summary.csv").write_text(buf.getvalue())


def cmd_run(config_path, out_dir=None) -> Path:
    cfg = load_run_config(config_path)
    out = Path(out_dir) if out_dir is not None else cfg.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    sources = _sources(cfg)
    results = _execute(cfg, sources)
    if cfg.folds:
        for i, (report, learner) in enumerate(results, start=1):
            _write_run(out / f"fold_{i}", report, learner)
        _write_summary(out, summarize([r for r, _ in results]))
    else:
        report, learner = results[0]
        _write_run(out, report, learner)
    return out


# --------------------------------------------------------------------------
# ablate


def _grid_points(grid: dict[str, list]) -> list[dict]:
    axes = list(grid)
    return [dict(zip(axes, combo)) for combo in itertools.product(*(grid[a] for a in axes))]


def _point_config(cfg: RunConfigFile, point: dict) -> RunConfigFile:
    doc = copy.deepcopy(cfg.raw)
    doc.pop("ablation", None)
    for axis, value in point.items():
        key = ABLATION_AXES[axis]
        doc[key] = int(value) if key == "buffer_capacity" else value
    from .config import parse_run_config

    sub = parse_run_config(doc)
    # paths were already resolved against the config directory
    sub.manifest, sub.folds, sub.test = cfg.manifest, cfg.folds, cfg.test
    sub.engine.seed = cfg.engine.seed
    return sub


def _run_point(args):
    sub, sources = args
    return [r for r, _ in _execute(sub, sources)]


def _label(point: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in point.items())


def cmd_ablate(config_path, out_dir=None, grid: dict | None = None, jobs: int = 1) -> Path:
    cfg = load_run_config(config_path)
    grid = grid if grid is not None else cfg.ablation
    if not grid:
        raise ConfigError("empty ablation grid")
    for axis, values in grid.items():
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}; use {sorted(ABLATION_AXES)}")
        if not values:
            raise ConfigError(f"ablation axis {axis!r} has no values")
    out = Path(out_dir) if out_dir is not None else cfg.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    points = _grid_points(grid)
    subs = [_point_config(cfg, p) for p in points]
    sources = _sources(cfg)

    work = [(s, sources) for s in subs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_reports = list(pool.map(_run_point, work))
    else:
        all_reports = [_run_point(w) for w in work]

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for point, reports in zip(points, all_reports):
        pdir = out / _label(point).replace("=", "_").replace(",", "__")
        pdir.mkdir(parents=True, exist_ok=True)
        for i, rep in enumerate(reports, start=1):
            target = pdir if len(reports) == 1 else pdir / f"fold_{i}"
            target.mkdir(parents=True, exist_ok=True)
            (target / "report.json").write_text(rep.to_json())
            (target / "trace.csv").write_text(rep.trace_csv())
        rows.append({**point, **summarize(reports)})

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [*grid.keys(), "folds", *SUMMARY_FIELDS]
    w.writerow(header)
    for r in rows:
        w.writerow([r[h] for h in header])
    (out / "ablation.csv").write_text(buf.getvalue())
    return out


# --------------------------------------------------------------------------
# export-buffers


def cmd_export_buffers(checkpoint, out_path) -> Path:
    reg = Registry.load(checkpoint)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_id", *(f"v_{i}" for i in range(reg.dimension))])
    for c in reg.clusters:
        for v in c.buffer.items:
            w.writerow([c.id, *(repr(float(t)) for t in v)])
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    return out


# --------------------------------------------------------------------------


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --values list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uvcl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic task stream")
    s.add_argument("--config", required=True, help="synthetic spec JSON")
    s.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="run one experiment (or a fold average)")
    r.add_argument("--config", required=True)
    r.add_argument("--out")

    a = sub.add_parser("ablate", help="run a grid of configurations")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--axis", choices=sorted(ABLATION_AXES))
    a.add_argument("--values", help="comma-separated values for --axis")
    a.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    e = sub.add_parser("export-buffers", help="dump replay buffers of a registry checkpoint")
    e.add_argument("--config", "--checkpoint", dest="checkpoint", required=True,
                   help="registry checkpoint JSON")
    e.add_argument("--out", required=True, help="CSV file to write")
    return p


def _run_command(args) -> None:
    if args.command == "synth":
        print(cmd_synth(args.config, args.out))
    elif args.command == "run":
        print(cmd_run(args.config, args.out))
    elif args.command == "ablate":
        grid = None
        if args.axis or args.values:
            if not (args.axis and args.values):
                raise ConfigError("--axis and --values go together")
            values = _parse_values(args.values)
            if ABLATION_AXES[args.axis] == "buffer_capacity":
                values = [int(v) for v in values]
            grid = {args.axis: values}
        print(cmd_ablate(args.config, args.out, grid, args.jobs))
    elif args.command == "export-buffers":
        print(cmd_export_buffers(args.checkpoint, args.out))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        _run_command(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DataError as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    return EXIT_OK


def _fail(code: int, kind: str, exc: Exception) -> int:
    print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}))
    log.error(str(exc))
    return code


if __name__ == "__main__":
    sys.exit(main())
