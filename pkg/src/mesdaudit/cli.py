"""Command-line entry point: ``synth``, ``audit``, ``optimize`` and ``report``.

Exit codes: 0 ok, 2 input/config error, 3 artifact error, 4 numeric/training
error.  Failures print a JSON object ``{"error": {"kind", "message"}}`` on
standard error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import shutil
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from mesdaudit import model as model_io
from mesdaudit.config import RunConfig, load_config
from mesdaudit.data import (
    TabularDataset,
    census_like_spec,
    census_to_json,
    generate_frame,
    planted_instability_spec,
    synthetic_schema,
)
from mesdaudit.errors import ArtifactError, ConfigError, InputIOError, MesdAuditError
from mesdaudit.objectives import FairnessReport, fairness_report, train_model
from mesdaudit.optimize import DatasetEvaluator, chebyshev_select, evolve, front_to_json

logger = logging.getLogger("mesdaudit")

METRICS = (("AUC", "auc"), ("F1", "f1"), ("DP", "dp"), ("EOD", "eod"), ("MESD", "mesd"))


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _prepare(args: argparse.Namespace) -> tuple[RunConfig, TabularDataset, Path]:
    cfg, base = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = cfg.dataset.load(base)
    if cfg.dataset.csv is not None:
        # keep the run directory self-contained
        src = Path(cfg.dataset.csv)
        src = src if src.is_absolute() else base / src
        dst = out / "dataset.csv"
        if src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
        cfg.dataset = dataclasses.replace(cfg.dataset, csv="dataset.csv")
    _write(out / "config.json", cfg.dumps())
    return cfg, ds, out


def _write_report(out: Path, ds: TabularDataset, report: FairnessReport) -> None:
    names = {k: ds.group_name(k) for k in report.stability.group_scores}
    names.update({k: ds.group_name(k) for k in report.per_group_rates})
    _write(out / "report.json", _dump(report.to_json(names)))
    _write(out / "stability.json", _dump(report.stability.to_json(names)))
    _write(out / "mesd_pairs.csv", report.mesd.pairs_csv(names))
    _write(out / "census.json", _dump(census_to_json(ds)))


def cmd_audit(args: argparse.Namespace) -> int:
    cfg, ds, out = _prepare(args)
    if args.model:
        try:
            clf = model_io.from_json(json.loads(Path(args.model).read_text(encoding="utf-8")))
        except FileNotFoundError as exc:
            raise InputIOError(f"model file not found: {args.model}") from exc
    else:
        clf = train_model(ds, cfg.hp, cfg.eval_config(), cfg.master_seed)
    report = fairness_report(clf, ds, cfg.eval_config(), cfg.master_seed, split="test")
    _write(out / "model.json", model_io.dumps(clf) + "\n")
    _write_report(out, ds, report)
    if report.mesd.degenerate:
        logger.warning("fewer than two realized groups: MESD reported as 0 (degenerate)")
    print(
        f"audit: AUC={report.auc:.4f} F1={report.f1:.4f} DP={report.dp_gap:.4f} "
        f"EOD={report.eod_gap:.4f} MESD={report.mesd.mesd_cvar:.5f} -> {out}"
    )
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg, ds, out = _prepare(args)
    evaluator = DatasetEvaluator(ds, cfg.eval_config(), split="val")
    result = evolve(evaluator, cfg.search, cfg.master_seed, workers=args.workers)
    _write(out / "archive.jsonl", "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in result.archive))
    pick = chebyshev_select(result.front, theoretical_ideal=cfg.search.theoretical_ideal)
    _write(out / "front.json", _dump(front_to_json(result.front, pick)))

    clf = train_model(ds, pick.chosen.hyperparams(), cfg.eval_config(), pick.seed)
    _write(out / f"model_{pick.chosen.digest()}.json", model_io.dumps(clf) + "\n")
    report = fairness_report(clf, ds, cfg.eval_config(), pick.seed, split="test")
    _write_report(out, ds, report)
    o = pick.objectives
    print(
        f"chebyshev pick {pick.chosen.digest()}: f_perf={o.f_perf:.4f} f_out={o.f_out:.4f} "
        f"f_proc={o.f_proc:.5f} score={pick.score:.4f} (front {len(result.front.members)}, "
        f"{len(result.archive)} evaluations) -> {out}"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.preset == "planted":
        spec = planted_instability_spec(args.n, seed=seed)
    else:
        spec = census_like_spec(args.n, skew=args.skew, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = generate_frame(spec)
    frame.to_csv(out / "dataset.csv", index=False, float_format="%.17g", lineterminator="\n")
    schema = synthetic_schema(spec).to_dict()
    _write(out / "schema.json", _dump(schema))
    _write(
        out / "config.json",
        RunConfig.from_json({"dataset": {"csv": "dataset.csv", "schema": schema}, "master_seed": seed}, out).dumps(),
    )
    print(f"wrote {len(frame)} rows to {out / 'dataset.csv'}")
    return 0


# ------------------------------------------------------------------- report


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt artifact {path}: {exc}") from exc


def _metrics(run: Path) -> dict[str, float]:
    doc = _load_json(run / "report.json")
    try:
        return {label: float(doc["metrics"][key]) for label, key in METRICS}
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed report in {run}: {exc}") from exc


def _archive_rows(run: Path) -> list[dict[str, Any]]:
    path = run / "archive.jsonl"
    if not path.is_file():
        raise ArtifactError(f"{run} has no archive.jsonl (not an optimize run)")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        try:
            e = json.loads(line)
            rows.append(
                {
                    "generation": e["generation"],
                    "index": e["index"],
                    "genome_hash": e["genome_hash"],
                    "f_perf": e["objectives"]["f_perf"],
                    "f_out": e["objectives"]["f_out"],
                    "f_proc": e["objectives"]["f_proc"],
                    "feasible": e["feasible"],
                }
            )
        except (KeyError, json.JSONDecodeError) as exc:
            raise ArtifactError(f"malformed archive line in {path}: {exc}") from exc
    return rows


def _variants(run: Path) -> dict[str, float]:
    doc = _load_json(run / "report.json")
    try:
        m = doc["mesd"]
        return {"mesd_cvar": m["mesd_cvar"], "mesd_max": m["mesd_max"], "mesd_var": m["mesd_var"]}
    except KeyError as exc:
        raise ArtifactError(f"malformed report in {run}: {exc}") from exc


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [list(map(str, header))] + [[repr(v) if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_report(runs: Sequence[Path], what: str = "metrics", fmt: str = "table") -> str:
    for run in runs:
        if not run.is_dir():
            raise ArtifactError(f"run directory not found: {run}")
    if what == "metrics":
        per_run = {run.name: _metrics(run) for run in runs}
        if fmt == "json":
            return _dump(per_run)
        header = ["metric", *per_run]
        rows = [[label, *(per_run[r][label] for r in per_run)] for label, _ in METRICS]
    elif what == "pareto":
        records = [{"run": run.name, **row} for run in runs for row in _archive_rows(run)]
        if fmt == "json":
            return _dump(records)
        header = ["run", "generation", "index", "genome_hash", "f_perf", "f_out", "f_proc", "feasible"]
        rows = [[r[h] for h in header] for r in records]
    elif what == "variants":
        per_run = {run.name: _variants(run) for run in runs}
        if fmt == "json":
            return _dump(per_run)
        header = ["run", "mesd_cvar", "mesd_max", "mesd_var"]
        rows = [[r, v["mesd_cvar"], v["mesd_max"], v["mesd_var"]] for r, v in per_run.items()]
    else:
        raise ConfigError(f"unknown report kind {what!r}")
    return _csv(header, rows) if fmt == "csv" else _table(header, rows)


def cmd_report(args: argparse.Namespace) -> int:
    sys.stdout.write(render_report([Path(r) for r in args.runs], args.what, args.format))
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesdaudit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="run config JSON (defaults: bundled synthetic dataset)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="max concurrent evaluations")

    p = sub.add_parser("audit", help="train (or load) one model and write its fairness report")
    common(p)
    p.add_argument("--model", help="audit this serialized model instead of training one")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("optimize", help="NSGA-II search plus Chebyshev pick")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="render metrics, Pareto points or MESD variants of run directories")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--what", choices=("metrics", "pareto", "variants"), default="metrics")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic census-like dataset, schema and config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--preset", choices=("planted", "census"), default="planted")
    p.add_argument("--skew", type=float, default=0.5, help="group-size skew for the census preset")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except MesdAuditError as exc:
        sys.stderr.write(json.dumps({"error": {"kind": exc.kind, "message": str(exc)}}) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": {"kind": "io", "message": str(exc)}}) + "\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
