"""fedfair command line: split -> train -> metrics -> report.

Exit codes: 0 success, 1 runtime or I/O error, 2 usage error. Data goes to
files or stdout, diagnostics to stderr.

Every run flag can also come from ``--config FILE`` (JSON or key = value
lines, see :mod:`fedfair.experiment`); flags given on the command line win.
``--seed`` falls back to the config, then to $FEDFAIR_SEED, then to 0.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from . import experiment as X
from .datasplit import split
from .dataset import load_labels
from .errors import FedFairError, InvalidSpec
from .fixtures import fixture_path
from .metrics import MetricsReport, qoi, report, reports_to_csv
from .report import _grid, density, fairness_summary, render_reports, render_summary, render_table
from .table import FEDAVG, LOCAL, AccuracyTable, canonical, read_csv, read_table


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def _add_seed_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or key=value file, or a bundled config name (e.g. blobs_ds3)")
    p.add_argument("--seed", type=int, help="master seed (default: config, then $FEDFAIR_SEED, then 0)")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("split")
    g.add_argument("--strategy", help="ds1, ds2, ds3 or ds4")
    g.add_argument("--clients", type=int, help="number of clients K")
    g.add_argument("--k", type=int, help="class overlap k for ds1, per-class count k for ds4")
    g.add_argument("--alpha", type=float, help="ds2 Dirichlet concentration (default 0.9)")
    g.add_argument("--prior", type=_floats, help="ds2 class prior, comma separated")
    g.add_argument("--max-redraws", type=int, dest="max_redraws")
    g.add_argument("--mu", type=float, help="ds3 log-normal mu (default 0)")
    g.add_argument("--sigma", type=float, help="ds3 log-normal sigma (default 2)")
    g.add_argument("--min-per-class", type=int, dest="min_per_class", help="ds3 floor per client and class")
    g.add_argument("--samples-per-client", type=int, dest="ds1_samples_per_client",
                   help="ds1 common total (default: largest feasible)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", choices=["blobs", "idx", "csv"])
    g.add_argument("--images", help="IDX image file")
    g.add_argument("--labels", help="IDX label file (or label CSV for split)")
    g.add_argument("--data-csv", dest="data_csv", help="dataset CSV with feature_* and label columns")
    g.add_argument("--num-classes", type=int, dest="num_classes")
    g.add_argument("--dim", type=int)
    g.add_argument("--per-class", type=int, dest="per_class")
    g.add_argument("--spread", type=float)
    g.add_argument("--noise", type=float)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--methods", help="comma separated, e.g. fedper,perfedavg,pfedme (local and fedavg always run)")
    g.add_argument("--manifest", help="use a saved split instead of splitting here")
    g.add_argument("--split-id", dest="split_id")
    g.add_argument("--rounds", type=int)
    g.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    g.add_argument("--batch-size", type=int, dest="batch_size")
    g.add_argument("--local-epochs", type=int, dest="local_epochs")
    g.add_argument("--learning-rate", type=float, dest="learning_rate")
    g.add_argument("--fractions", type=_floats, help="train,val,test fractions (default 0.6,0.2,0.2)")
    g.add_argument("--jobs", type=int, help="client updates run on this many threads")
    g.add_argument("--fedper-personal-layers", type=int, dest="fedper_personal_layers")
    g.add_argument("--perfedavg-alpha", type=float, dest="perfedavg_alpha")
    g.add_argument("--perfedavg-beta", type=float, dest="perfedavg_beta")
    g.add_argument("--personalization-steps", type=int, dest="personalization_steps")
    g.add_argument("--pfedme-lambda", type=float, dest="pfedme_lambda")
    g.add_argument("--pfedme-eta", type=float, dest="pfedme_eta")
    g.add_argument("--pfedme-inner-steps", type=int, dest="pfedme_inner_steps")
    g.add_argument("--pfedme-inner-lr", type=float, dest="pfedme_inner_lr")
    g.add_argument("--pfedme-mix-beta", type=float, dest="pfedme_mix_beta")


def _merged(args: argparse.Namespace) -> dict:
    """Config file values overridden by every flag the user actually gave."""
    cfg = X.load_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in X.KNOWN_KEYS and value is not None:
            cfg[key] = value
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_split(args) -> int:
    cfg = _merged(args)
    for key in ("strategy", "clients"):
        if cfg.get(key) is None:
            raise UsageError(f"split needs --{key}")
    seed = X.resolve_seed(cfg)
    if cfg.get("labels") and cfg.get("dataset") in (None, "idx"):
        labels = load_labels(cfg["labels"])
        num_classes = cfg.get("num_classes")
    elif cfg.get("dataset"):
        ds = X.build_dataset(cfg, seed)
        labels, num_classes = ds.labels, ds.num_classes
    else:
        raise UsageError("split needs --labels or a --dataset")
    manifest = split(labels, X.split_spec(cfg, seed), num_classes)
    _emit(manifest.to_json(), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _merged(args)
    if cfg.get("manifest") is None:
        for key in ("strategy", "clients"):
            if cfg.get(key) is None:
                raise UsageError(f"train needs --{key} (or --manifest / --config)")
    exp = X.build_experiment(cfg)
    table = exp.run()
    _emit(table.to_csv(), args.out)
    if args.json:
        Path(args.json).write_text(table.to_json())
    return 0


def _methods(values: list[str] | None) -> list[str]:
    out = []
    for v in values or []:
        out.extend(m.strip() for m in v.split(",") if m.strip())
    return out


def cmd_metrics(args) -> int:
    tables = read_csv(args.table) if args.split is None else [read_table(args.table, args.split)]
    reports = []
    for t in tables:
        names = _methods(args.method) or personalized_columns(t)
        reports.extend(report(t, m) for m in names)
    if args.format == "csv":
        text = reports_to_csv(reports)
    else:
        data = [r.to_dict() for r in reports]
        text = json.dumps(data[0] if len(data) == 1 else data, indent=2) + "\n"
    _emit(text, args.out)
    return 0


def personalized_columns(t: AccuracyTable) -> list[str]:
    return [m for m in t.methods if canonical(m) not in (LOCAL, FEDAVG)]


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-") or "table"


def build_report(tables: list[AccuracyTable], density_dir: str | None = None, bins: int = 10,
                 kde: bool = False) -> tuple[str, list[MetricsReport]]:
    parts = ["# Per-user accuracy\n"]
    reports: list[MetricsReport] = []
    for t in tables:
        parts.append(f"\n## {t.split_id}\n\n" + render_table(t))
        for m in personalized_columns(t):
            reports.append(report(t, m))
            if density_dir:
                q = qoi(t.column(m), t.column(FEDAVG), t.column(LOCAL))
                series = density(q.values, bins=bins, method=m, kde=kde)
                base = Path(density_dir) / f"qoi_{_slug(t.split_id)}_{_slug(m)}"
                base.parent.mkdir(parents=True, exist_ok=True)
                base.with_suffix(".csv").write_text(series.to_csv())
                if kde:
                    pts = "x,density\n" + "".join(f"{x!r},{y!r}\n" for x, y in series.kde_points.tolist())
                    Path(f"{base}_kde.csv").write_text(pts)
    if not reports:
        return "".join(parts), reports
    parts.append("\n# Metrics\n")
    for s in dict.fromkeys(r.split_id for r in reports):
        parts.append(f"\n## {s}\n\n" + render_reports([r for r in reports if r.split_id == s]))
    by_split = {}
    for r in reports:
        by_split.setdefault(r.split_id, []).append(r)
    rankable = [r for rs in by_split.values() if len(rs) >= 2 for r in rs]
    if rankable:
        parts.append("\n# Fairness over improved users\n\n" + render_summary(fairness_summary(rankable)))
        minus = fairness_summary(rankable, "_minus")
        if minus:
            parts.append("\n# Fairness over worsened users\n\n" + render_summary(minus))
    return "".join(parts), reports


def replay_comparison(reports: list[MetricsReport]) -> str:
    """Recomputed PUI/MPI/API/AA next to the printed values."""
    printed = read_csv_rows(fixture_path("table4.csv"))
    attr = {"PUI": "pui", "MPI": "mpi", "API": "api", "AA": "avg_acc"}
    lookup = {(canonical(r.method), canonical(r.split_id)): r for r in reports}
    rows = []
    for row in printed:
        for method, value in row.items():
            if method in ("metric", "split"):
                continue
            r = lookup.get((canonical(method), canonical(row["split"])))
            if r is None or row["metric"] not in attr:
                continue
            got = getattr(r, attr[row["metric"]])
            rows.append([row["metric"], row["split"], method, f"{float(value):.2f}", f"{got:.2f}",
                         f"{got - float(value):+.2f}"])
    return _grid(["Metric", "Split", "Method", "Printed", "Recomputed", "Diff"], rows)


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def cmd_report(args) -> int:
    if not args.tables and not args.replay_paper:
        raise UsageError("report needs --tables or --replay-paper")
    tables = []
    for path in args.tables or []:
        tables.extend(read_csv(path))
    if args.replay_paper:
        tables.extend(read_csv(fixture_path("table3.csv")))
    text, reports = build_report(tables, args.density_out, args.bins, args.kde)
    if args.replay_paper:
        text += "\n# Printed vs recomputed\n\n" + replay_comparison(reports)
    _emit(text, args.out)
    if args.json:
        Path(args.json).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfair", description="Non-IID splits, federated training and QoI metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="partition a labelled dataset into client index lists")
    _add_seed_config(p)
    _add_split_flags(p)
    _add_data_flags(p)
    p.add_argument("--out", help="manifest JSON (default stdout)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run local, FedAvg and personalized methods; write the accuracy table")
    _add_seed_config(p)
    _add_split_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", help="accuracy table CSV (default stdout)")
    p.add_argument("--json", help="also write the table as full-precision JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", help="QoI performance and fairness metrics for table columns")
    p.add_argument("--table", required=True)
    p.add_argument("--method", action="append", help="column name (repeatable or comma separated; default: all personalized)")
    p.add_argument("--split", help="split id when the table holds several")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", help="markdown report, fairness rankings and QoI densities")
    p.add_argument("--tables", nargs="+")
    p.add_argument("--replay-paper", action="store_true", help="include the bundled published tables")
    p.add_argument("--out", help="markdown file (default stdout)")
    p.add_argument("--json", help="also write every metrics report as JSON")
    p.add_argument("--density-out", dest="density_out", help="directory for QoI histogram CSVs")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--kde", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidSpec) as e:
        parser.print_usage(sys.stderr)
        print(f"fedfair: error: {e}", file=sys.stderr)
        return 2
    except (FedFairError, OSError, ValueError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"fedfair: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
