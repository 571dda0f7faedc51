"""Plot-ready densities, fairness rankings and markdown rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySet, InvalidSpec
from .metrics import FAIRNESS, HIGHER_IS_FAIRER, MetricsReport
from .table import AccuracyTable


@dataclass(frozen=True)
class DensitySeries:
    method: str
    bin_edges: np.ndarray
    bin_density: np.ndarray
    kde_points: np.ndarray | None = None  # shape (n, 2): x, density
    degenerate: bool = False

    def mode(self) -> float:
        """Centre of the densest bin."""
        i = int(np.argmax(self.bin_density))
        return float((self.bin_edges[i] + self.bin_edges[i + 1]) / 2)

    def area(self) -> float:
        return float((np.diff(self.bin_edges) * self.bin_density).sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "density"])
        for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.bin_density):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])
        return buf.getvalue()


def silverman_bandwidth(v: np.ndarray) -> float:
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    q75, q25 = np.percentile(v, [75, 25])
    scale = min(sd, (q75 - q25) / 1.34) or sd
    return 0.9 * scale * len(v) ** -0.2 if scale > 0 else 1.0


def density(values, bins: int = 10, method: str = "", kde: bool = False, kde_points: int = 100) -> DensitySeries:
    """Unit-area equal-width histogram over [min, max], optionally with a Gaussian KDE."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptySet("no values to histogram")
    if bins < 1:
        raise InvalidSpec("bins must be >= 1")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        # single spike bin of unit width centred on the value
        edges = np.array([lo - 0.5, lo + 0.5])
        dens = np.array([1.0])
        degenerate = True
    else:
        counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
        dens = counts / (v.size * np.diff(edges))
        degenerate = False
    pts = None
    if kde:
        h = silverman_bandwidth(v)
        xs = np.linspace(lo - 3 * h, hi + 3 * h, kde_points)
        z = (xs[:, None] - v[None, :]) / h
        ys = np.exp(-0.5 * z * z).sum(axis=1) / (v.size * h * np.sqrt(2 * np.pi))
        pts = np.column_stack([xs, ys])
    return DensitySeries(method, edges, dens, pts, degenerate)


@dataclass(frozen=True)
class FairnessRanking:
    split_id: str
    metric: str
    ranking: tuple[str, ...]  # fairest first
    values: tuple[float, ...]

    @property
    def winner(self) -> str:
        return self.ranking[0]


def fairness_summary(reports: Sequence[MetricsReport], suffix: str = "") -> list[FairnessRanking]:
    """Rank methods within each split by every fairness metric.

    ``suffix=""`` ranks on the improved-user set, ``"_minus"`` on the worsened set.
    Ties are broken by method name so the result does not depend on input order.
    """
    if len(reports) < 2:
        raise InvalidSpec("need at least two reports to rank")
    splits = sorted({r.split_id for r in reports})
    out = []
    for s in splits:
        group = [r for r in reports if r.split_id == s]
        for metric in FAIRNESS:
            scored = [(getattr(r, metric + suffix), r.method) for r in group]
            scored = [(v, m) for v, m in scored if v is not None]
            if not scored:
                continue
            sign = -1.0 if HIGHER_IS_FAIRER[metric] else 1.0
            scored.sort(key=lambda vm: (sign * vm[0], vm[1]))
            out.append(FairnessRanking(s, metric, tuple(m for _, m in scored), tuple(v for v, _ in scored)))
    return out


def winners(summary: Sequence[FairnessRanking]) -> dict[str, dict[str, str]]:
    """{split: {metric: winning method}}"""
    out: dict[str, dict[str, str]] = {}
    for r in summary:
        out.setdefault(r.split_id, {})[r.metric] = r.winner
    return out


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def _grid(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h) for j, h in enumerate(header)]
    def line(cells):
        return "| " + " | ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(cells, widths))) + " |"
    sep = "|" + "|".join("-" * (w + 1) + ":" if j else ":" + "-" * (w + 1) for j, w in enumerate(widths)) + "|"
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def render_table(table: AccuracyTable, footer: bool = True) -> str:
    """Per-user accuracies with average and sample standard deviation footers."""
    methods = table.methods
    rows = [[u] + [_fmt(table.columns[m][i]) for m in methods] for i, u in enumerate(table.users)]
    if footer and methods and table.users:
        rows.append(["Avg. Acc."] + [_fmt(float(np.mean(table.columns[m]))) for m in methods])
        rows.append(["Std Dev"] + [_fmt(std_dev(table.columns[m])) for m in methods])
    return _grid(["User"] + methods, rows)


def std_dev(values) -> float:
    """Sample standard deviation (divisor K - 1); 0 for a single user."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


REPORT_ROWS = [("PUI", "pui"), ("MPI", "mpi"), ("API", "api"), ("MPD", "mpd"), ("APD", "apd"), ("AA", "avg_acc"),
               ("AV", "av"), ("CS", "cs"), ("Entropy", "entropy"), ("JI", "ji")]


def render_reports(reports: Sequence[MetricsReport]) -> str:
    """Metrics as rows, one column per (method, split)."""
    header = ["Metric"] + [f"{r.method} {r.split_id}".strip() for r in reports]
    rows = [[label] + [_fmt(getattr(r, attr)) for r in reports] for label, attr in REPORT_ROWS]
    return _grid(header, rows)


def render_summary(summary: Sequence[FairnessRanking]) -> str:
    rows = [[r.split_id, r.metric.upper() if r.metric != "entropy" else "Entropy", r.winner,
             " > ".join(r.ranking)] for r in summary]
    return _grid(["Split", "Metric", "Fairest", "Ranking"], rows)


def render_markdown(obj) -> str:
    """Render an AccuracyTable, a list of MetricsReports or a fairness summary."""
    if isinstance(obj, AccuracyTable):
        return render_table(obj)
    obj = list(obj)
    if obj and isinstance(obj[0], FairnessRanking):
        return render_summary(obj)
    return render_reports(obj)
