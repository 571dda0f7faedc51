"""Performance and fairness metrics over per-user improvement.

Each user's improvement is ``F_i = P_i - max(G_i, L_i)``: personalized
accuracy minus the better of the global (FedAvg) and local-only accuracy,
in percentage points. Users split into improved (F > 0), unchanged (F == 0)
and worsened (F < 0).

Performance: PUI (share of improved users), MPI/API (median/mean gain over
the improved), MPD/APD (median/mean loss magnitude over the worsened).

Fairness is measured separately on the gain magnitudes of the improved and
the loss magnitudes of the worsened:

* AV, population variance (divisor = set size); lower is fairer.
* CS, mean over root-mean-square; higher is fairer.
* Entropy, Shannon entropy (natural log) of the normalized values.
* JI, Jain's index (sum F)^2 / (K sum F^2); equals CS squared.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import EmptySet, LengthMismatch, NonPositiveValue, RangeError, ZeroVector
from .table import FEDAVG, LOCAL, AccuracyTable


@dataclass(frozen=True)
class QoIVector:
    values: np.ndarray
    u_plus: np.ndarray
    u_zero: np.ndarray
    u_minus: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def gains(self) -> np.ndarray:
        return self.values[self.u_plus]

    @property
    def losses(self) -> np.ndarray:
        """Magnitudes of the negative values."""
        return -self.values[self.u_minus]


def qoi(P, G, L) -> QoIVector:
    P, G, L = (np.asarray(a, dtype=np.float64) for a in (P, G, L))
    if not (P.ndim == G.ndim == L.ndim == 1) or not (len(P) == len(G) == len(L)):
        raise LengthMismatch("P, G and L must be vectors of equal length")
    if len(P) == 0:
        raise LengthMismatch("need at least one user")
    for a in (P, G, L):
        if (a < 0).any() or (a > 100).any() or not np.isfinite(a).all():
            raise RangeError("accuracies must lie in [0, 100]")
    F = P - np.maximum(G, L)
    return QoIVector(F, np.flatnonzero(F > 0), np.flatnonzero(F == 0), np.flatnonzero(F < 0))


def pui(q: QoIVector) -> float:
    return 100.0 * len(q.u_plus) / len(q)


def _median(v: np.ndarray) -> float | None:
    return float(np.median(v)) if len(v) else None


def _mean(v: np.ndarray) -> float | None:
    return float(np.mean(v)) if len(v) else None


def mpi(q: QoIVector) -> float | None:
    return _median(q.gains)


def api(q: QoIVector) -> float | None:
    return _mean(q.gains)


def mpd(q: QoIVector) -> float | None:
    return _median(q.losses)


def apd(q: QoIVector) -> float | None:
    return _mean(q.losses)


def _nonempty(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptySet("fairness metrics need at least one value")
    return v


def av(values) -> float:
    v = _nonempty(values)
    return float(np.mean((v - v.mean()) ** 2))


def cs(values) -> float:
    v = _nonempty(values)
    rms = math.sqrt(float(np.mean(v * v)))
    if rms == 0:
        raise ZeroVector("cosine similarity of an all-zero vector")
    return float(v.mean()) / rms


def entropy(values) -> float:
    v = _nonempty(values)
    if (v <= 0).any():
        raise NonPositiveValue("entropy needs strictly positive values")
    p = v / v.sum()
    return float(-(p * np.log(p)).sum())


def jain(values) -> float:
    v = _nonempty(values)
    sq = float((v * v).sum())
    if sq == 0:
        raise ZeroVector("Jain's index of an all-zero vector")
    return float(v.sum()) ** 2 / (len(v) * sq)


FAIRNESS = {"av": av, "cs": cs, "entropy": entropy, "ji": jain}
# Direction in which each fairness metric improves.
HIGHER_IS_FAIRER = {"av": False, "cs": True, "entropy": True, "ji": True}


@dataclass(frozen=True)
class MetricsReport:
    method: str
    split_id: str
    avg_acc: float
    pui: float
    mpi: float | None = None
    api: float | None = None
    mpd: float | None = None
    apd: float | None = None
    av: float | None = None
    cs: float | None = None
    entropy: float | None = None
    ji: float | None = None
    av_minus: float | None = None
    cs_minus: float | None = None
    entropy_minus: float | None = None
    ji_minus: float | None = None
    n_users: int = 0
    n_plus: int = 0
    n_zero: int = 0
    n_minus: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    @staticmethod
    def csv_header() -> list[str]:
        return [f.name for f in fields(MetricsReport)]

    def csv_row(self) -> list[str]:
        return ["" if v is None else (f"{v!r}" if isinstance(v, float) else str(v)) for v in asdict(self).values()]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsReport.csv_header())
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _fairness(values, suffix=""):
    if len(values) == 0:
        return {}
    return {name + suffix: fn(values) for name, fn in FAIRNESS.items()}


def report_from_qoi(q: QoIVector, P, method: str = "", split_id: str = "") -> MetricsReport:
    return MetricsReport(
        method=method,
        split_id=split_id,
        avg_acc=float(np.mean(P)),
        pui=pui(q),
        mpi=mpi(q), api=api(q), mpd=mpd(q), apd=apd(q),
        **_fairness(q.gains),
        **_fairness(q.losses, "_minus"),
        n_users=len(q), n_plus=len(q.u_plus), n_zero=len(q.u_zero), n_minus=len(q.u_minus),
    )


def report(table: AccuracyTable, method: str) -> MetricsReport:
    """All metrics for one method column, measured against the local and fedavg columns."""
    P = table.column(method)
    q = qoi(P, table.column(FEDAVG), table.column(LOCAL))
    return report_from_qoi(q, P, table.resolve(method), table.split_id)
