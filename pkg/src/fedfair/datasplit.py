"""Non-IID partitioning of a labelled dataset across simulated clients.

Four strategies are provided:

* DS1: equal per-client totals, each client drawing from at most ``k`` classes.
* DS2: each class is divided among the clients by a Dirichlet draw.
* DS3: two classes per client, client sizes proportional to log-normal draws.
* DS4: half the clients hold ``k`` samples of each early class, the other half
  hold ``k/2`` of one early class and ``2k`` of one late class.

Every split is a pure function of ``(labels, spec)``. Randomness comes from a
PCG64 generator seeded with ``spec.seed`` (see :mod:`fedfair.seeding`), so a
manifest is reproducible across runs and platforms.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyClient, InsufficientSamples, InvalidSpec
from .seeding import make_rng


class Strategy(str, enum.Enum):
    DS1 = "DS1"
    DS2 = "DS2"
    DS3 = "DS3"
    DS4 = "DS4"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise InvalidSpec(f"unknown split strategy {value!r}; expected one of ds1, ds2, ds3, ds4") from None


@dataclass(frozen=True)
class SplitSpec:
    strategy: Strategy
    num_clients: int
    seed: int = 0
    # DS1
    ds1_overlap_k: int = 4
    ds1_samples_per_client: int | None = None  # None: largest feasible common total
    # DS2
    dirichlet_alpha: float = 0.9
    dirichlet_prior: tuple[float, ...] | None = None  # None: uniform over classes
    max_redraws: int = 100
    # DS3
    lognormal_mu: float = 0.0
    lognormal_sigma: float = 2.0
    ds3_min_per_class: int = 1
    # DS4
    ds4_k: int = 196

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.dirichlet_prior is not None:
            object.__setattr__(self, "dirichlet_prior", tuple(float(p) for p in self.dirichlet_prior))

    def validate(self, num_classes: int) -> None:
        """Check every field, including those the chosen strategy ignores."""
        if int(self.num_clients) < 1:
            raise InvalidSpec("num_clients must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        if self.ds1_overlap_k < 1:
            raise InvalidSpec("ds1_overlap_k must be positive")
        if self.strategy is Strategy.DS1 and self.ds1_overlap_k > num_classes:
            raise InvalidSpec(f"ds1_overlap_k={self.ds1_overlap_k} exceeds num_classes={num_classes}")
        if self.ds1_samples_per_client is not None and self.ds1_samples_per_client < 1:
            raise InvalidSpec("ds1_samples_per_client must be positive")
        if not (self.dirichlet_alpha > 0 and math.isfinite(self.dirichlet_alpha)):
            raise InvalidSpec("dirichlet_alpha must be a positive finite real")
        if self.dirichlet_prior is not None:
            p = np.asarray(self.dirichlet_prior, dtype=float)
            if p.ndim != 1 or len(p) != num_classes:
                raise InvalidSpec(f"dirichlet_prior must have {num_classes} entries")
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
                raise InvalidSpec("dirichlet_prior must be a probability vector")
        if self.max_redraws < 1:
            raise InvalidSpec("max_redraws must be positive")
        if not math.isfinite(self.lognormal_mu):
            raise InvalidSpec("lognormal_mu must be finite")
        if not (self.lognormal_sigma > 0 and math.isfinite(self.lognormal_sigma)):
            raise InvalidSpec("lognormal_sigma must be positive")
        if self.ds3_min_per_class < 1:
            raise InvalidSpec("ds3_min_per_class must be at least 1")
        if self.ds4_k < 1:
            raise InvalidSpec("ds4_k must be positive")
        if self.strategy is Strategy.DS3 and num_classes < 2:
            raise InvalidSpec("DS3 needs at least two classes")
        if self.strategy is Strategy.DS4:
            if self.num_clients % 2:
                raise InvalidSpec("DS4 needs an even number of clients")
            if self.ds4_k % 2:
                raise InvalidSpec("DS4 needs an even k")
            if num_classes < 2:
                raise InvalidSpec("DS4 needs at least two classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        if self.dirichlet_prior is not None:
            d["dirichlet_prior"] = list(self.dirichlet_prior)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)


@dataclass
class PartitionManifest:
    spec: SplitSpec
    num_classes: int
    class_counts: np.ndarray
    assignments: list[np.ndarray]
    histogram: np.ndarray = field(default=None)

    def __post_init__(self):
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        if self.histogram is not None:
            self.histogram = np.asarray(self.histogram, dtype=np.int64)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def client_totals(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignments], dtype=np.int64)

    def check(self, labels: Sequence[int] | None = None) -> None:
        """Raise AssertionError if a structural invariant does not hold."""
        allidx = np.concatenate(self.assignments) if self.assignments else np.zeros(0, np.int64)
        assert len(np.unique(allidx)) == len(allidx), "sample index assigned twice"
        assert np.array_equal(self.histogram.sum(axis=1), self.client_totals())
        assert (self.histogram.sum(axis=0) <= self.class_counts).all()
        if labels is not None:
            labels = np.asarray(labels)
            assert allidx.size == 0 or (allidx.min() >= 0 and allidx.max() < len(labels))
            for i, idx in enumerate(self.assignments):
                h = np.bincount(labels[idx], minlength=self.num_classes)
                assert np.array_equal(h, self.histogram[i])

    def to_json(self) -> str:
        d = {
            "spec": self.spec.to_dict(),
            "num_classes": int(self.num_classes),
            "class_counts": self.class_counts.tolist(),
            "assignments": [a.tolist() for a in self.assignments],
            "histogram": self.histogram.tolist(),
        }
        return json.dumps(d, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PartitionManifest":
        d = json.loads(text)
        return cls(
            spec=SplitSpec.from_dict(d["spec"]),
            num_classes=d["num_classes"],
            class_counts=d["class_counts"],
            assignments=d["assignments"],
            histogram=d["histogram"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PartitionManifest":
        return cls.from_json(Path(path).read_text())


def largest_remainder(weights, total: int) -> np.ndarray:
    """Round ``total * weights / sum(weights)`` to integers summing to ``total``.

    Leftover units go to the largest fractional parts; ties go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    total = int(total)
    if total == 0 or w.sum() <= 0:
        return np.zeros(len(w), dtype=np.int64)
    exact = w / w.sum() * total
    base = np.floor(exact).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        frac = exact - base
        order = np.argsort(-frac, kind="stable")
        base[order[:short]] += 1
    return base


def _class_pools(labels: np.ndarray, num_classes: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(labels == c)) for c in range(num_classes)]


def _materialize(spec, labels, num_classes, counts, pools) -> PartitionManifest:
    """Turn a K x C count matrix into index lists by consuming shuffled class pools."""
    class_counts = np.bincount(labels, minlength=num_classes)
    if (counts.sum(axis=0) > class_counts).any():
        c = int(np.argmax(counts.sum(axis=0) - class_counts))
        raise InsufficientSamples(f"class {c} needs {counts[:, c].sum()} samples, only {class_counts[c]} available")
    cursor = np.zeros(num_classes, dtype=np.int64)
    assignments = []
    for row in counts:
        parts = []
        for c, n in enumerate(row):
            if n:
                parts.append(pools[c][cursor[c]:cursor[c] + n])
                cursor[c] += n
        idx = np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        assignments.append(idx)
    return PartitionManifest(spec, num_classes, class_counts, assignments, counts.astype(np.int64))


def _prepare(labels, spec: SplitSpec, num_classes: int | None):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InvalidSpec("labels must be one-dimensional")
    if labels.size == 0:
        raise InsufficientSamples("no labels")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise InvalidSpec("labels must be integral class indices")
    labels = labels.astype(np.int64)
    if labels.min() < 0:
        raise InvalidSpec("labels must be nonnegative")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    elif labels.max() >= num_classes:
        raise InvalidSpec("label outside [0, num_classes)")
    spec.validate(num_classes)
    return labels, num_classes


def split_ds1(labels, spec: SplitSpec, num_classes: int | None = None) -> PartitionManifest:
    labels, C = _prepare(labels, spec, num_classes)
    K, k = spec.num_clients, spec.ds1_overlap_k
    rng = make_rng(spec.seed)
    pools = _class_pools(labels, C, rng)
    avail = np.array([len(p) for p in pools])

    # Sliding class windows with stride s cover every class whenever K*k >= C.
    stride = min(k, -(-C // K))
    class_perm = rng.permutation(C)
    slot_of_client = rng.permutation(K)
    classes = np.array([[class_perm[(slot * stride + j) % C] for j in range(k)] for slot in slot_of_client])
    weights = rng.uniform(0.0, 1.0, size=(K, k))
    weights /= weights.sum(axis=1, keepdims=True)

    def counts_for(total):
        m = np.zeros((K, C), dtype=np.int64)
        for i in range(K):
            m[i, classes[i]] = largest_remainder(weights[i], total)
        return m

    if spec.ds1_samples_per_client is not None:
        counts = counts_for(spec.ds1_samples_per_client)
    else:
        demand = np.zeros(C)
        for i in range(K):
            demand[classes[i]] += weights[i]
        used = demand > 0
        total = int(np.floor(np.min(avail[used] / demand[used])))
        counts = counts_for(total)
        while total > 0 and (counts.sum(axis=0) > avail).any():
            total -= 1
            counts = counts_for(total)
        if total < 1:
            raise InsufficientSamples("dataset too small for an equal nonzero DS1 total")
    return _materialize(spec, labels, C, counts, pools)


def split_ds2(labels, spec: SplitSpec, num_classes: int | None = None) -> PartitionManifest:
    labels, C = _prepare(labels, spec, num_classes)
    K = spec.num_clients
    rng = make_rng(spec.seed)
    pools = _class_pools(labels, C, rng)
    avail = np.array([len(p) for p in pools])
    concentration = np.full(K, spec.dirichlet_alpha)
    for _ in range(spec.max_redraws):
        counts = np.zeros((K, C), dtype=np.int64)
        for c in range(C):
            q = rng.dirichlet(concentration)
            counts[:, c] = largest_remainder(q, avail[c])
        if (counts.sum(axis=1) > 0).all():
            return _materialize(spec, labels, C, counts, pools)
    raise EmptyClient(f"a client stayed empty after {spec.max_redraws} Dirichlet draws")


def split_ds3(labels, spec: SplitSpec, num_classes: int | None = None) -> PartitionManifest:
    labels, C = _prepare(labels, spec, num_classes)
    K, m = spec.num_clients, spec.ds3_min_per_class
    rng = make_rng(spec.seed)
    pools = _class_pools(labels, C, rng)
    avail = np.array([len(p) for p in pools])

    class_perm = rng.permutation(C)
    slot_of_client = rng.permutation(K)
    pairs = np.array([[class_perm[(2 * s) % C], class_perm[(2 * s + 1) % C]] for s in slot_of_client])
    u = rng.lognormal(spec.lognormal_mu, spec.lognormal_sigma, size=K)
    w = u / u.sum()

    slots = np.zeros(C, dtype=np.int64)
    half_weight = np.zeros(C)
    for i, (a, b) in enumerate(pairs):
        slots[[a, b]] += 1
        half_weight[[a, b]] += w[i] / 2
    spare = avail - m * slots
    if (spare < 0).any():
        c = int(np.argmin(spare))
        raise InsufficientSamples(f"class {c} cannot give {m} samples to each of its {slots[c]} clients")
    # Each client's extra total is split ceil/floor between its two classes, so
    # reserve one sample per slot for rounding before scaling.
    used = slots > 0
    headroom = np.maximum(spare[used] - slots[used], 0)
    extra_total = int(np.floor(np.min(headroom / half_weight[used])))
    extra = largest_remainder(w, extra_total)
    counts = np.zeros((K, C), dtype=np.int64)
    for i, (a, b) in enumerate(pairs):
        counts[i, a] = m + (extra[i] + 1) // 2
        counts[i, b] = m + extra[i] // 2
    return _materialize(spec, labels, C, counts, pools)


def split_ds4(labels, spec: SplitSpec, num_classes: int | None = None) -> PartitionManifest:
    labels, C = _prepare(labels, spec, num_classes)
    K, k = spec.num_clients, spec.ds4_k
    rng = make_rng(spec.seed)
    pools = _class_pools(labels, C, rng)
    # With ten classes these are classes 0-4 and 5-9.
    n_early = C // 2
    early = np.arange(n_early)
    late = np.arange(n_early, C)
    counts = np.zeros((K, C), dtype=np.int64)
    half = K // 2
    counts[:half, early] = k
    for i in range(half, K):
        counts[i, rng.choice(early)] += k // 2
        counts[i, rng.choice(late)] += 2 * k
    return _materialize(spec, labels, C, counts, pools)


_SPLITTERS = {
    Strategy.DS1: split_ds1,
    Strategy.DS2: split_ds2,
    Strategy.DS3: split_ds3,
    Strategy.DS4: split_ds4,
}


def split(labels, spec: SplitSpec, num_classes: int | None = None) -> PartitionManifest:
    """Dispatch on ``spec.strategy``."""
    return _SPLITTERS[spec.strategy](labels, spec, num_classes)
