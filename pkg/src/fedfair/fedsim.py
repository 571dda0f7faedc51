"""Federated training of local, FedAvg and personalized models.

Every client takes part in every round and its data slice never changes
between rounds. Client updates within a round are independent; they may run
on a thread pool (``FedConfig.jobs``) and are always reduced in client-index
order, so results do not depend on scheduling.

Seeds fan out from ``config.training.seed`` (see :mod:`fedfair.seeding`).
Minibatch order depends only on (seed, round, client), never on the method,
which is what makes the reductions below exact:

* one client: FedAvg == Local, bitwise;
* FedPer with no personal layers == FedAvg, bitwise;
* Per-FedAvg with zero inner step and no personalization == FedAvg with the
  outer step as learning rate.
"""

from __future__ import annotations

import enum
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import nnet
from .dataset import Dataset, slice_client
from .datasplit import PartitionManifest
from .errors import EmptyClient, InvalidSpec
from .nnet import MlpArch, ModelParams, TrainingConfig
from .seeding import STAGE_INIT, STAGE_PERSONALIZE, STAGE_SHUFFLE, make_rng
from .table import FEDAVG, LOCAL, AccuracyTable, canonical


class Method(str, enum.Enum):
    LOCAL = "Local"
    FEDAVG = "FedAvg"
    FEDPER = "FedPer"
    PERFEDAVG = "PerFedAvg"
    PFEDME = "pFedMe"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        for m in cls:
            if canonical(m.value) == canonical(str(value)):
                return m
        valid = ", ".join(m.value.lower() for m in cls)
        raise InvalidSpec(f"unknown method {value!r}; valid methods: {valid}")

    @property
    def column(self) -> str:
        return {Method.LOCAL: LOCAL, Method.FEDAVG: FEDAVG}.get(self, self.value)


@dataclass(frozen=True)
class FedConfig:
    method: Method = Method.FEDAVG
    rounds: int = 20
    training: TrainingConfig = field(default_factory=TrainingConfig)
    hidden_dim: int = 100
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    jobs: int = 1
    # FedPer: number of trailing layers kept on the client (0 or 1).
    fedper_personal_layers: int = 1
    # Per-FedAvg: inner (adaptation) step and outer (meta) step; beta=None uses the SGD rate.
    perfedavg_alpha: float = 0.01
    perfedavg_beta: float | None = None
    personalization_steps: int = 5
    # pFedMe: eta=None moves the local copy with the SGD rate.
    pfedme_lambda: float = 15.0
    pfedme_inner_steps: int = 5
    pfedme_inner_lr: float = 0.05
    pfedme_mix_beta: float = 1.0
    pfedme_eta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if self.rounds < 0:
            raise InvalidSpec("rounds must be >= 0")
        if self.jobs < 1:
            raise InvalidSpec("jobs must be >= 1")

    def validate(self) -> None:
        """Method-specific checks, run when the method starts."""
        m = self.method
        if m is Method.FEDPER and self.fedper_personal_layers not in (0, 1):
            raise InvalidSpec("fedper_personal_layers must be 0 or 1")
        if m is Method.PERFEDAVG:
            if not self.perfedavg_alpha >= 0 or not self.outer_step > 0:
                raise InvalidSpec("Per-FedAvg needs alpha >= 0 and beta > 0")
            if self.personalization_steps < 0:
                raise InvalidSpec("personalization_steps must be >= 0")
        if m is Method.PFEDME:
            if not self.pfedme_lambda > 0:
                raise InvalidSpec("pFedMe needs lambda > 0")
            if self.pfedme_inner_steps < 1 or not self.pfedme_inner_lr > 0:
                raise InvalidSpec("pFedMe needs inner_steps >= 1 and inner_lr > 0")
            if not 0 < self.pfedme_mix_beta <= 1:
                raise InvalidSpec("pfedme_mix_beta must lie in (0, 1]")
            if not self.pfedme_step > 0:
                raise InvalidSpec("pfedme_eta must be > 0")

    @property
    def outer_step(self) -> float:
        return self.training.learning_rate if self.perfedavg_beta is None else self.perfedavg_beta

    @property
    def pfedme_step(self) -> float:
        return self.training.learning_rate if self.pfedme_eta is None else self.pfedme_eta

    @property
    def seed(self) -> int:
        return self.training.seed


@dataclass(frozen=True)
class Client:
    index: int
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    degenerate: bool = False

    @property
    def n_train(self) -> int:
        return len(self.y_train)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.X_train, self.y_train, self.X_test, self.y_test):
            h.update(a.tobytes())
        return h.hexdigest()


@dataclass
class FedTrace:
    """Bookkeeping a run fills in; used to assert the simulation assumptions."""
    participation: int = 0
    rounds: int = 0
    digests_before: list[str] = field(default_factory=list)
    digests_after: list[str] = field(default_factory=list)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.flags.writeable = False
    return a


def build_clients(dataset: Dataset, manifest: PartitionManifest, seed: int,
                  fractions=(0.6, 0.2, 0.2)) -> list[Client]:
    clients = []
    for i in range(manifest.num_clients):
        cd = slice_client(manifest, i, fractions, seed)
        if len(cd.train) == 0 or len(cd.test) == 0:
            raise EmptyClient(f"client {i} has {len(cd.train)} train and {len(cd.test)} test samples")
        X, y = dataset.features, dataset.labels
        clients.append(Client(i, _frozen(X[cd.train]), _frozen(y[cd.train]),
                              _frozen(X[cd.test]), _frozen(y[cd.test]), cd.degenerate))
    return clients


def _arch(clients: Sequence[Client], num_classes: int, config: FedConfig) -> MlpArch:
    return MlpArch(clients[0].X_train.shape[1], config.hidden_dim, num_classes)


def initial_params(arch: MlpArch, seed: int) -> ModelParams:
    return nnet.init_params(arch, make_rng(seed, STAGE_INIT))


def _pmap(fn: Callable, items, jobs: int) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _shuffle_rng(config: FedConfig, rnd: int, client: int) -> np.random.Generator:
    return make_rng(config.seed, STAGE_SHUFFLE, rnd, client)


def _begin(trace: FedTrace | None, clients) -> None:
    if trace is not None:
        trace.digests_before = [c.digest() for c in clients]


def _end(trace: FedTrace | None, clients, rounds: int) -> None:
    if trace is not None:
        trace.digests_after = [c.digest() for c in clients]
        trace.rounds = rounds
        assert trace.participation == len(clients) * rounds, "a client skipped a round"
        assert trace.digests_before == trace.digests_after, "client data changed during training"


def _count(trace: FedTrace | None, n: int) -> None:
    if trace is not None:
        trace.participation += n


def _accuracies(models: Sequence[ModelParams], clients: Sequence[Client]) -> np.ndarray:
    return np.array([nnet.accuracy(m, c.X_test, c.y_test) for m, c in zip(models, clients)])


def _aggregate(updates: Sequence[ModelParams], clients: Sequence[Client]) -> ModelParams:
    # weights are train-split sizes
    return nnet.average_params([(u, c.n_train) for u, c in zip(updates, clients)])


# -- per-method loops over prepared clients ------------------------------------

def local_models(clients, num_classes, config: FedConfig, trace=None) -> list[ModelParams]:
    arch = _arch(clients, num_classes, config)
    w0 = initial_params(arch, config.seed)
    _begin(trace, clients)

    def train(c: Client) -> ModelParams:
        w = w0
        for r in range(config.rounds):
            w = nnet.sgd_epochs(w, c.X_train, c.y_train, config.training, _shuffle_rng(config, r, c.index))
        return w

    models = _pmap(train, clients, config.jobs)
    _count(trace, len(clients) * config.rounds)
    _end(trace, clients, config.rounds)
    return models


def fedavg_model(clients, num_classes, config: FedConfig, trace=None, personal_layers: int = 0):
    """FedAvg, or FedPer when ``personal_layers == 1``.

    Returns the final shared parameters and each client's evaluation model.
    """
    arch = _arch(clients, num_classes, config)
    w = initial_params(arch, config.seed)
    split = arch.base_size
    heads = [w.flat[split:]] * len(clients)
    _begin(trace, clients)
    for r in range(config.rounds):
        def update(c: Client) -> ModelParams:
            start = w if not personal_layers else w.replace(np.concatenate([w.flat[:split], heads[c.index]]))
            return nnet.sgd_epochs(start, c.X_train, c.y_train, config.training, _shuffle_rng(config, r, c.index))

        updates = _pmap(update, clients, config.jobs)
        _count(trace, len(clients))
        w = _aggregate(updates, clients)
        if personal_layers:
            heads = [u.flat[split:] for u in updates]
    _end(trace, clients, config.rounds)
    if personal_layers:
        models = [w.replace(np.concatenate([w.flat[:split], h])) for h in heads]
    else:
        models = [w] * len(clients)
    return w, models


def perfedavg_models(clients, num_classes, config: FedConfig, trace=None):
    """First-order Per-FedAvg: meta-train a shared start, then adapt per client."""
    arch = _arch(clients, num_classes, config)
    w = initial_params(arch, config.seed)
    alpha, beta = config.perfedavg_alpha, config.outer_step
    _begin(trace, clients)
    for r in range(config.rounds):
        def update(c: Client) -> ModelParams:
            rng = _shuffle_rng(config, r, c.index)
            x = w.flat.copy()
            for _ in range(config.training.local_epochs):
                bs = nnet.batches(c.n_train, config.training.batch_size, rng)
                for j, outer in enumerate(bs):
                    inner = bs[(j + 1) % len(bs)]
                    g_in = nnet.backward(arch_params(x, arch), c.X_train[inner], c.y_train[inner])
                    adapted = x - alpha * g_in
                    x = x - beta * nnet.backward(arch_params(adapted, arch), c.X_train[outer], c.y_train[outer])
            return arch_params(x, arch)

        updates = _pmap(update, clients, config.jobs)
        _count(trace, len(clients))
        w = _aggregate(updates, clients)
    _end(trace, clients, config.rounds)
    return w, [adapt(w, c, config) for c in clients]


def adapt(w: ModelParams, c: Client, config: FedConfig) -> ModelParams:
    """``personalization_steps`` SGD steps of size alpha from the meta-model."""
    steps = config.personalization_steps
    if steps == 0:
        return w
    rng = make_rng(config.seed, STAGE_PERSONALIZE, c.index)
    x = w.flat.copy()
    done = 0
    while done < steps:
        for b in nnet.batches(c.n_train, config.training.batch_size, rng):
            x -= config.perfedavg_alpha * nnet.backward(w.replace(x), c.X_train[b], c.y_train[b])
            done += 1
            if done == steps:
                break
    return w.replace(x)


def arch_params(x: np.ndarray, arch: MlpArch) -> ModelParams:
    return ModelParams(x, arch)


def prox_objective(theta: ModelParams, anchor: np.ndarray, X, y, lam: float) -> float:
    d = theta.flat - anchor
    return nnet.loss(theta, X, y) + 0.5 * lam * float(d @ d)


def pfedme_inner_solve(anchor: ModelParams, X, y, lam: float, steps: int, lr: float,
                       trace: list[float] | None = None, start: ModelParams | None = None) -> ModelParams:
    """Approximate argmin_theta loss(theta) + lam/2 |theta - anchor|^2 on one batch.

    Each step is a gradient step on the loss with the quadratic term handled
    in closed form, which stays stable for any lam. A step that would raise
    the objective is halved until it does not, so the objective never
    increases across the loop. ``start`` warm-starts theta (default: the anchor).
    """
    a = anchor.flat
    theta = anchor if start is None else start
    obj = prox_objective(theta, a, X, y, lam)
    if trace is not None:
        trace.append(obj)
    for _ in range(steps):
        g = nnet.backward(theta, X, y)
        step = lr
        for _ in range(30):
            cand = theta.replace((theta.flat - step * g + step * lam * a) / (1.0 + step * lam))
            c_obj = prox_objective(cand, a, X, y, lam)
            if c_obj <= obj:
                theta, obj = cand, c_obj
                break
            step *= 0.5
        if trace is not None:
            trace.append(obj)
    return theta


def pfedme_models(clients, num_classes, config: FedConfig, trace=None):
    """Simplified pFedMe; returns the global model and each client's personal model."""
    arch = _arch(clients, num_classes, config)
    w = initial_params(arch, config.seed)
    lam, eta = config.pfedme_lambda, config.pfedme_step
    personal = [w] * len(clients)
    _begin(trace, clients)
    for r in range(config.rounds):
        def update(c: Client):
            rng = _shuffle_rng(config, r, c.index)
            local = w
            theta = w
            for _ in range(config.training.local_epochs):
                for b in nnet.batches(c.n_train, config.training.batch_size, rng):
                    theta = pfedme_inner_solve(local, c.X_train[b], c.y_train[b], lam,
                                               config.pfedme_inner_steps, config.pfedme_inner_lr)
                    local = local.replace(local.flat - eta * lam * (local.flat - theta.flat))
            return local, theta

        results = _pmap(update, clients, config.jobs)
        _count(trace, len(clients))
        avg = _aggregate([loc for loc, _ in results], clients)
        beta = config.pfedme_mix_beta
        w = avg if beta == 1.0 else w.replace((1.0 - beta) * w.flat + beta * avg.flat)
        personal = [theta for _, theta in results]
    _end(trace, clients, config.rounds)
    if config.personalization_steps > 0:
        personal = _pmap(lambda c: pfedme_personalize(w, c, config), clients, config.jobs)
    return w, personal


def pfedme_personalize(w: ModelParams, c: Client, config: FedConfig) -> ModelParams:
    """Final personal model: the proximal problem anchored at the trained global
    model, warm-started across ``personalization_steps`` batches of the client's data."""
    rng = make_rng(config.seed, STAGE_PERSONALIZE, c.index)
    theta, done = w, 0
    while done < config.personalization_steps:
        for b in nnet.batches(c.n_train, config.training.batch_size, rng):
            theta = pfedme_inner_solve(w, c.X_train[b], c.y_train[b], config.pfedme_lambda,
                                       config.pfedme_inner_steps, config.pfedme_inner_lr, start=theta)
            done += 1
            if done == config.personalization_steps:
                break
    return theta


# -- public entry points --------------------------------------------------------

def _prepare(dataset, manifest, config):
    config.validate()
    return build_clients(dataset, manifest, config.seed, config.fractions)


def run_local(dataset: Dataset, manifest: PartitionManifest, config: FedConfig, trace=None) -> np.ndarray:
    clients = _prepare(dataset, manifest, config)
    return _accuracies(local_models(clients, dataset.num_classes, config, trace), clients)


def run_fedavg(dataset: Dataset, manifest: PartitionManifest, config: FedConfig, trace=None):
    clients = _prepare(dataset, manifest, config)
    w, models = fedavg_model(clients, dataset.num_classes, config, trace)
    return w, _accuracies(models, clients)


def run_fedper(dataset: Dataset, manifest: PartitionManifest, config: FedConfig, trace=None) -> np.ndarray:
    clients = _prepare(dataset, manifest, replace(config, method=Method.FEDPER))
    _, models = fedavg_model(clients, dataset.num_classes, config, trace, config.fedper_personal_layers)
    return _accuracies(models, clients)


def run_perfedavg(dataset: Dataset, manifest: PartitionManifest, config: FedConfig, trace=None) -> np.ndarray:
    clients = _prepare(dataset, manifest, replace(config, method=Method.PERFEDAVG))
    _, models = perfedavg_models(clients, dataset.num_classes, config, trace)
    return _accuracies(models, clients)


def run_pfedme(dataset: Dataset, manifest: PartitionManifest, config: FedConfig, trace=None) -> np.ndarray:
    clients = _prepare(dataset, manifest, replace(config, method=Method.PFEDME))
    _, models = pfedme_models(clients, dataset.num_classes, config, trace)
    return _accuracies(models, clients)


def _models_for(method: Method, clients, num_classes, config, trace):
    if method is Method.LOCAL:
        return local_models(clients, num_classes, config, trace)
    if method is Method.FEDAVG:
        return fedavg_model(clients, num_classes, config, trace)[1]
    if method is Method.FEDPER:
        return fedavg_model(clients, num_classes, config, trace, config.fedper_personal_layers)[1]
    if method is Method.PERFEDAVG:
        return perfedavg_models(clients, num_classes, config, trace)[1]
    return pfedme_models(clients, num_classes, config, trace)[1]


def run_suite(dataset: Dataset, manifest: PartitionManifest, configs: Sequence[FedConfig],
              split_id: str = "", slice_seed: int | None = None) -> AccuracyTable:
    """Local, FedAvg and every requested method on shared client slices.

    Local and FedAvg always run (they are the baselines every QoI needs); if
    the caller did not configure them, they reuse the first config's settings.
    """
    if not configs:
        raise InvalidSpec("no methods requested")
    by_method: dict[Method, FedConfig] = {}
    for cfg in configs:
        if cfg.method in by_method:
            raise InvalidSpec(f"method {cfg.method.value} requested twice")
        cfg.validate()
        by_method[cfg.method] = cfg
    first = configs[0]
    for base in (Method.FEDAVG, Method.LOCAL):
        if base not in by_method:
            by_method = {base: replace(first, method=base), **by_method}
    order = [Method.LOCAL, Method.FEDAVG] + [c.method for c in configs if c.method not in (Method.LOCAL, Method.FEDAVG)]

    seed = first.seed if slice_seed is None else slice_seed
    clients = build_clients(dataset, manifest, seed, first.fractions)
    table = AccuracyTable([f"User {c.index}" for c in clients], {}, split_id)
    for m in order:
        models = _models_for(m, clients, dataset.num_classes, by_method[m], None)
        table.add(m.column, _accuracies(models, clients))
    return table
