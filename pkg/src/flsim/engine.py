"""Synchronous federated training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .adversary import AttackSpec, apply_attack
from .aggregation import Aggregator
from .config import ExperimentConfig
from .data import (
    Dataset,
    generate_synthetic,
    load_idx,
    next_batch,
    partition_iid,
    partition_label_skew,
)
from .errors import ConfigError, FLSimError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    eval_accuracy: float | None = None
    aggregation_wall_time_ns: int = 0
    factors: dict | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy,
            "aggregation_wall_time_ns": self.aggregation_wall_time_ns,
            "factors": self.factors,
        }


@dataclass
class MetricsLog:
    config: dict
    records: list[RoundRecord] = field(default_factory=list)
    final_checksum: str = ""

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "final_checksum": self.final_checksum,
        }
        return json.dumps(payload, indent=1, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsLog:
        payload = json.loads(text)
        return cls(
            payload["config"],
            [RoundRecord(**r) for r in payload["records"]],
            payload["final_checksum"],
        )

    def to_csv(self, timing: bool = False) -> str:
        lines = ["round,train_loss,eval_accuracy,agg_time_ns"]
        for r in self.records:
            acc = "" if r.eval_accuracy is None else repr(float(r.eval_accuracy))
            agg = str(r.aggregation_wall_time_ns) if timing else ""
            lines.append(f"{r.round},{float(r.train_loss)!r},{acc},{agg}")
        return "\n".join(lines) + "\n"

    def accuracies(self) -> list[tuple[int, float]]:
        return [(r.round, r.eval_accuracy) for r in self.records if r.eval_accuracy is not None]

    @property
    def final_accuracy(self) -> float | None:
        acc = self.accuracies()
        return acc[-1][1] if acc else None

    def without_timing(self) -> MetricsLog:
        records = [
            RoundRecord(r.round, r.train_loss, r.eval_accuracy, 0, r.factors) for r in self.records
        ]
        return MetricsLog(self.config, records, self.final_checksum)


def params_checksum(params: nn.LayeredVector) -> str:
    return hashlib.sha256(params.values.tobytes()).hexdigest()


def evaluate(spec: nn.ModelSpec, params: nn.LayeredVector, test_set: Dataset) -> float:
    return nn.evaluate(spec, params, test_set.features, test_set.labels)


def thread_count() -> int:
    raw = os.environ.get("FLSIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FLSIM_THREADS must be an integer, got {raw!r}") from None


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, held-out test) datasets for a config."""
    d = cfg.data
    if d.source == "synthetic":
        full = generate_synthetic(
            d.num_classes, d.dims, d.samples_per_class, d.separation, [cfg.seed, 3]
        )
    else:
        full = load_idx(d.idx_images, d.idx_labels, d.num_classes)
    return full.split(d.test_fraction, [cfg.seed, 5])


@dataclass
class TrainingState:
    config: ExperimentConfig
    spec: nn.ModelSpec
    train: Dataset
    test: Dataset
    partitions: list
    params: nn.LayeredVector
    optimizer: nn.OptimizerState
    aggregator: Aggregator
    attack: AttackSpec
    worker_rngs: list[np.random.Generator]
    round: int = 0
    threads: int = 1


def build_state(cfg: ExperimentConfig, threads: int | None = None) -> TrainingState:
    cfg.validate()
    train, test = load_datasets(cfg)
    spec = nn.ModelSpec(
        (train.dims, *cfg.model.hidden, train.num_classes), cfg.model.activation
    )
    if cfg.data.partition == "iid":
        parts = partition_iid(train, cfg.workers, cfg.data.per_worker, [cfg.seed, 4])
    else:
        parts = partition_label_skew(train, cfg.workers, cfg.data.per_worker, [cfg.seed, 4])
    attack = AttackSpec(
        cfg.attack.kind,
        frozenset(cfg.attack.byzantine_ids),
        cfg.attack.mu,
        cfg.attack.sigma,
        cfg.attack.epsilon,
    )
    attack.validate(cfg.workers)
    agg_cfg = cfg.aggregator
    aggregator = Aggregator(
        agg_cfg.kind, agg_cfg.f, agg_cfg.multi_k, agg_cfg.log_size, agg_cfg.scheme
    )
    if agg_cfg.kind in ("krum", "multikrum"):
        k = cfg.workers - agg_cfg.f - 2
        if k < 1:
            raise ConfigError(f"Krum requires n - f - 2 >= 1, got n={cfg.workers}, f={agg_cfg.f}")
        if agg_cfg.kind == "multikrum" and agg_cfg.multi_k > k:
            raise ConfigError(f"aggregator.multi_k={agg_cfg.multi_k} exceeds n - f - 2 = {k}")
    params = nn.init_params(spec, np.random.default_rng([cfg.seed, 0]))
    opt = nn.OptimizerState.create(
        cfg.optimizer.kind,
        params.layout,
        cfg.optimizer.learning_rate,
        cfg.optimizer.rho,
        cfg.optimizer.epsilon,
    )
    rngs = [np.random.default_rng([cfg.seed, 1, w]) for w in range(cfg.workers)]
    return TrainingState(
        cfg, spec, train, test, parts, params, opt, aggregator, attack, rngs,
        threads=thread_count() if threads is None else threads,
    )


def _worker_gradient(state: TrainingState, w: int):
    batch = next_batch(state.train, state.partitions[w], state.config.train.batch_size,
                       state.worker_rngs[w])
    return nn.loss_and_gradient(state.spec, state.params, batch)


def run_round(state: TrainingState) -> RoundRecord:
    """One synchronous round; mutates ``state`` and returns its record."""
    t = state.round + 1
    cfg = state.config
    honest = [w for w in range(cfg.workers) if w not in state.attack.byzantine_ids]
    try:
        if state.threads > 1 and len(honest) > 1:
            with ThreadPoolExecutor(min(state.threads, len(honest))) as pool:
                results = list(pool.map(lambda w: _worker_gradient(state, w), honest))
        else:
            results = [_worker_gradient(state, w) for w in honest]
    except NumericalError as exc:
        raise NumericalError(str(exc), round_index=t) from None
    replies = apply_attack(
        state.attack,
        {w: g for w, (_, g) in zip(honest, results)},
        seed=cfg.seed,
        round_index=t,
        num_workers=cfg.workers,
    )
    grads = [replies[w] for w in range(cfg.workers)]
    try:
        start = time.perf_counter_ns()
        aggregated = state.aggregator(grads, round_id=t)
        elapsed = time.perf_counter_ns() - start
        state.params, state.optimizer = nn.optimizer_step(state.optimizer, state.params, aggregated)
    except NumericalError as exc:
        raise NumericalError(str(exc), round_index=t) from None
    except FLSimError as exc:
        raise type(exc)(f"round {t}: {exc}") from None
    state.round = t
    accuracy = None
    # the last round is always evaluated so every run has a final accuracy
    if t % cfg.train.eval_every == 0 or t == cfg.train.max_rounds:
        accuracy = evaluate(state.spec, state.params, state.test)
    factors = state.aggregator.last_factors
    return RoundRecord(
        t,
        float(np.mean([loss for loss, _ in results])),
        accuracy,
        elapsed,
        factors.as_dict() if factors is not None else None,
    )


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> MetricsLog:
    state = build_state(cfg, threads)
    metrics = MetricsLog(cfg.to_flat())
    for _ in range(cfg.train.max_rounds):
        record = run_round(state)
        metrics.records.append(record)
        if record.eval_accuracy is not None:
            log.debug("round %d accuracy %.4f", record.round, record.eval_accuracy)
    metrics.final_checksum = params_checksum(state.params)
    return metrics
