"""Byzantine reply generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, FLSimError
from .nn import LayeredVector

ATTACK_KINDS = ("none", "gaussian", "fall_of_empires")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    byzantine_ids: frozenset[int] = field(default_factory=frozenset)
    mu: float = 0.0
    sigma: float = 0.0
    epsilon: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "byzantine_ids", frozenset(int(i) for i in self.byzantine_ids))
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.kind == "none" and self.byzantine_ids:
            raise ConfigError("attack kind 'none' cannot have Byzantine workers")

    def validate(self, num_workers: int) -> None:
        bad = [i for i in self.byzantine_ids if not 0 <= i < num_workers]
        if bad:
            raise ConfigError(f"Byzantine ids {sorted(bad)} outside 0..{num_workers - 1}")
        if len(self.byzantine_ids) >= num_workers:
            raise ConfigError("at least one worker must be honest")


def gaussian_reply(
    template: LayeredVector, mu: float, sigma: float, rng: np.random.Generator
) -> LayeredVector:
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if sigma == 0:
        return LayeredVector(template.layout, np.full(template.dim, float(mu)))
    return LayeredVector(template.layout, rng.normal(mu, sigma, size=template.dim))


def fall_of_empires_replies(
    honest_grads: Sequence[LayeredVector], num_byzantine: int, epsilon: float
) -> list[LayeredVector]:
    """Identical crafted replies ``-(epsilon / h) * sum(honest)``."""
    h = len(honest_grads)
    if h == 0:
        raise ConfigError("Fall of Empires needs at least one honest reply")
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    total = honest_grads[0].values.copy()
    for g in honest_grads[1:]:
        total += g.values
    reply = LayeredVector(honest_grads[0].layout, -(epsilon / h) * total)
    return [reply] * num_byzantine


def attack_rng(seed: int, worker_id: int, round_index: int) -> np.random.Generator:
    """Independent stream per (seed, worker, round), immune to evaluation order."""
    return np.random.default_rng([seed, 2, worker_id, round_index])


def apply_attack(
    spec: AttackSpec,
    honest_replies: Mapping[int, LayeredVector],
    seed: int = 0,
    round_index: int = 0,
    num_workers: int | None = None,
) -> dict[int, LayeredVector]:
    """Full reply map with every Byzantine worker's reply substituted.

    ``honest_replies`` must cover every non-Byzantine worker; entries for
    Byzantine workers, if present, are discarded.
    """
    if spec.kind == "none" or not spec.byzantine_ids:
        return dict(honest_replies)
    honest_ids = sorted(i for i in honest_replies if i not in spec.byzantine_ids)
    if not honest_ids:
        raise FLSimError("no honest replies available for this round")
    if num_workers is None:
        num_workers = max(max(honest_replies), max(spec.byzantine_ids)) + 1
    expected = set(range(num_workers))
    missing = expected - set(honest_ids) - spec.byzantine_ids
    if missing:
        raise FLSimError(f"missing honest replies from workers {sorted(missing)}")
    out = {i: honest_replies[i] for i in honest_ids}
    byz = sorted(spec.byzantine_ids)
    if spec.kind == "gaussian":
        template = honest_replies[honest_ids[0]]
        for b in byz:
            out[b] = gaussian_reply(template, spec.mu, spec.sigma, attack_rng(seed, b, round_index))
    else:
        crafted = fall_of_empires_replies([out[i] for i in honest_ids], len(byz), spec.epsilon)
        out.update(zip(byz, crafted))
    return dict(sorted(out.items()))
