"""Gradient aggregation: mean, coordinate median, Krum, multi-Krum and LEGATO."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientHistory, UsageError
from .nn import Layout, LayeredVector

STD_FLOOR = 1e-12


def _as_matrix(grads: Sequence[LayeredVector]) -> tuple[Layout, np.ndarray]:
    if len(grads) == 0:
        raise UsageError("cannot aggregate an empty list of gradients")
    layout = grads[0].layout
    for g in grads[1:]:
        if g.layout != layout:
            raise ConfigError("gradients have differing structure")
    return layout, np.stack([g.values for g in grads])


def _running_mean(x: np.ndarray) -> np.ndarray:
    # incremental form returns identical rows bit-exactly
    out = x[0].copy()
    for k in range(1, x.shape[0]):
        out += (x[k] - out) / (k + 1)
    return out


def aggregate_mean(grads: Sequence[LayeredVector]) -> LayeredVector:
    layout, x = _as_matrix(grads)
    return LayeredVector(layout, _running_mean(x))


def aggregate_coordinate_median(grads: Sequence[LayeredVector]) -> LayeredVector:
    layout, x = _as_matrix(grads)
    return LayeredVector(layout, np.median(x, axis=0))


# ---------------------------------------------------------------------------- Krum


@dataclass(frozen=True)
class KrumConfig:
    byzantine_bound: int = 0
    multi_k: int = 1
    # lets multi_k exceed n - f - 2, e.g. multi_k == n to recover the plain mean
    allow_any_k: bool = False

    def __post_init__(self):
        if self.byzantine_bound < 0:
            raise ConfigError("Krum byzantine_bound must be non-negative")
        if self.multi_k < 1:
            raise ConfigError("multi_k must be positive")


def _krum_neighbours(n: int, f: int) -> int:
    k = n - f - 2
    if k < 1:
        raise ConfigError(f"Krum requires n - f - 2 >= 1, got n={n}, f={f}")
    return k


def _krum_scores_matrix(x: np.ndarray, f: int) -> np.ndarray:
    n = x.shape[0]
    k = _krum_neighbours(n, f)
    scores = np.empty(n)
    for i in range(n):
        diff = x - x[i]
        dist = np.sort(np.delete((diff * diff).sum(axis=1), i))
        scores[i] = dist[:k].sum()
    return scores


def krum_scores(grads: Sequence[LayeredVector], f: int) -> np.ndarray:
    """Sum of squared distances from each gradient to its n - f - 2 nearest others."""
    _, x = _as_matrix(grads)
    return _krum_scores_matrix(x, f)


def _krum_ranking(scores: np.ndarray) -> np.ndarray:
    # stable sort keeps the lowest worker index first among ties
    return np.argsort(scores, kind="stable")


def aggregate_krum(grads: Sequence[LayeredVector], cfg: KrumConfig) -> LayeredVector:
    scores = krum_scores(grads, cfg.byzantine_bound)
    return grads[int(_krum_ranking(scores)[0])]


def aggregate_multikrum(grads: Sequence[LayeredVector], cfg: KrumConfig) -> LayeredVector:
    layout, x = _as_matrix(grads)
    n = x.shape[0]
    limit = n if cfg.allow_any_k else _krum_neighbours(n, cfg.byzantine_bound)
    if cfg.multi_k > limit:
        raise ConfigError(f"multi_k={cfg.multi_k} exceeds the allowed {limit} (n={n})")
    scores = _krum_scores_matrix(x, cfg.byzantine_bound)
    chosen = np.sort(_krum_ranking(scores)[: cfg.multi_k])
    return LayeredVector(layout, _running_mean(x[chosen]))


# -------------------------------------------------------------------------- LEGATO


def _profile(layout: Layout, x: np.ndarray) -> np.ndarray:
    """Per-layer normalized l2 norms of one round, ``x`` shaped ``(n, d)``."""
    denom = np.sqrt(np.einsum("ij,ij->i", x, x)).sum()
    out = np.zeros(len(layout))
    if denom == 0:
        return out
    for l, sl in enumerate(layout.slices):
        block = x[:, sl]
        out[l] = np.sqrt(np.einsum("ij,ij->", block, block)) / denom
    return out


def layer_norm_profile(round_grads: Sequence[LayeredVector]) -> np.ndarray:
    """Frobenius norm of each layer across workers over the summed worker norms."""
    layout, x = _as_matrix(round_grads)
    return _profile(layout, x)


class GradientLog:
    """Ring buffer of the ``capacity`` most recent rounds of all workers' gradients.

    Each round is stored as an ``(n, d)`` array together with its layer profile,
    so a full log holds exactly ``n * capacity * d`` gradient values.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("gradient log capacity must be at least 1")
        self.capacity = capacity
        self.layout: Layout | None = None
        self.num_workers: int | None = None
        self._rounds: list[np.ndarray] = []
        self._profiles: list[np.ndarray] = []
        self._means: list[np.ndarray] = []
        self.round_ids: list[int] = []

    def __len__(self):
        return len(self._rounds)

    def push(self, round_grads: Sequence[LayeredVector], round_id: int | None = None) -> None:
        layout, x = _as_matrix(round_grads)
        if self.layout is None:
            self.layout, self.num_workers = layout, x.shape[0]
        elif layout != self.layout or x.shape[0] != self.num_workers:
            raise ConfigError(
                f"round structure ({x.shape[0]} workers) does not match the log "
                f"({self.num_workers} workers)"
            )
        if round_id is None:
            round_id = self.round_ids[-1] + 1 if self.round_ids else 1
        if self.round_ids and round_id <= self.round_ids[-1]:
            raise ConfigError(f"round id {round_id} is not after {self.round_ids[-1]}")
        self._rounds.append(x)
        self._profiles.append(_profile(layout, x))
        self._means.append(_running_mean(x))
        self.round_ids.append(round_id)
        if len(self._rounds) > self.capacity:
            del self._rounds[0], self._profiles[0], self._means[0], self.round_ids[0]

    @property
    def rounds(self) -> list[list[LayeredVector]]:
        """Logged rounds, oldest first."""
        return [[LayeredVector(self.layout, row) for row in x] for x in self._rounds]

    def matrices(self) -> list[np.ndarray]:
        return list(self._rounds)

    def worker_means(self) -> list[np.ndarray]:
        """Per-round mean over workers, oldest first."""
        return list(self._means)

    def profiles(self) -> np.ndarray:
        """``(rounds, layers)`` array of per-round layer profiles."""
        return np.array(self._profiles)

    @property
    def stored_values(self) -> int:
        return sum(x.size for x in self._rounds)


def update_gradient_log(log: GradientLog, round_grads, round_id=None) -> GradientLog:
    log.push(round_grads, round_id)
    return log


@dataclass(frozen=True, eq=False)
class RobustnessFactors:
    layer_names: tuple[str, ...]
    per_layer_profiles: np.ndarray  # (logged rounds, layers)
    weights: np.ndarray
    scheme: str = "sum"

    def as_dict(self) -> dict:
        return {
            "layers": list(self.layer_names),
            "weights": [float(w) for w in self.weights],
            "profiles": [[float(v) for v in row] for row in self.per_layer_profiles],
            "scheme": self.scheme,
        }


def _normalize(raw: np.ndarray, scheme: str) -> np.ndarray:
    if scheme == "sum":
        return raw / raw.sum()
    if scheme == "max":
        return raw / raw.max()
    raise ConfigError(f"unknown normalization scheme {scheme!r}")


def robustness_factors(log: GradientLog, scheme: str = "sum") -> RobustnessFactors:
    if len(log) < 2:
        raise InsufficientHistory(f"need at least 2 logged rounds, have {len(log)}")
    profiles = log.profiles()
    raw = 1.0 / np.maximum(profiles.std(axis=0), STD_FLOOR)
    return RobustnessFactors(log.layout.names, profiles, _normalize(raw, scheme), scheme)


def _reweigh(log: GradientLog, weights: np.ndarray) -> np.ndarray:
    """``(n, d)`` reweighed gradients for the newest logged round."""
    if len(log) < 2:
        raise InsufficientHistory(f"need at least 2 logged rounds, have {len(log)}")
    rounds = log.matrices()
    current = rounds[-1]
    past = _past_mean(rounds[:-1])
    w = np.repeat(weights, log.layout.sizes)
    return w * current + (1.0 - w) * past


def _past_mean(rows: list[np.ndarray]) -> np.ndarray:
    past = rows[0].copy()
    for x in rows[1:]:
        past += x
    past /= len(rows)
    return past


def legato_reweigh(log: GradientLog, factors: RobustnessFactors) -> list[LayeredVector]:
    """Blend each worker's newest gradient with the mean of its older logged ones."""
    return [LayeredVector(log.layout, row) for row in _reweigh(log, factors.weights)]


def legato_step(
    log: GradientLog, current_round_grads: Sequence[LayeredVector], scheme: str = "sum",
    round_id: int | None = None,
) -> tuple[LayeredVector, RobustnessFactors | None]:
    """Log the round, then aggregate; factors are ``None`` during cold start."""
    log.push(current_round_grads, round_id)
    if len(log) < 2:
        return aggregate_mean(current_round_grads), None
    factors = robustness_factors(log, scheme)
    # the worker mean commutes with the per-layer blend, so only the cached
    # per-round means are touched: O(dn) for the new round plus O(dm)
    means = log.worker_means()
    w = np.repeat(factors.weights, log.layout.sizes)
    out = w * means[-1] + (1.0 - w) * _past_mean(means[:-1])
    return LayeredVector(log.layout, out), factors


def aggregate_legato(
    log: GradientLog, current_round_grads: Sequence[LayeredVector], scheme: str = "sum"
) -> LayeredVector:
    return legato_step(log, current_round_grads, scheme)[0]


# ---------------------------------------------------------------- engine adapters


@dataclass
class Aggregator:
    """Stateful callable used by the engine; owns the LEGATO log when needed."""

    kind: str = "mean"
    byzantine_bound: int = 0
    multi_k: int = 1
    log_size: int = 10
    scheme: str = "sum"
    log: GradientLog | None = field(default=None, repr=False)
    last_factors: RobustnessFactors | None = field(default=None, repr=False)

    KINDS = ("mean", "median", "krum", "multikrum", "legato")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown aggregator {self.kind!r}; expected one of {self.KINDS}")
        if self.scheme not in ("sum", "max"):
            raise ConfigError(f"unknown normalization scheme {self.scheme!r}")
        if self.kind == "legato" and self.log is None:
            self.log = GradientLog(self.log_size)

    def __call__(self, grads: Sequence[LayeredVector], round_id: int | None = None) -> LayeredVector:
        self.last_factors = None
        if self.kind == "mean":
            return aggregate_mean(grads)
        if self.kind == "median":
            return aggregate_coordinate_median(grads)
        cfg = KrumConfig(self.byzantine_bound, self.multi_k)
        if self.kind == "krum":
            return aggregate_krum(grads, cfg)
        if self.kind == "multikrum":
            return aggregate_multikrum(grads, cfg)
        out, self.last_factors = legato_step(self.log, grads, self.scheme, round_id)
        return out
