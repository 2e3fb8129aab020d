"""Per-job records, aggregate metrics and the replication stopping rule."""
from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

OVER = "over"
UNDER = "under"

MIN_RUNS = 30
CONFIDENCE = 0.95
REL_WIDTH = 0.05


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class JobRecord:
    id: int
    arrival_time: float
    true_size: float
    est_size: float
    completion_time: Optional[float]
    #: Engine-measured sojourn; more accurate than the difference of two
    #: absolute times for jobs much smaller than the clock's resolution.
    exact_sojourn: Optional[float] = None

    @property
    def sojourn(self) -> float:
        if self.exact_sojourn is not None:
            return self.exact_sojourn
        return self.completion_time - self.arrival_time

    @property
    def slowdown(self) -> float:
        return self.sojourn / self.true_size

    @property
    def est_class(self) -> str:
        # X = est/true; X == 1 counts as overestimated
        return OVER if self.est_size >= self.true_size else UNDER


class Aggregate(NamedTuple):
    mst: float
    mean_slowdown: float
    mst_over: Optional[float]
    mst_under: Optional[float]


def _aggregate_arrays(sojourn, true_size, est_size) -> Aggregate:
    over = est_size >= true_size
    n_over = int(over.sum())
    n_under = over.size - n_over
    return Aggregate(
        mst=float(sojourn.mean()),
        mean_slowdown=float((sojourn / true_size).mean()),
        mst_over=float(sojourn[over].mean()) if n_over else None,
        mst_under=float(sojourn[~over].mean()) if n_under else None,
    )


def aggregate(records: Sequence[JobRecord]) -> Aggregate:
    """MST, mean slowdown and per-class MSTs (``None`` for an empty class)."""
    if not records:
        raise ContractViolation("aggregate needs at least one record")
    for r in records:
        if r.completion_time is None:
            raise ContractViolation(f"job {r.id} has not completed")
    return _aggregate_arrays(
        np.array([r.sojourn for r in records], dtype=float),
        np.array([r.true_size for r in records], dtype=float),
        np.array([r.est_size for r in records], dtype=float),
    )


@dataclass
class RunResult:
    """Outcome of one simulation run.

    Per-job data is held column-wise; :attr:`records` materialises
    :class:`JobRecord` objects on demand.
    """

    policy: str
    params: dict
    ids: np.ndarray
    arrival: np.ndarray
    true_size: np.ndarray
    est_size: np.ndarray
    completion: np.ndarray
    sojourn: np.ndarray
    mst: float
    mean_slowdown: float
    mst_over: Optional[float]
    mst_under: Optional[float]
    end_time: float = 0.0
    area: float = 0.0
    n_arrived: int = 0
    busy_time: float = 0.0
    decisions: Optional[list] = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, *, policy, params, ids, arrival, true_size, est_size, completion,
                    sojourn=None, **extra) -> "RunResult":
        if sojourn is None:
            sojourn = completion - arrival
        agg = _aggregate_arrays(sojourn, true_size, est_size)
        return cls(policy=policy, params=params, ids=ids, arrival=arrival,
                   true_size=true_size, est_size=est_size, completion=completion,
                   sojourn=sojourn, **agg._asdict(), **extra)

    @property
    def records(self) -> list[JobRecord]:
        return [JobRecord(int(i), float(a), float(s), float(e), float(c), float(w))
                for i, a, s, e, c, w in zip(self.ids, self.arrival, self.true_size,
                                            self.est_size, self.completion, self.sojourn)]

    @property
    def n_jobs(self) -> int:
        return int(self.ids.size)

    @property
    def time_avg_in_system(self) -> float:
        return self.area / self.end_time

    @property
    def arrival_rate_empirical(self) -> float:
        return self.n_arrived / self.end_time

    def class_mst(self, cls_name: str) -> Optional[float]:
        return self.mst_over if cls_name == OVER else self.mst_under


# --------------------------------------------------------------------------
# Replication

@dataclass
class ReplicationSummary:
    """Student-t confidence interval over independent replications."""

    metric: str
    values: list[float]
    seeds: list[int]
    converged: bool
    point_estimate: float
    ci_half_width: float
    rel_width: float = REL_WIDTH

    @property
    def n_runs(self) -> int:
        return len(self.values)

    @property
    def ci_width(self) -> float:
        return 2.0 * self.ci_half_width

    @property
    def seeds_digest(self) -> str:
        return seeds_digest(self.seeds)


def seeds_digest(seeds: Sequence[int]) -> str:
    text = ",".join(str(int(s)) for s in seeds)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def t_interval(values: Sequence[float], confidence: float = CONFIDENCE):
    """Point estimate and Student-t half-width."""
    x = np.asarray(values, dtype=float)
    n = x.size
    mean = float(x.mean())
    if n < 2:
        return mean, math.inf
    sd = float(x.std(ddof=1))
    return mean, float(stats.t.ppf(0.5 + confidence / 2.0, n - 1)) * sd / math.sqrt(n)


def summarize(metric: str, values, seeds, *, min_runs: int = MIN_RUNS,
              rel_width: float = REL_WIDTH, confidence: float = CONFIDENCE
              ) -> ReplicationSummary:
    mean, half = t_interval(values, confidence)
    converged = len(values) >= min_runs and 2.0 * half <= rel_width * abs(mean)
    return ReplicationSummary(metric, list(values), list(seeds), converged, mean, half,
                              rel_width)


def replicate_until_converged(run: Callable[[int], float], max_runs: int, *,
                              seed_base: int = 0, batch: int = 10,
                              min_runs: int = MIN_RUNS, rel_width: float = REL_WIDTH,
                              metric: str = "mst") -> ReplicationSummary:
    """Run ``run(seed)`` for seeds ``seed_base, seed_base+1, ...`` until the
    full 95% CI width is within ``rel_width`` of the mean (and at least
    ``min_runs`` runs were made) or ``max_runs`` is reached."""
    if max_runs < min_runs:
        raise ValueError(f"max_runs must be >= {min_runs}, got {max_runs}")
    values, seeds = [], []
    summary = None
    while len(values) < max_runs:
        n_next = min_runs if not values else min(batch, max_runs - len(values))
        for _ in range(n_next):
            seed = seed_base + len(seeds)
            seeds.append(seed)
            values.append(float(run(seed)))
        summary = summarize(metric, values, seeds, min_runs=min_runs, rel_width=rel_width)
        if summary.converged:
            return summary
    warnings.warn(f"{metric}: not converged after {max_runs} runs "
                  f"(CI width {summary.ci_width:.4g} vs mean {summary.point_estimate:.4g})",
                  RuntimeWarning, stacklevel=2)
    return summary


class Ratio(NamedTuple):
    value: float
    half_width: float


def normalize_against_baseline(target: ReplicationSummary,
                               baseline: ReplicationSummary) -> Ratio:
    """``target / baseline`` point-estimate ratio with a first-order CI
    half-width from the two (treated as independent) intervals."""
    if baseline.point_estimate == 0.0:
        raise ContractViolation("baseline estimate is zero")
    r = target.point_estimate / baseline.point_estimate
    rel = math.hypot(target.ci_half_width / target.point_estimate if target.point_estimate else 0.0,
                     baseline.ci_half_width / baseline.point_estimate)
    return Ratio(r, abs(r) * rel)


def paired_ratio(target: Sequence[float], baseline: Sequence[float],
                 confidence: float = CONFIDENCE) -> Ratio:
    """Ratio of means for paired (common-random-number) replications.

    The half-width comes from the delta method applied to the per-run
    residuals ``t_i - r * b_i``, which keeps the correlation between the two
    samples.
    """
    t = np.asarray(target, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if t.shape != b.shape or t.size == 0:
        raise ContractViolation("paired_ratio needs equal-length non-empty samples")
    b_mean = b.mean()
    if b_mean == 0.0:
        raise ContractViolation("baseline estimate is zero")
    r = float(t.mean() / b_mean)
    if t.size < 2:
        return Ratio(r, math.inf)
    resid = (t - r * b) / b_mean
    q = float(stats.t.ppf(0.5 + confidence / 2.0, t.size - 1))
    return Ratio(r, q * float(resid.std(ddof=1)) / math.sqrt(t.size))
