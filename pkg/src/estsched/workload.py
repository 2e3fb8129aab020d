"""Synthetic and trace-driven workloads.

Jobs arrive as a Poisson process with rate ``rho / E[S]``.  True sizes come
from a Weibull (or exponential) distribution or from a trace file, and each
estimate is ``true_size * X`` with ``X`` drawn from the error model.

A :class:`JobStream` owns three independent random streams (arrivals, sizes,
errors) spawned from one seed.  The i-th job therefore depends only on the
seed and ``i``: two runs with the same seed see the same arrivals and sizes
whatever the policy, and runs that differ only in ``sigma`` share arrivals,
sizes and the underlying normal draws of their errors.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .gittins import ErrorModel

log = logging.getLogger(__name__)

_CHUNK = 4096


class WorkloadError(ValueError):
    pass


class NonPositiveSample(WorkloadError):
    pass


class TraceFormatError(WorkloadError):
    pass


class WorkloadExhausted(Exception):
    """The trace has no more jobs; no further arrivals will occur."""


def weibull_scale_for_unit_mean(k: float) -> float:
    if not k > 0:
        raise ValueError(f"Weibull shape must be positive, got {k!r}")
    return 1.0 / math.gamma(1.0 + 1.0 / k)


@dataclass(frozen=True)
class SizeDistribution:
    """Weibull job sizes; ``scale=None`` normalises to unit mean."""

    family: str = "weibull"
    shape: float = 0.25
    scale: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("weibull", "exponential"):
            raise ValueError(f"unknown size family {self.family!r}")
        if not self.shape > 0:
            raise ValueError(f"shape must be positive, got {self.shape!r}")
        if self.scale is not None and not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale!r}")

    @classmethod
    def exponential(cls, mean: float = 1.0) -> "SizeDistribution":
        return cls("exponential", 1.0, mean)

    @property
    def effective_scale(self) -> float:
        if self.scale is not None:
            return self.scale
        return weibull_scale_for_unit_mean(self.shape)

    @property
    def mean(self) -> float:
        return self.effective_scale * math.gamma(1.0 + 1.0 / self.shape)

    def sample(self, rng: np.random.Generator, size=None):
        if self.family == "exponential":
            return rng.exponential(self.effective_scale, size)
        return self.effective_scale * rng.weibull(self.shape, size)


@dataclass(frozen=True)
class WorkloadSpec:
    """Where jobs come from.

    Exactly one of ``sizes`` (synthetic) or ``trace_sizes`` (loaded from a
    trace file) is set.  ``trace_path`` and ``speed`` are kept for manifests.
    """

    rho: float = 0.9
    sizes: Optional[SizeDistribution] = field(default_factory=SizeDistribution)
    error_model: ErrorModel = field(default_factory=ErrorModel)
    trace_sizes: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    trace_path: Optional[str] = None
    speed: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0,1), got {self.rho!r}")
        if (self.sizes is None) == (self.trace_sizes is None):
            raise ValueError("exactly one of sizes or trace_sizes must be given")

    @classmethod
    def synthetic(cls, k: float = 0.25, sigma: float = 0.5, rho: float = 0.9,
                  mu: float = 0.0) -> "WorkloadSpec":
        return cls(rho=rho, sizes=SizeDistribution("weibull", k),
                   error_model=ErrorModel(mu=mu, sigma=sigma))

    @classmethod
    def from_trace(cls, path, sigma: float = 0.5, rho: float = 0.9,
                   speed: Optional[float] = None, mu: float = 0.0) -> "WorkloadSpec":
        sizes, speed = _ingest(str(path), speed)
        return cls(rho=rho, sizes=None, error_model=ErrorModel(mu=mu, sigma=sigma),
                   trace_sizes=sizes, trace_path=str(path), speed=speed)

    @property
    def is_trace(self) -> bool:
        return self.trace_sizes is not None

    @property
    def mean_size(self) -> float:
        if self.trace_sizes is not None:
            return float(np.mean(self.trace_sizes))
        return self.sizes.mean

    @property
    def arrival_rate(self) -> float:
        return self.rho / self.mean_size

    def stream(self, seed: int) -> "JobStream":
        return JobStream(self, seed)

    def describe(self) -> dict:
        d = {"k": None if self.sizes is None else self.sizes.shape,
             "sigma": self.error_model.sigma, "rho": self.rho}
        if self.is_trace:
            d["trace"] = self.trace_path
            d["speed"] = self.speed
        return d

    def with_sigma(self, sigma: float) -> "WorkloadSpec":
        from dataclasses import replace
        return replace(self, error_model=ErrorModel(mu=self.error_model.mu, sigma=sigma))


class Sample(NamedTuple):
    interarrival: float
    true_size: float
    est_size: float


def _check_positive(name, values, offset=0):
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        i = int(bad[0])
        raise NonPositiveSample(f"non-positive {name} {values[i]!r} at job index {offset + i}")


def sample_job(spec: WorkloadSpec, rng: np.random.Generator, n: Optional[int] = None):
    """Independent draw(s) of ``(interarrival, true_size, est_size)`` from one generator.

    Synthetic specs only; trace specs are consumed sequentially through a
    :class:`JobStream`.  With ``n`` returns three arrays of length ``n``.
    """
    if spec.is_trace:
        raise WorkloadError("trace workloads are sequential; use JobStream")
    m = 1 if n is None else n
    gaps = rng.exponential(1.0 / spec.arrival_rate, m)
    sizes = spec.sizes.sample(rng, m)
    est = sizes * spec.error_model.sample(rng, m)
    _check_positive("true size", sizes)
    _check_positive("estimate", est)
    if n is None:
        return Sample(float(gaps[0]), float(sizes[0]), float(est[0]))
    return gaps, sizes, est


class JobStream:
    """Sequential job source for one simulation run.

    Draws are made in fixed-size chunks from three spawned generators, so the
    i-th job is identical regardless of how many jobs a run ends up consuming.
    """

    def __init__(self, spec: WorkloadSpec, seed: int):
        self.spec = spec
        self.seed = seed
        arr_ss, size_ss, err_ss = np.random.SeedSequence(seed).spawn(3)
        self._arr_rng = np.random.default_rng(arr_ss)
        self._size_rng = np.random.default_rng(size_ss)
        self._err_rng = np.random.default_rng(err_ss)
        self._mean_gap = 1.0 / spec.arrival_rate
        self._n = 0
        self._buf_start = 0
        self._gaps = self._sizes = self._est = np.empty(0)

    @property
    def count(self) -> int:
        return self._n

    def _draw_chunk(self, start: int):
        spec = self.spec
        gaps = self._arr_rng.exponential(self._mean_gap, _CHUNK)
        if spec.is_trace:
            sizes = spec.trace_sizes[start:start + _CHUNK]
            if sizes.size == 0:
                raise WorkloadExhausted(f"trace exhausted after {start} jobs")
            gaps = gaps[:sizes.size]
        else:
            sizes = spec.sizes.sample(self._size_rng, _CHUNK)
        err = spec.error_model
        x = np.exp(err.mu + err.sigma * self._err_rng.standard_normal(_CHUNK))[:sizes.size]
        est = sizes * x
        _check_positive("true size", sizes, start)
        _check_positive("estimate", est, start)
        return gaps, sizes, est

    def _refill(self):
        start = self._n
        gaps, sizes, est = self._draw_chunk(start)
        self._gaps, self._sizes, self._est = gaps.tolist(), sizes.tolist(), est.tolist()
        self._buf_start = start

    def sample(self) -> Sample:
        i = self._n - self._buf_start
        if i >= len(self._sizes):
            self._refill()
            i = 0
        self._n += 1
        return Sample(self._gaps[i], self._sizes[i], self._est[i])

    def take(self, n: int):
        """The first ``n`` jobs as arrays ``(gaps, sizes, est, exhausted)``.

        Must be called on a fresh stream.  Fewer than ``n`` jobs are returned
        only when a trace runs out, in which case ``exhausted`` is true.
        """
        if self._n:
            raise RuntimeError("take() needs a fresh stream")
        parts = []
        got = 0
        exhausted = False
        while got < n:
            try:
                chunk = self._draw_chunk(got)
            except WorkloadExhausted:
                exhausted = True
                break
            parts.append(chunk)
            got += chunk[1].size
            if chunk[1].size < _CHUNK:
                exhausted = True
                break
        if not parts:
            empty = np.empty(0)
            return empty, empty, empty, True
        gaps, sizes, est = (np.concatenate(col) for col in zip(*parts))
        self._n = -1  # spent
        return gaps, sizes, est, exhausted


class ScriptedWorkload:
    """A fixed list of ``(arrival_time, true_size, est_size)`` jobs.

    Useful for hand-checked scenarios; the seed is ignored and arrivals stop
    after the last listed job.
    """

    is_trace = False

    def __init__(self, jobs):
        jobs = [tuple(map(float, j)) for j in jobs]
        if not jobs:
            raise WorkloadError("no jobs")
        prev = 0.0
        for i, (t, s, e) in enumerate(jobs):
            if t < prev:
                raise WorkloadError(f"job {i} arrives before job {i - 1}")
            if not (s > 0 and e > 0):
                raise NonPositiveSample(f"non-positive size or estimate at job index {i}")
            prev = t
        self.jobs = jobs

    def stream(self, seed: int) -> "_ScriptedStream":
        return _ScriptedStream(self.jobs)

    def describe(self) -> dict:
        return {"scripted_jobs": len(self.jobs)}


class _ScriptedStream:
    def __init__(self, jobs):
        self._jobs = jobs
        self.count = 0
        self._last = 0.0

    def sample(self) -> Sample:
        if self.count >= len(self._jobs):
            raise WorkloadExhausted(f"script exhausted after {self.count} jobs")
        t, s, e = self._jobs[self.count]
        self.count += 1
        gap, self._last = t - self._last, t
        return Sample(gap, s, e)


# --------------------------------------------------------------------------
# Traces: headerless CSV rows ``job_index,size_bytes``.

@dataclass(frozen=True)
class TraceRecord:
    job_index: int
    size_bytes: int


def read_trace(path) -> list[TraceRecord]:
    records = []
    prev = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"{path}:{lineno}: expected 2 fields "
                                       f"'job_index,size_bytes', got {len(row)}")
            try:
                idx, size = int(row[0]), int(row[1])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if size <= 0:
                raise TraceFormatError(f"{path}:{lineno}: job_index {idx} has "
                                       f"non-positive size_bytes {size}")
            if prev is not None and idx <= prev:
                raise TraceFormatError(f"{path}:{lineno}: job_index {idx} out of order")
            prev = idx
            records.append(TraceRecord(idx, size))
    if not records:
        raise TraceFormatError(f"{path}: no records")
    return records


def _ingest(path: str, speed: Optional[float]):
    records = read_trace(path)
    nbytes = np.array([r.size_bytes for r in records], dtype=float)
    if speed is None:
        speed = float(nbytes.mean())
    if not speed > 0:
        raise ValueError(f"speed must be positive, got {speed!r}")
    log.info("ingested %d trace records from %s", len(records), path)
    return nbytes / speed, speed


def ingest_trace(path, speed: Optional[float] = None) -> np.ndarray:
    """True sizes (time units) ``size_bytes / speed`` in trace order.

    ``speed`` is in bytes per time unit; by default the mean job size in bytes,
    which normalises the trace to unit mean size.
    """
    return _ingest(str(path), speed)[0]


def convert_byte_trace(src, dst) -> int:
    """Collapse a ``job_index,input_bytes,shuffle_bytes,output_bytes`` CSV
    (header optional) into the two-column trace format, skipping jobs that
    moved no bytes.  Returns the number of rows written."""
    n = 0
    with open(src, newline="") as fin, open(dst, "w", newline="") as fout:
        writer = csv.writer(fout)
        for lineno, row in enumerate(csv.reader(fin), start=1):
            if not row:
                continue
            try:
                idx = int(row[0])
                total = sum(int(float(c)) for c in row[1:4])
            except ValueError:
                if lineno == 1:
                    continue
                raise TraceFormatError(f"{src}:{lineno}: malformed row {row!r}") from None
            if total > 0:
                writer.writerow([idx, total])
                n += 1
    return n


def sample_trace_path() -> Path:
    """Bundled synthetic heavy-tailed trace (24,443 jobs, Weibull k=0.25 bytes)."""
    return Path(str(resources.files("estsched") / "data" / "sample_trace.csv"))


def make_sample_trace(path, n: int = 24443, k: float = 0.25, mean_bytes: float = 1e8,
                      seed: int = 2010) -> None:
    rng = np.random.default_rng(seed)
    nbytes = np.maximum(1, np.rint(mean_bytes * weibull_scale_for_unit_mean(k)
                                   * rng.weibull(k, n))).astype(np.int64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, b in enumerate(nbytes):
            writer.writerow([i, int(b)])
