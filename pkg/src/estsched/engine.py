"""Event-driven simulation of a preemptive single-server queue.

Scheduling decisions happen only at arrivals and departures (and, for LAS, when
the processor-sharing level catches up with a waiting job).  Preempted jobs
resume exactly where they stopped.

Heavy-tailed sizes include jobs far smaller than the spacing of doubles near
the clock value, so the clock is kept as an unevaluated sum ``clock + clock_lo``
and events are scheduled by their delay from it.  A departure advances time by
exactly the remaining work and sojourn times are taken from the compensated
clock; otherwise ``completion - arrival`` would round tiny jobs' sojourns to 0.

For score-based policies the scores of *waiting* jobs never change (their
attained service is frozen), and every supported score is nondecreasing in
attained service, so the job in service keeps beating the waiting jobs it beat
when it was chosen.  A decision therefore only compares the job in service
with the best waiting job or the new arrival; waiting jobs live in a heap keyed
by ``(-score, arrival_time, id)``.  ``reference=True`` instead re-runs
:func:`select_job` over every present job at every epoch, which is slow but
serves as an oracle for the heap path.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional, Union

import numpy as np

from .metrics import RunResult
from .policies import LAS, Policy
from .workload import WorkloadExhausted, WorkloadSpec

#: Membership tolerance (time units) for the LAS processor-sharing set.
LAS_EPS = 1e-9


class EngineError(RuntimeError):
    """Internal inconsistency in the event loop."""


@dataclass(slots=True, eq=False)
class Job:
    id: int
    arrival_time: float
    true_size: float
    est_size: float
    attained: float = 0.0
    completion_time: Optional[float] = None
    sojourn: Optional[float] = None

    @property
    def remaining(self) -> float:
        return self.true_size - self.attained


class EventKind(IntEnum):
    # Value order is the tie-break order for simultaneous events.
    DEPARTURE = 0
    LAS_CATCHUP = 1
    ARRIVAL = 2


class EngineEvent(NamedTuple):
    time: float
    kind: EventKind
    job: Optional[Job]


def _two_sum(a: float, b: float):
    """``(s, e)`` with ``s = fl(a + b)`` and ``a + b == s + e`` exactly."""
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _score_key(policy: Policy, job: Job):
    return (-policy.score(job.attained, job.true_size, job.est_size), job.arrival_time, job.id)


def select_job(queue, policy: Policy, clock: float = 0.0, eps: float = LAS_EPS
               ) -> Union[Job, list[Job]]:
    """Pick who is served next among ``queue`` (non-empty).

    Score policies: the highest score, ties to the earlier arrival then the
    lower id.  LAS: every job whose attained service is within ``eps`` of the
    minimum, sorted by id; they share the server equally.
    """
    jobs = list(queue)
    if not jobs:
        raise ValueError("select_job needs a non-empty queue")
    if policy.kind == LAS:
        least = min(j.attained for j in jobs)
        return sorted((j for j in jobs if j.attained <= least + eps), key=lambda j: j.id)
    return min(jobs, key=lambda j: _score_key(policy, j))


class Simulator:
    """One run; holds the server state.

    The run covers the first ``horizon`` arrivals (ids ``0 .. horizon-1``),
    each simulated to completion while later arrivals keep contending.  With
    ``stop_at_last_arrival`` (the default for trace workloads) the run instead
    ends when the trace's last job arrives and only horizon jobs completed by
    then are reported.
    """

    def __init__(self, workload: WorkloadSpec, policy: Policy, horizon: int, seed: int, *,
                 record_decisions: bool = False, reference: bool = False,
                 stop_at_last_arrival: Optional[bool] = None):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon!r}")
        if policy.kind == LAS and reference:
            raise ValueError("reference selection is only defined for score policies")
        self.workload = workload
        self.policy = policy
        self.horizon = horizon
        self.seed = seed
        self.reference = reference
        if stop_at_last_arrival is None:
            stop_at_last_arrival = workload.is_trace
        self.stop_at_last_arrival = stop_at_last_arrival
        self._stream = workload.stream(seed)
        self._las = policy.kind == LAS

        self.clock = 0.0
        self.clock_lo = 0.0
        self.present: dict[int, Job] = {}
        self.horizon_jobs: list[Job] = []
        self.pending_horizon = horizon
        self.next_arrival: Optional[Job] = None
        self.arrivals_done = False

        # score policies
        self.serving: Optional[Job] = None
        self.waiting: list = []
        # LAS: share set as a heap of (true_size, id, job) at common level
        self.active: list = []
        self.level = 0.0

        self.busy_time = 0.0
        self.area = 0.0          # integral of number-in-system over time
        self.n_arrived = 0
        self.completed_work = 0.0
        self.decisions: Optional[list] = [] if record_decisions else None

        self._draw_arrival(0.0)

    # ------------------------------------------------------------------ state
    def _draw_arrival(self, prev_time: float):
        try:
            gap, size, est = self._stream.sample()
        except WorkloadExhausted:
            self.next_arrival = None
            self.arrivals_done = True
            return
        n = self._stream.count - 1
        self.next_arrival = Job(n, prev_time + gap, size, est)

    def in_service(self) -> list[Job]:
        if self._las:
            return sorted((e[2] for e in self.active), key=lambda j: j.id)
        return [] if self.serving is None else [self.serving]

    def attained_of(self, job: Job) -> float:
        if self._las and any(e[2] is job for e in self.active):
            return self.level
        return job.attained

    @property
    def done(self) -> bool:
        if self.pending_horizon == 0:
            return True
        return self.stop_at_last_arrival and self.arrivals_done

    # ------------------------------------------------------------ event loop
    def advance(self) -> EngineEvent:
        """Process the next event and return it."""
        d_arr = d_dep = d_catch = math.inf
        if self.next_arrival is not None:
            d_arr = (self.next_arrival.arrival_time - self.clock) - self.clock_lo
        if self._las:
            n = len(self.active)
            if n:
                d_dep = (self.active[0][0] - self.level) * n
                if self.waiting:
                    d_catch = (self.waiting[0][0] - self.level) * n
        elif self.serving is not None:
            d_dep = self.serving.true_size - self.serving.attained

        if d_dep <= d_catch and d_dep <= d_arr:
            kind, elapsed = EventKind.DEPARTURE, d_dep
        elif d_catch <= d_arr:
            kind, elapsed = EventKind.LAS_CATCHUP, d_catch
        else:
            kind, elapsed = EventKind.ARRIVAL, d_arr
        if math.isinf(elapsed):
            raise EngineError("event queue underflow before the horizon completed")
        if elapsed < 0.0:
            raise EngineError(f"negative elapsed time {elapsed!r} at clock {self.clock!r}")

        self.area += len(self.present) * elapsed
        if self._las:
            if self.active:
                self.busy_time += elapsed
                self.level += elapsed / len(self.active)
        elif self.serving is not None:
            self.busy_time += elapsed
            self.serving.attained += elapsed
        if kind is EventKind.ARRIVAL:
            self.clock, self.clock_lo = self.next_arrival.arrival_time, 0.0
        else:
            self.clock, self.clock_lo = _two_sum(self.clock, self.clock_lo + elapsed)
        t = self.clock

        if kind is EventKind.ARRIVAL:
            job = self._on_arrival()
        elif kind is EventKind.DEPARTURE:
            job = self._las_departure() if self._las else self._on_departure()
        else:
            job = self._las_catchup()
        if self.decisions is not None:
            self._record()
        return EngineEvent(t, kind, job)

    def _record(self):
        if self._las:
            chosen = tuple(sorted(e[1] for e in self.active))
        else:
            chosen = None if self.serving is None else self.serving.id
        self.decisions.append((self.clock, chosen))

    def _on_arrival(self) -> Job:
        job = self.next_arrival
        self.present[job.id] = job
        self.n_arrived += 1
        if job.id < self.horizon:
            self.horizon_jobs.append(job)
        self._draw_arrival(job.arrival_time)
        if self._las:
            self._las_arrival(job)
        elif self.reference:
            self.serving = select_job(self.present.values(), self.policy, self.clock)
        elif self.serving is None:
            self.serving = job
        else:
            policy = self.policy
            new_key = _score_key(policy, job)
            cur_key = _score_key(policy, self.serving)
            if new_key < cur_key:
                heapq.heappush(self.waiting, (*cur_key, self.serving))
                self.serving = job
            else:
                heapq.heappush(self.waiting, (*new_key, job))
        return job

    def _complete(self, job: Job):
        job.attained = job.true_size
        job.completion_time = self.clock
        job.sojourn = (self.clock - job.arrival_time) + self.clock_lo
        self.completed_work += job.true_size
        del self.present[job.id]
        if job.id < self.horizon:
            self.pending_horizon -= 1

    def _on_departure(self) -> Job:
        job = self.serving
        self._complete(job)
        if self.reference:
            self.serving = (select_job(self.present.values(), self.policy, self.clock)
                            if self.present else None)
        else:
            self.serving = heapq.heappop(self.waiting)[-1] if self.waiting else None
        return job

    # LAS ------------------------------------------------------------------
    def _las_arrival(self, job: Job):
        if self.active and self.level > 0.0:
            for size, jid, old in self.active:
                old.attained = self.level
                heapq.heappush(self.waiting, (self.level, old.arrival_time, jid, old))
            self.active = []
            self.level = 0.0
        if not self.active:
            self.level = 0.0
        heapq.heappush(self.active, (job.true_size, job.id, job))

    def _las_departure(self) -> Job:
        first = heapq.heappop(self.active)[2]
        self.level = first.true_size
        self._complete(first)
        while self.active and self.active[0][0] <= self.level:
            self._complete(heapq.heappop(self.active)[2])
        self._las_refill()
        return first

    def _las_catchup(self) -> Optional[Job]:
        # Snap exactly onto the waiting level to avoid drift.
        self.level = self.waiting[0][0]
        joined = self.waiting[0][-1]
        self._las_refill()
        return joined

    def _las_refill(self):
        if not self.active and self.waiting:
            self.level = self.waiting[0][0]
        while self.waiting and self.waiting[0][0] <= self.level + LAS_EPS:
            job = heapq.heappop(self.waiting)[-1]
            heapq.heappush(self.active, (job.true_size, job.id, job))

    # --------------------------------------------------------------- checks
    def check_invariants(self, tol: float = 1e-9):
        """Raise ``EngineError`` if the state violates a conservation law."""
        delivered = self.completed_work
        for job in self.present.values():
            a = self.attained_of(job)
            if not -tol <= a <= job.true_size * (1 + tol) + tol:
                raise EngineError(f"job {job.id} attained {a} outside [0, {job.true_size}]")
            if job.completion_time is not None:
                raise EngineError(f"present job {job.id} has a completion time")
            delivered += a
        if abs(delivered - self.busy_time) > tol * max(1.0, self.busy_time):
            raise EngineError(f"work not conserved: busy {self.busy_time} vs "
                              f"delivered {delivered}")
        if self.present and not self.in_service():
            raise EngineError("server idle with jobs present")

    # ------------------------------------------------------------------ run
    def run(self) -> RunResult:
        while not self.done:
            self.advance()
        return self.result()

    def result(self) -> RunResult:
        jobs = [j for j in self.horizon_jobs if j.completion_time is not None]
        if not jobs:
            raise EngineError("no horizon job completed")
        params = dict(self.workload.describe(), seed=self.seed, horizon=self.horizon)
        return RunResult.from_arrays(
            policy=self.policy.name,
            params=params,
            ids=np.array([j.id for j in jobs], dtype=np.int64),
            arrival=np.array([j.arrival_time for j in jobs]),
            true_size=np.array([j.true_size for j in jobs]),
            est_size=np.array([j.est_size for j in jobs]),
            completion=np.array([j.completion_time for j in jobs]),
            sojourn=np.array([j.sojourn for j in jobs]),
            end_time=self.clock,
            area=self.area,
            n_arrived=self.n_arrived,
            busy_time=self.busy_time,
            decisions=self.decisions,
        )


def _kernel_args(policy: Policy):
    """Kernel policy code and score parameters, or ``None`` if the policy is
    not one the compiled loop knows."""
    from . import _kernel as K
    from .gittins import GittinsScore
    from .policies import FCFS, SEHScore, SEPT, SERPT, SRPT

    mu = sigma = mean_x = 0.0
    freeze = 2.0
    if policy.kind == LAS:
        return K.LAS, mu, sigma, mean_x, freeze
    fixed = {id(SRPT.score): K.SRPT, id(SERPT.score): K.SERPT, id(SEPT.score): K.SEPT,
             id(FCFS.score): K.FCFS}
    if id(policy.score) in fixed:
        return fixed[id(policy.score)], mu, sigma, mean_x, freeze
    if isinstance(policy.score, SEHScore):
        return K.SEH, mu, sigma, mean_x, policy.score.freeze_factor
    if isinstance(policy.score, GittinsScore):
        m = policy.score.model
        return K.GITTINS, m.mu, m.sigma, m.mean, freeze
    return None


def _run_compiled(workload: WorkloadSpec, policy: Policy, horizon: int, seed: int,
                  stop_at_last_arrival: bool, args) -> RunResult:
    from . import _kernel as K

    code, mu, sigma, mean_x, freeze = args
    n = horizon + max(2048, horizon // 4)
    while True:
        gaps, size, est, exhausted = workload.stream(seed).take(n)
        arrival = np.cumsum(gaps)
        if code == K.LAS:
            out = K.run_las(arrival, size, exhausted, horizon, stop_at_last_arrival)
        else:
            out = K.run_score(code, arrival, size, est, exhausted, horizon,
                              stop_at_last_arrival, mu, sigma, mean_x, freeze)
        completion, sojourn, end_time, area, n_arrived, busy, status = out
        if status == K.OK:
            break
        n *= 2
    m = min(horizon, arrival.size)
    done = ~np.isnan(completion[:m])
    if not done.any():
        raise EngineError("no horizon job completed")
    params = dict(workload.describe(), seed=seed, horizon=horizon)
    return RunResult.from_arrays(
        policy=policy.name, params=params,
        ids=np.flatnonzero(done).astype(np.int64),
        arrival=arrival[:m][done], true_size=size[:m][done], est_size=est[:m][done],
        completion=completion[:m][done], sojourn=sojourn[:m][done],
        end_time=float(end_time), area=float(area), n_arrived=int(n_arrived),
        busy_time=float(busy),
    )


def run_simulation(workload: WorkloadSpec, policy: Policy, horizon: int, seed: int, *,
                   engine: str = "auto", record_decisions: bool = False,
                   reference: bool = False,
                   stop_at_last_arrival: Optional[bool] = None) -> RunResult:
    """Simulate one run; deterministic in ``(workload, policy, horizon, seed)``.

    ``engine="auto"`` uses the compiled event loop whenever it can (built-in
    policies, stochastic workloads, no decision trace requested) and the
    Python :class:`Simulator` otherwise; both give identical results.
    """
    if engine not in ("auto", "python", "compiled"):
        raise ValueError(f"unknown engine {engine!r}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon!r}")
    if stop_at_last_arrival is None:
        stop_at_last_arrival = workload.is_trace
    args = None
    if engine != "python" and not (record_decisions or reference) \
            and isinstance(workload, WorkloadSpec):
        args = _kernel_args(policy)
    if args is None:
        if engine == "compiled":
            raise ValueError("this run cannot use the compiled engine")
        return Simulator(workload, policy, horizon, seed, record_decisions=record_decisions,
                         reference=reference,
                         stop_at_last_arrival=stop_at_last_arrival).run()
    return _run_compiled(workload, policy, horizon, seed, stop_at_last_arrival, args)
