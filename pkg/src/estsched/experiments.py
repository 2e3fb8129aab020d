"""Scenario grids, the replication loop over a grid, and CSV/manifest output.

A plan is a grid of cells ``(k, sigma, rho, policy)``.  Each cell is
replicated with seeds ``seed_base, seed_base + 1, ...`` until the full 95%
confidence interval of its MST is within 5% of the mean (at least 30 runs)
or ``max_runs`` is hit.  With paired seeds every policy of a scenario sees
the same job sequences, so ratios against SRPT use the paired estimator and
SRPT keeps running until it has at least as many runs as any other policy.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import run_simulation
from .metrics import (
    MIN_RUNS, REL_WIDTH, Ratio, paired_ratio, seeds_digest, summarize,
)
from .policies import POLICY_NAMES, get_policy, suggest_policy_name
from .workload import WorkloadSpec, sample_trace_path

log = logging.getLogger(__name__)

BASELINE = "SRPT"
DEFAULT_K = 0.25
DEFAULT_SIGMA = 0.5
DEFAULT_RHO = 0.9
DEFAULT_HORIZON = 10_000
DEFAULT_MAX_RUNS = 20_000

K_SWEEP = (0.25, 0.375, 0.5, 0.75, 1.0, 2.0)
SIGMA_SWEEP = (0.25, 0.375, 0.5, 0.75, 1.0)
RHO_SWEEP = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99)

# offset between policies' seed ranges when seeds are not paired
_SEED_STRIDE = 10_000_000
_BATCH_MIN = 10

EST_POLICIES = ("SRPT", "SERPT", "SEPT", "SEH", "GITTINS")


@dataclass(frozen=True)
class FigureSpec:
    id: str
    title: str
    swept: Optional[str]
    policies: tuple
    k: tuple = (DEFAULT_K,)
    sigma: tuple = (DEFAULT_SIGMA,)
    rho: tuple = (DEFAULT_RHO,)
    metric: str = "mst"
    needs_trace: bool = False


FIGURES = {f.id: f for f in (
    FigureSpec("fig2_k_sweep", "normalized MST vs Weibull shape k", "k", EST_POLICIES, k=K_SWEEP),
    FigureSpec("fig3_sigma_sweep", "normalized MST vs error sigma", "sigma", EST_POLICIES,
               sigma=SIGMA_SWEEP),
    FigureSpec("fig4_rho_sweep", "normalized MST (overall and per class) vs load", "rho",
               EST_POLICIES, rho=RHO_SWEEP),
    FigureSpec("fig5_slowdown_k", "mean slowdown vs Weibull shape k", "k", EST_POLICIES,
               k=K_SWEEP, metric="mean_slowdown"),
    FigureSpec("table2", "normalized MST and mean slowdown at sigma 1 and 2", "sigma",
               ("GITTINS", "SEH", "SEPT", "LAS", "SRPT"), sigma=(1.0, 2.0)),
    FigureSpec("fig6_trace_mst", "trace workload: normalized MST vs sigma", "sigma",
               EST_POLICIES + ("LAS",), sigma=SIGMA_SWEEP, needs_trace=True),
    FigureSpec("fig7_trace_slowdown", "trace workload: mean slowdown vs sigma", "sigma",
               EST_POLICIES + ("LAS",), sigma=SIGMA_SWEEP, metric="mean_slowdown",
               needs_trace=True),
)}


@dataclass
class ExperimentPlan:
    """A grid of scenarios plus replication controls.

    ``single_seed`` turns the plan into one run per cell with that seed and
    no confidence interval.
    """

    name: str = "adhoc"
    policies: list = field(default_factory=lambda: list(EST_POLICIES))
    k_values: list = field(default_factory=lambda: [DEFAULT_K])
    sigma_values: list = field(default_factory=lambda: [DEFAULT_SIGMA])
    rho_values: list = field(default_factory=lambda: [DEFAULT_RHO])
    horizon: int = DEFAULT_HORIZON
    max_runs: int = DEFAULT_MAX_RUNS
    seed_base: int = 0
    out: Optional[str] = None
    trace: Optional[str] = None
    speed: Optional[float] = None
    paired_seeds: bool = True
    jobs: int = 1
    min_runs: int = MIN_RUNS
    rel_width: float = REL_WIDTH
    single_seed: Optional[int] = None
    figure: Optional[str] = None

    @classmethod
    def from_figure(cls, figure_id: str, **overrides) -> "ExperimentPlan":
        fig = FIGURES[figure_id]
        plan = cls(name=fig.id, policies=list(fig.policies), k_values=list(fig.k),
                   sigma_values=list(fig.sigma), rho_values=list(fig.rho), figure=fig.id)
        for key, value in overrides.items():
            setattr(plan, key, value)
        return plan

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown plan field(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        """Read a plan file, or the plan recorded in a run manifest."""
        data = json.loads(Path(path).read_text())
        if "plan" in data and isinstance(data["plan"], dict):
            data = data["plan"]
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_trace(self) -> bool:
        return self.trace is not None

    def scenarios(self):
        ks = [None] if self.is_trace else self.k_values
        for k in ks:
            for sigma in self.sigma_values:
                for rho in self.rho_values:
                    yield k, sigma, rho

    def run_policies(self) -> list:
        """Requested policies with the SRPT baseline added (first) if missing."""
        names = [p.upper() for p in self.policies]
        return names if BASELINE in names else [BASELINE] + names


def resolve_trace(path: Optional[str]) -> Optional[str]:
    if path == "sample":
        return str(sample_trace_path())
    return path


def validate_plan(plan: ExperimentPlan) -> list:
    """Every problem with the plan as ``"field: message"`` strings; empty if valid."""
    errors = []

    def values(name, seq):
        if not isinstance(seq, (list, tuple)) or not seq:
            errors.append(f"{name}: must be a non-empty list")
            return []
        return seq

    for rho in values("rho_values", plan.rho_values):
        if not (isinstance(rho, (int, float)) and 0.0 < rho < 1.0):
            errors.append(f"rho_values: rho must be in (0,1), got {rho!r}")
    if not plan.is_trace:
        for k in values("k_values", plan.k_values):
            if not (isinstance(k, (int, float)) and k > 0):
                errors.append(f"k_values: k must be > 0, got {k!r}")
    for sigma in values("sigma_values", plan.sigma_values):
        if not (isinstance(sigma, (int, float)) and sigma > 0):
            errors.append(f"sigma_values: sigma must be > 0, got {sigma!r}")
    for name in values("policies", plan.policies):
        if str(name).upper() not in POLICY_NAMES:
            hint = suggest_policy_name(str(name))
            msg = f"policies: unknown policy {name!r}"
            errors.append(msg + (f" (did you mean {hint!r}?)" if hint else ""))
    if not (isinstance(plan.horizon, int) and plan.horizon >= 1):
        errors.append(f"horizon: must be an integer >= 1, got {plan.horizon!r}")
    if plan.single_seed is None and not (isinstance(plan.max_runs, int)
                                         and plan.max_runs >= plan.min_runs):
        errors.append(f"max_runs: must be >= {plan.min_runs}, got {plan.max_runs!r}")
    if not (isinstance(plan.jobs, int) and plan.jobs >= 1):
        errors.append(f"jobs: must be >= 1, got {plan.jobs!r}")
    if not 0.0 < plan.rel_width:
        errors.append(f"rel_width: must be > 0, got {plan.rel_width!r}")
    if plan.figure is not None and plan.figure not in FIGURES:
        errors.append(f"figure: unknown figure {plan.figure!r}")
    elif plan.figure is not None and FIGURES[plan.figure].needs_trace:
        if plan.trace is None:
            errors.append(f"trace: figure {plan.figure} needs --trace")
        if plan.speed is None:
            errors.append(f"speed: figure {plan.figure} needs --speed")
    if plan.trace is not None and not Path(resolve_trace(plan.trace)).is_file():
        errors.append(f"trace: file not found: {plan.trace}")
    if plan.speed is not None and not (isinstance(plan.speed, (int, float)) and plan.speed > 0):
        errors.append(f"speed: must be > 0, got {plan.speed!r}")
    return errors


# --------------------------------------------------------------------------
# Running

def _workload(plan: ExperimentPlan, k, sigma, rho) -> WorkloadSpec:
    if plan.is_trace:
        return WorkloadSpec.from_trace(resolve_trace(plan.trace), sigma=sigma, rho=rho,
                                       speed=plan.speed)
    return WorkloadSpec.synthetic(k=k, sigma=sigma, rho=rho)


def _horizon(plan: ExperimentPlan, workload: WorkloadSpec) -> int:
    # a trace run covers the whole trace and ends at its last arrival
    return workload.trace_sizes.size if workload.is_trace else plan.horizon


def _run_batch(workload: WorkloadSpec, policy_name: str, horizon: int, seeds) -> np.ndarray:
    """Per-run metrics ``[mst, mean_slowdown, mst_over, mst_under]`` (NaN for
    an empty class)."""
    policy = get_policy(policy_name, workload.error_model)
    out = np.empty((len(seeds), 4))
    for i, seed in enumerate(seeds):
        r = run_simulation(workload, policy, horizon, seed)
        out[i] = (r.mst, r.mean_slowdown,
                  math.nan if r.mst_over is None else r.mst_over,
                  math.nan if r.mst_under is None else r.mst_under)
    return out


class _Cell:
    def __init__(self, scenario, policy, seed0, workload, horizon):
        self.scenario = scenario
        self.policy = policy
        self.seed0 = seed0
        self.workload = workload
        self.horizon = horizon
        self.values = np.empty((0, 4))
        self.converged = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def seeds(self, n=None) -> list:
        return list(range(self.seed0, self.seed0 + (self.n if n is None else n)))

    def cache_key(self):
        k, sigma, rho = self.scenario
        uses_estimate = get_policy(self.policy).requires_estimate
        return (self.policy, k, None if not uses_estimate else sigma, rho, self.seed0)


@dataclass
class CellResult:
    k: Optional[float]
    sigma: float
    rho: float
    policy: str
    n_runs: int
    converged: Optional[bool]
    mst: float
    mst_ci_width: float
    mst_ratio_vs_srpt: float
    mst_ratio_ci_half_width: float
    mean_slowdown: float
    mean_slowdown_ci_width: float
    mst_over: float
    mst_under: float
    mst_over_ratio: float
    mst_under_ratio: float
    mst_over_ratio_class: float
    mst_under_ratio_class: float
    seed_base: int
    seeds_digest: str


CSV_COLUMNS = [f.name for f in fields(CellResult)]


@dataclass
class PlanResult:
    plan: ExperimentPlan
    rows: list
    wall_time: float

    @property
    def all_converged(self) -> bool:
        return all(r.converged is not False for r in self.rows)

    def row(self, policy: str, k=None, sigma=None, rho=None) -> CellResult:
        for r in self.rows:
            if r.policy == policy and (k is None or r.k == k) and \
                    (sigma is None or r.sigma == sigma) and (rho is None or r.rho == rho):
                return r
        raise KeyError((policy, k, sigma, rho))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def manifest(self) -> dict:
        return {
            "tool": "estsched",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "plan": self.plan.to_dict(),
            "cells": [{"k": r.k, "sigma": r.sigma, "rho": r.rho, "policy": r.policy,
                       "seed_first": r.seed_base, "n_runs": r.n_runs,
                       "seeds_digest": r.seeds_digest} for r in self.rows],
            "all_converged": self.all_converged,
            "wall_time_s": self.wall_time,
        }

    def write(self, out) -> tuple[Path, Path]:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(self.to_csv())
        man = manifest_path(out)
        man.write_text(json.dumps(self.manifest(), indent=2) + "\n")
        return out, man


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _next_batch(n: int, min_runs: int) -> int:
    return min_runs if n == 0 else max(_BATCH_MIN, n // 4)


class _Executor:
    def __init__(self, jobs: int):
        self.pool = ProcessPoolExecutor(jobs) if jobs > 1 else None

    def map(self, tasks):
        if self.pool is None:
            return [_run_batch(*t) for t in tasks]
        futures = [self.pool.submit(_run_batch, *t) for t in tasks]
        return [f.result() for f in futures]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run_plan(plan: ExperimentPlan, *, progress=None) -> PlanResult:
    """Simulate every cell of ``plan``; rows come out in grid order
    (k, sigma, rho, then policy order)."""
    errors = validate_plan(plan)
    if errors:
        raise ValueError("invalid plan: " + "; ".join(errors))
    t0 = time.perf_counter()
    policies = plan.run_policies()
    scenarios = list(plan.scenarios())
    cells = []
    workloads = {}
    for sc in scenarios:
        k, sigma, rho = sc
        if plan.is_trace and (sigma, rho) in workloads:
            w = workloads[(sigma, rho)]
        else:
            w = workloads[(sigma, rho)] = _workload(plan, k, sigma, rho)
        for j, name in enumerate(policies):
            base = plan.single_seed if plan.single_seed is not None else plan.seed_base
            seed0 = base if plan.paired_seeds else base + j * _SEED_STRIDE
            cells.append(_Cell(sc, name, seed0, w, _horizon(plan, w)))
    by_scenario = {sc: [c for c in cells if c.scenario == sc] for sc in scenarios}
    cache: dict = {}
    single = plan.single_seed is not None
    target_n = 1 if single else None
    ex = _Executor(plan.jobs)
    try:
        while True:
            want = {}
            for sc, group in by_scenario.items():
                baseline = next(c for c in group if c.policy == BASELINE)
                need = max((c.n for c in group if c is not baseline), default=0)
                for c in group:
                    if single:
                        n_new = 1 - c.n
                    elif c.n >= plan.max_runs:
                        n_new = 0
                    elif c is baseline:
                        if c.converged and c.n >= need:
                            n_new = 0
                        elif c.converged:
                            n_new = need - c.n
                        else:
                            n_new = _next_batch(c.n, plan.min_runs)
                    else:
                        n_new = 0 if c.converged else _next_batch(c.n, plan.min_runs)
                    n_new = min(n_new, plan.max_runs - c.n)
                    if n_new > 0:
                        want[id(c)] = (c, n_new)
            if not want:
                break
            tasks, slots = [], []
            for c, n_new in want.values():
                seeds = list(range(c.seed0 + c.n, c.seed0 + c.n + n_new))
                key = c.cache_key()
                cached = cache.get(key)
                if cached is not None and cached.shape[0] >= c.n + n_new:
                    c.values = cached[:c.n + n_new]
                    continue
                tasks.append((c.workload, c.policy, c.horizon, seeds))
                slots.append(c)
            for c, vals in zip(slots, ex.map(tasks)):
                c.values = np.vstack([c.values, vals])
                key = c.cache_key()
                if key not in cache or cache[key].shape[0] < c.n:
                    cache[key] = c.values
            for c, _ in want.values():
                if not single:
                    s = summarize("mst", c.values[:, 0], c.seeds(), min_runs=plan.min_runs,
                                  rel_width=plan.rel_width)
                    c.converged = s.converged
            if progress is not None:
                progress(sum(c.n for c in cells))
    finally:
        ex.close()

    rows = []
    for sc, group in by_scenario.items():
        baseline = next(c for c in group if c.policy == BASELINE)
        for c in group:
            if c.policy not in [p.upper() for p in plan.policies]:
                continue
            rows.append(_cell_result(plan, c, baseline, single))
    for r in rows:
        if r.converged is False:
            log.warning("cell %s k=%s sigma=%s rho=%s not converged after %d runs",
                        r.policy, r.k, r.sigma, r.rho, r.n_runs)
    return PlanResult(plan, rows, time.perf_counter() - t0)


def _mean_ci_width(x) -> float:
    return summarize("m", x, range(len(x))).ci_width if len(x) > 1 else math.nan


def _ratio(target, base) -> Ratio:
    ok = ~(np.isnan(target) | np.isnan(base))
    if not ok.any():
        return Ratio(math.nan, math.nan)
    return paired_ratio(target[ok], base[ok])


def _cell_result(plan, c: _Cell, baseline: _Cell, single: bool) -> CellResult:
    k, sigma, rho = c.scenario
    v = c.values
    n = c.n
    if plan.paired_seeds:
        b = baseline.values[:n]
        mst_ratio = _ratio(v[:, 0], b[:, 0])
        over = _ratio(v[:, 2], b[:, 0])
        under = _ratio(v[:, 3], b[:, 0])
        over_cls = _ratio(v[:, 2], b[:, 2])
        under_cls = _ratio(v[:, 3], b[:, 3])
    else:
        b = baseline.values
        mst_ratio = Ratio(*_independent_ratio(v[:, 0], b[:, 0]))
        over = Ratio(*_independent_ratio(v[:, 2], b[:, 0]))
        under = Ratio(*_independent_ratio(v[:, 3], b[:, 0]))
        over_cls = Ratio(*_independent_ratio(v[:, 2], b[:, 2]))
        under_cls = Ratio(*_independent_ratio(v[:, 3], b[:, 3]))
    return CellResult(
        k=k, sigma=sigma, rho=rho, policy=c.policy, n_runs=n,
        converged=None if single else c.converged,
        mst=float(v[:, 0].mean()), mst_ci_width=_mean_ci_width(v[:, 0]),
        mst_ratio_vs_srpt=mst_ratio.value, mst_ratio_ci_half_width=_finite(mst_ratio.half_width),
        mean_slowdown=float(v[:, 1].mean()), mean_slowdown_ci_width=_mean_ci_width(v[:, 1]),
        mst_over=float(np.nanmean(v[:, 2])) if not np.isnan(v[:, 2]).all() else math.nan,
        mst_under=float(np.nanmean(v[:, 3])) if not np.isnan(v[:, 3]).all() else math.nan,
        mst_over_ratio=over.value, mst_under_ratio=under.value,
        mst_over_ratio_class=over_cls.value, mst_under_ratio_class=under_cls.value,
        seed_base=c.seed0, seeds_digest=seeds_digest(c.seeds()),
    )


def _finite(x: float) -> float:
    return x if math.isfinite(x) else math.nan


def _independent_ratio(t, b):
    t = t[~np.isnan(t)]
    b = b[~np.isnan(b)]
    if not t.size or not b.size:
        return math.nan, math.nan
    st = summarize("t", t, range(t.size))
    sb = summarize("b", b, range(b.size))
    r = st.point_estimate / sb.point_estimate
    if t.size < 2 or b.size < 2:
        return r, math.nan
    rel = math.hypot(st.ci_half_width / st.point_estimate, sb.ci_half_width / sb.point_estimate)
    return r, abs(r) * rel


def figure_table() -> list:
    """``(id, swept parameter, values, policies, needs_trace, title)`` per figure."""
    out = []
    for f in FIGURES.values():
        values = {"k": f.k, "sigma": f.sigma, "rho": f.rho}.get(f.swept, ())
        out.append((f.id, f.swept, values, f.policies, f.needs_trace, f.title))
    return out
