import math
import warnings

import numpy as np
import pytest

from estsched.engine import run_simulation
from estsched.metrics import (
    OVER, UNDER, ContractViolation, JobRecord, aggregate, normalize_against_baseline,
    paired_ratio, replicate_until_converged, seeds_digest, summarize, t_interval,
)
from estsched.policies import LAS_POLICY, SEH, SRPT, get_policy
from estsched.workload import WorkloadSpec


def rec(i, arrival, size, completion, est=None):
    return JobRecord(i, arrival, size, size if est is None else est, completion)


def test_aggregate_single():
    agg = aggregate([rec(0, 0.0, 5.0, 5.0)])
    assert agg.mst == 5.0 and agg.mean_slowdown == 1.0


def test_aggregate_mst():
    assert aggregate([rec(0, 0, 3, 3), rec(1, 1, 7, 8)]).mst == 5.0


def test_aggregate_slowdown():
    agg = aggregate([rec(0, 0, 1, 2), rec(1, 0, 4, 4)])
    assert agg.mean_slowdown == 1.5


def test_aggregate_empty_class_is_absent():
    agg = aggregate([rec(0, 0, 2, 3, est=5)])
    assert agg.mst_over == 3.0 and agg.mst_under is None


def test_aggregate_contract():
    with pytest.raises(ContractViolation):
        aggregate([])
    with pytest.raises(ContractViolation, match="job 3"):
        aggregate([rec(3, 0, 1, None)])


def test_est_class_boundary():
    assert rec(0, 0, 2, 3, est=2).est_class == OVER
    assert rec(0, 0, 2, 3, est=1.999).est_class == UNDER


def test_class_partition_identity():
    w = WorkloadSpec.synthetic(k=0.5, sigma=1.0)
    res = run_simulation(w, SEH, 5000, 3)
    over = res.est_size >= res.true_size
    n_over, n_under = int(over.sum()), int((~over).sum())
    combined = (res.mst_over * n_over + res.mst_under * n_under) / (n_over + n_under)
    assert combined == pytest.approx(res.mst, rel=1e-12)
    assert res.class_mst(OVER) == res.mst_over


@pytest.mark.parametrize("name", ["SRPT", "SERPT", "SEH", "LAS", "FCFS"])
def test_slowdown_at_least_one(name):
    w = WorkloadSpec.synthetic(k=0.25, sigma=1.0)
    res = run_simulation(w, get_policy(name, w.error_model), 5000, 8)
    assert np.all(res.sojourn / res.true_size >= 1 - 1e-9)
    assert all(r.slowdown >= 1 - 1e-9 for r in res.records[:200])


def test_records_roundtrip():
    res = run_simulation(WorkloadSpec.synthetic(), SEH, 300, 1)
    assert aggregate(res.records) == (res.mst, res.mean_slowdown, res.mst_over, res.mst_under)


def test_t_interval_value():
    mean, half = t_interval([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert half == pytest.approx(4.30265272974946 / math.sqrt(3), rel=1e-9)


def test_zero_variance_converges_at_min_runs():
    s = replicate_until_converged(lambda seed: 4.0, 100)
    assert s.converged and s.n_runs == 30 and s.ci_half_width == 0.0
    assert s.seeds == list(range(30))


def test_not_converged_warns():
    with pytest.warns(RuntimeWarning, match="not converged"):
        s = replicate_until_converged(lambda seed: float(seed % 2) * 100 + 1, 40)
    assert not s.converged and s.n_runs == 40


def test_converged_needs_both_conditions():
    assert not summarize("m", [1.0] * 29, range(29)).converged
    assert summarize("m", [1.0] * 30, range(30)).converged
    vals = [1.0, 1.2] * 15
    s = summarize("m", vals, range(30))
    assert s.ci_width > 0.05 * s.point_estimate and not s.converged


def test_replicate_contract():
    with pytest.raises(ValueError):
        replicate_until_converged(lambda s: 1.0, 10)


def test_low_variance_scenario_converges_at_30():
    # default load 0.9 with the light-tailed k=2 sizes
    w = WorkloadSpec.synthetic(k=2.0, sigma=0.5, rho=0.9)
    s = replicate_until_converged(lambda seed: run_simulation(w, SRPT, 10000, seed).mst, 200)
    assert s.converged and s.n_runs == 30


def test_light_load_converges_at_30():
    w = WorkloadSpec.synthetic(k=2.0, sigma=0.5, rho=0.5)
    s = replicate_until_converged(lambda seed: run_simulation(w, SRPT, 10000, seed).mst, 200)
    assert s.converged and s.n_runs == 30


def test_heavy_tail_scenario_needs_more_runs():
    w = WorkloadSpec.synthetic(k=0.25, sigma=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = replicate_until_converged(lambda seed: run_simulation(w, SRPT, 10000, seed).mst, 60)
    assert s.n_runs > 30


def test_seeds_digest_stable():
    assert seeds_digest([0, 1, 2]) == seeds_digest(range(3))
    assert seeds_digest([0, 1, 2]) != seeds_digest([0, 1, 3])
    assert len(seeds_digest([5])) == 16


def test_ratio_self_is_one():
    s = summarize("mst", [2.0, 2.2, 1.9] * 10, range(30))
    assert normalize_against_baseline(s, s).value == 1.0
    assert paired_ratio(s.values, s.values) == (1.0, 0.0)


def test_ratio_zero_baseline():
    z = summarize("mst", [0.0] * 30, range(30))
    with pytest.raises(ContractViolation):
        normalize_against_baseline(z, z)
    with pytest.raises(ContractViolation):
        paired_ratio([1.0, 2.0], [0.0, 0.0])


def test_las_sigma_invariance():
    for seed in (0, 1, 2):
        a = run_simulation(WorkloadSpec.synthetic(k=0.25, sigma=1.0), LAS_POLICY, 10000, seed)
        b = run_simulation(WorkloadSpec.synthetic(k=0.25, sigma=2.0), LAS_POLICY, 10000, seed)
        assert np.array_equal(a.sojourn, b.sojourn)


def test_paired_seeds_reduce_ratio_variance():
    w = WorkloadSpec.synthetic(k=0.25, sigma=1.0)
    seh = [run_simulation(w, SEH, 3000, s).mst for s in range(60)]
    srpt_same = [run_simulation(w, SRPT, 3000, s).mst for s in range(60)]
    srpt_other = [run_simulation(w, SRPT, 3000, 1000 + s).mst for s in range(60)]
    paired = np.array(seh) / np.array(srpt_same)
    independent = np.array(seh) / np.array(srpt_other)
    assert paired.var() < independent.var()
    assert paired_ratio(seh, srpt_same).half_width < \
        normalize_against_baseline(summarize("a", seh, range(60)),
                                   summarize("b", srpt_other, range(60))).half_width
