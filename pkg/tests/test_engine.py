import math

import numpy as np
import pytest

from estsched.engine import (
    LAS_EPS, EngineError, EventKind, Job, Simulator, run_simulation, select_job,
)
from estsched.policies import FCFS, LAS_POLICY, POLICY_NAMES, SEH, SEPT, SERPT, SRPT, get_policy
from estsched.workload import NonPositiveSample, ScriptedWorkload, WorkloadSpec, sample_trace_path

ALL = POLICY_NAMES


def scripted(jobs):
    return ScriptedWorkload([(t, s, s if e is None else e) for t, s, e in jobs])


@pytest.mark.parametrize("name", ALL)
def test_single_job(name):
    res = run_simulation(scripted([(0, 5, None)]), get_policy(name), 1, 0)
    assert res.completion.tolist() == [5.0]
    assert res.sojourn.tolist() == [5.0]


def test_srpt_preemption_hand_trace():
    # job 0 runs 0..2, job 1 preempts and runs 2..3, job 0 resumes with 8 left
    res = run_simulation(scripted([(0, 10, None), (2, 1, None)]), SRPT, 2, 0)
    assert res.completion.tolist() == [11.0, 3.0]


def test_advance_departure_first():
    sim = Simulator(scripted([(0, 3, None), (5, 1, None)]), SRPT, 2, 0)
    assert sim.advance().kind is EventKind.ARRIVAL
    ev = sim.advance()
    assert ev.kind is EventKind.DEPARTURE and ev.time == 3.0


def test_advance_arrival_first():
    sim = Simulator(scripted([(0, 5, None), (3, 100, None)]), SRPT, 2, 0)
    sim.advance()
    ev = sim.advance()
    assert ev.kind is EventKind.ARRIVAL and ev.time == 3.0
    assert sim.serving.id == 0 and sim.serving.attained == 3.0


def test_las_share_split():
    sim = Simulator(scripted([(0, 10, None), (0, 10, None), (4, 10, None)]), LAS_POLICY, 3, 0)
    sim.advance()
    sim.advance()
    assert [j.id for j in sim.in_service()] == [0, 1]
    sim.advance()        # third arrival at t=4
    assert sim.clock == 4.0
    assert [sim.attained_of(sim.present[i]) for i in (0, 1)] == [2.0, 2.0]


def test_las_catch_up_hand_trace():
    # A alone until 2; B runs alone until it catches up at 4; then they share:
    # B's 3 remaining units take 6 time units (done at 10), A finishes at 15.
    res = run_simulation(scripted([(0, 10, None), (2, 5, None)]), LAS_POLICY, 2, 0)
    assert res.completion.tolist() == [15.0, 10.0]


def test_las_catch_up_event_emitted():
    sim = Simulator(scripted([(0, 10, None), (2, 5, None)]), LAS_POLICY, 2, 0)
    kinds = []
    while not sim.done:
        kinds.append(sim.advance().kind)
    assert EventKind.LAS_CATCHUP in kinds


def _jobs(*specs):
    return [Job(i, 0.0, s, e, attained=a) for i, (s, e, a) in enumerate(specs)]


def test_select_job_examples():
    q = _jobs((4, 4, 0), (2, 2, 0), (7, 7, 0))
    assert select_job(q, SRPT).id == 1
    q = _jobs((20, 20, 0), (5, 5, 0))
    assert select_job(q, SEH).id == 1
    q = _jobs((9, 9, 0), (9, 9, 0), (9, 9, 3))
    assert [j.id for j in select_job(q, LAS_POLICY)] == [0, 1]


def test_select_job_tie_break():
    q = [Job(5, 1.0, 4, 4), Job(2, 1.0, 4, 4), Job(9, 0.5, 4, 4)]
    assert select_job(q, SEPT).id == 9
    assert select_job(q[:2], SEPT).id == 2
    with pytest.raises(ValueError):
        select_job([], SRPT)


def test_las_tolerance():
    q = _jobs((9, 9, 1.0), (9, 9, 1.0 + LAS_EPS / 2), (9, 9, 1.0 + 10 * LAS_EPS))
    assert [j.id for j in select_job(q, LAS_POLICY)] == [0, 1]


def test_serpt_blocking():
    # the first job exhausts its estimate (900) and keeps the server for 100 more
    w = scripted([(0, 1000, 900), (950, 1, 1)])
    res = run_simulation(w, SERPT, 2, 0)
    assert res.completion.tolist() == [1000.0, 1001.0]
    res = run_simulation(w, SEH, 2, 0)
    assert res.completion.tolist() == [1001.0, 951.0]


def test_fcfs_order():
    res = run_simulation(scripted([(0, 5, None), (1, 1, None), (2, 1, None)]), FCFS, 3, 0)
    assert res.completion.tolist() == [5.0, 6.0, 7.0]


@pytest.mark.parametrize("name", ["SRPT", "SERPT", "SEPT", "SEH", "GITTINS", "FCFS"])
@pytest.mark.parametrize("seed", [0, 1])
def test_heap_matches_reference_selection(name, seed):
    w = WorkloadSpec.synthetic(k=0.5, sigma=1.0, rho=0.9)
    p = get_policy(name, w.error_model)
    fast = run_simulation(w, p, 1500, seed, record_decisions=True)
    slow = run_simulation(w, p, 1500, seed, record_decisions=True, reference=True)
    assert fast.decisions == slow.decisions
    assert np.array_equal(fast.completion, slow.completion)


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_exact_estimates_argmax_equivalence(seed):
    w = WorkloadSpec.synthetic(k=0.5, sigma=0.0, rho=0.9)
    srpt = run_simulation(w, SRPT, 2000, seed, record_decisions=True).decisions
    for name in ("SERPT", "GITTINS"):
        other = run_simulation(w, get_policy(name, w.error_model), 2000, seed,
                               record_decisions=True).decisions
        assert other == srpt, name


def test_exact_estimates_seh_differs_from_srpt():
    # Exact sizes: a job at a=8 of s=10 has 2 left, but its SEH score is
    # 1/(10 - 8 + 64/20) = 1/5.2 < 1/4, so a fresh size-4 job wins under SEH.
    w = scripted([(0, 10, None), (8, 4, None)])
    assert run_simulation(w, SRPT, 2, 0).completion.tolist() == [10.0, 14.0]
    assert run_simulation(w, SEH, 2, 0).completion.tolist() == [14.0, 12.0]


def _same(a, b):
    return (np.array_equal(a.ids, b.ids) and np.array_equal(a.completion, b.completion)
            and np.array_equal(a.arrival, b.arrival) and np.array_equal(a.est_size, b.est_size)
            and a.area == b.area and a.busy_time == b.busy_time and a.end_time == b.end_time
            and a.n_arrived == b.n_arrived)


@pytest.mark.parametrize("name", ALL)
@pytest.mark.parametrize("k,sigma", [(0.25, 0.5), (2.0, 2.0), (1.0, 0.0)])
def test_compiled_matches_python(name, k, sigma):
    w = WorkloadSpec.synthetic(k=k, sigma=sigma, rho=0.9)
    p = get_policy(name, w.error_model)
    for seed in (11, 12):
        assert _same(run_simulation(w, p, 3000, seed, engine="compiled"),
                     run_simulation(w, p, 3000, seed, engine="python"))


@pytest.mark.parametrize("name", ["SRPT", "SEH", "LAS"])
def test_compiled_matches_python_on_trace(name):
    w = WorkloadSpec.from_trace(sample_trace_path(), sigma=1.0)
    p = get_policy(name, w.error_model)
    a = run_simulation(w, p, 24443, 2, engine="compiled")
    b = run_simulation(w, p, 24443, 2, engine="python")
    assert _same(a, b)
    assert a.n_arrived == 24443 and a.n_jobs < 24443


def test_compiled_rejects_custom_policy():
    from estsched.policies import Policy, SCORE
    custom = Policy("CUSTOM", SCORE, True, False, lambda a, s, e: 1.0 / (s - a))
    w = WorkloadSpec.synthetic(k=1.0)
    with pytest.raises(ValueError):
        run_simulation(w, custom, 10, 0, engine="compiled")
    assert run_simulation(w, custom, 200, 0).mst == run_simulation(w, SRPT, 200, 0).mst


@pytest.mark.parametrize("name", ALL)
def test_determinism(name):
    w = WorkloadSpec.synthetic(k=0.25, sigma=1.0)
    p = get_policy(name, w.error_model)
    a, b = run_simulation(w, p, 5000, 42), run_simulation(w, p, 5000, 42)
    assert _same(a, b) and a.mst == b.mst


def test_horizon_semantics():
    w = WorkloadSpec.synthetic(k=0.5, sigma=0.5)
    res = run_simulation(w, SEH, 1000, 1)
    assert res.ids.tolist() == list(range(1000))
    assert res.n_arrived >= 1000
    assert np.all(res.completion >= res.arrival + res.true_size * (1 - 1e-12))


@pytest.mark.parametrize("name", ALL)
def test_invariants_hold_every_event(name):
    w = WorkloadSpec.synthetic(k=0.25, sigma=1.0)
    sim = Simulator(w, get_policy(name, w.error_model), 400, 9)
    last = 0.0
    while not sim.done:
        ev = sim.advance()
        assert ev.time >= last
        last = ev.time
        sim.check_invariants()


@pytest.mark.parametrize("name", ALL)
def test_work_conservation(name):
    w = WorkloadSpec.synthetic(k=0.5, sigma=1.0)
    sim = Simulator(w, get_policy(name, w.error_model), 2000, 4)
    sim.run()
    delivered = sim.completed_work + sum(sim.attained_of(j) for j in sim.present.values())
    assert delivered == pytest.approx(sim.busy_time, rel=1e-12)


@pytest.mark.parametrize("name", ALL)
def test_littles_law(name):
    w = WorkloadSpec.synthetic(k=1.0, sigma=0.5, rho=0.7)
    res = run_simulation(w, get_policy(name, w.error_model), 10000, 21)
    assert res.time_avg_in_system == pytest.approx(res.arrival_rate_empirical * res.mst,
                                                   rel=0.02)


def test_non_positive_sample_is_reported():
    with pytest.raises(NonPositiveSample, match="job index 1"):
        ScriptedWorkload([(0, 1, 1), (1, 0.0, 1)])
    stream = WorkloadSpec.synthetic(k=1.0).stream(0)
    stream._size_rng = _ZeroAt(5)
    with pytest.raises(NonPositiveSample, match="job index 5"):
        stream.sample()


class _ZeroAt:
    def __init__(self, i):
        self.i = i

    def weibull(self, k, n):
        x = np.ones(n)
        x[self.i] = 0.0
        return x


def test_underflow_signal():
    sim = Simulator(scripted([(0, 1, None)]), SRPT, 2, 0)
    sim.advance()
    sim.advance()
    with pytest.raises(EngineError, match="underflow"):
        sim.advance()


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        run_simulation(WorkloadSpec.synthetic(), SRPT, 0, 0)


def test_run_result_pickles():
    import pickle
    res = run_simulation(WorkloadSpec.synthetic(), SEH, 100, 0)
    back = pickle.loads(pickle.dumps(res))
    assert back.mst == res.mst and math.isfinite(back.mean_slowdown)
