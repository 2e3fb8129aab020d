import math

import pytest
from hypothesis import given, settings, strategies as st

from estsched.gittins import ErrorModel, gittins_score
from estsched.policies import (
    INF_SCORE, ContractViolation, get_policy, policy_catalog, score_seh, score_sept,
    score_serpt, score_srpt, suggest_policy_name,
)

pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)
frac = st.floats(min_value=0.0, max_value=0.999)


@pytest.mark.parametrize("a, s, expected", [(0, 4, 0.25), (3, 4, 1.0), (3.9, 4, 10.0)])
def test_srpt_values(a, s, expected):
    assert score_srpt(a, s) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("a, s", [(4, 4), (5, 4), (-1, 4)])
def test_srpt_outside_domain(a, s):
    with pytest.raises(ContractViolation):
        score_srpt(a, s)


def test_serpt_values():
    assert score_serpt(0, 10) == pytest.approx(0.1)
    assert score_serpt(10, 10) == INF_SCORE
    # a job of true size 1000 estimated at 900, after 900 units of service
    assert score_serpt(900, 900) == math.inf
    assert score_serpt(900, 900) > score_serpt(0, 1e-6)


def test_sept_values():
    assert score_sept(10) == pytest.approx(0.1)
    assert score_sept(0.5) == 2.0
    sept = get_policy("SEPT")
    assert sept.score(5.0, None, 10.0) == sept.score(0.0, None, 10.0) == pytest.approx(0.1)


def test_seh_values():
    assert score_seh(0, 20) == pytest.approx(0.05)
    assert score_seh(20, 20) == pytest.approx(0.10)
    assert score_seh(10, 20) == pytest.approx(0.08)
    assert score_seh(1e6, 20) == pytest.approx(0.10)


def test_seh_continuity_at_estimate():
    for s_hat in (0.3, 1.0, 20.0, 1234.5):
        left = 1.0 / (s_hat - s_hat * (1.0 - s_hat / (2.0 * s_hat)))
        assert score_seh(s_hat, s_hat) == left
        assert score_seh(math.nextafter(s_hat, 0), s_hat) == pytest.approx(left, rel=1e-12)


@settings(max_examples=300)
@given(pos)
def test_zero_attained_agreement(s_hat):
    model = ErrorModel(sigma=0.5)
    assert score_seh(0.0, s_hat) == score_sept(s_hat) == gittins_score(0.0, s_hat, model)


@settings(max_examples=300)
@given(pos, frac, frac)
def test_seh_monotone(s_hat, u, v):
    a1, a2 = sorted((u * 3 * s_hat, v * 3 * s_hat))
    assert score_seh(a1, s_hat) <= score_seh(a2, s_hat)
    if a2 < s_hat and a2 - a1 > 1e-9 * s_hat:
        assert score_seh(a1, s_hat) < score_seh(a2, s_hat)


@settings(max_examples=300)
@given(pos, pos, frac)
def test_scores_decrease_in_size(s1, s2, u):
    lo, hi = sorted((s1, s2))
    if hi <= lo * (1 + 1e-9):
        return
    a = u * lo
    assert score_srpt(a, lo) > score_srpt(a, hi)
    assert score_serpt(a, lo) > score_serpt(a, hi)
    assert score_sept(lo) > score_sept(hi)
    assert score_seh(a, lo) > score_seh(a, hi)


@settings(max_examples=300)
@given(pos, st.floats(min_value=2.0001, max_value=1e3))
def test_frozen_large_job_cannot_block_small(s_small, factor):
    s_large = s_small * factor
    assert score_seh(10 * s_large, s_large) < score_seh(0.0, s_small)


def test_serpt_pathology_dominates_finite_scores():
    assert score_serpt(5.0, 5.0) > max(score_serpt(0.0, 1e-9), score_seh(0, 1e-9),
                                       score_srpt(0, 1e-9))


def test_catalog():
    cat = {p.name: p for p in policy_catalog()}
    assert list(cat) == ["SRPT", "SERPT", "SEPT", "SEH", "GITTINS", "LAS", "FCFS"]
    assert cat["SEH"].requires_estimate and not cat["SEH"].requires_true_size
    assert cat["SRPT"].requires_true_size
    assert not cat["LAS"].requires_true_size and not cat["LAS"].requires_estimate
    assert not cat["FCFS"].requires_true_size
    assert [p.name for p in policy_catalog() if p.requires_true_size] == ["SRPT"]


def test_unknown_policy_suggestion():
    assert suggest_policy_name("SRTP") == "SRPT"
    with pytest.raises(KeyError, match="SRPT"):
        get_policy("SRTP")
    assert get_policy("seh").name == "SEH"


def test_gittins_policy_uses_model():
    p1 = get_policy("GITTINS", ErrorModel(sigma=0.5))
    p2 = get_policy("GITTINS", ErrorModel(sigma=2.0))
    assert p1.score(10.0, None, 20.0) != p2.score(10.0, None, 20.0)
