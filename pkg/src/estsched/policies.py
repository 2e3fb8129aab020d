"""Score functions for size-based preemptive scheduling with estimated sizes.

Every score-based policy maps a job's attained service ``a`` together with its
true size ``s`` and/or its size estimate ``s_hat`` to a priority score; the
server always runs the job with the highest score.  ``math.inf`` is used as an
explicit top element of the score order (SERPT's "estimate exhausted" branch)
and compares above every finite score.

LAS and FCFS are not score rules in the same sense; they are carried as
policies with their own ``kind`` so the engine can dispatch on it.
"""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass
from typing import Callable, Optional

INF_SCORE = math.inf

#: Multiplier of the frozen SEH score ``factor / s_hat`` once ``a >= s_hat``.
#: Only the default of 2 makes the score continuous at ``a == s_hat``.
SEH_FREEZE_FACTOR = 2.0

SCORE = "score"
LAS = "las"
FIFO = "fifo"

POLICY_NAMES = ("SRPT", "SERPT", "SEPT", "SEH", "GITTINS", "LAS", "FCFS")


class ContractViolation(ValueError):
    """Raised when a score function is called outside its domain."""


def score_srpt(a: float, s: float) -> float:
    """SRPT: inverse of the true remaining work, ``1 / (s - a)``."""
    if not 0.0 <= a < s:
        raise ContractViolation(f"SRPT score needs 0 <= a < s, got a={a!r}, s={s!r}")
    return 1.0 / (s - a)


def score_serpt(a: float, s_hat: float) -> float:
    """SERPT: inverse remaining *estimated* work; infinite once the estimate is used up."""
    if s_hat > a:
        return 1.0 / (s_hat - a)
    return INF_SCORE


def score_sept(s_hat: float) -> float:
    return 1.0 / s_hat


def score_seh(a: float, s_hat: float, freeze_factor: float = SEH_FREEZE_FACTOR) -> float:
    """Size Estimate Hedging.

    Rises like a damped SERPT score while ``a < s_hat``::

        1 / (s_hat - a * (1 - a / (2 * s_hat)))

    and is frozen at ``freeze_factor / s_hat`` once the job has received its
    estimate, i.e. once it is known to be underestimated.
    """
    if a < s_hat:
        return 1.0 / (s_hat - a * (1.0 - a / (2.0 * s_hat)))
    return freeze_factor / s_hat


# Engine-facing adapters with a uniform (attained, true_size, est_size) signature.
# Module-level so that Policy objects pickle for process pools.

def _srpt(a, s, s_hat):
    return score_srpt(a, s)


def _serpt(a, s, s_hat):
    return score_serpt(a, s_hat)


def _sept(a, s, s_hat):
    return 1.0 / s_hat


class SEHScore:
    """Engine adapter for SEH with a configurable freeze factor."""

    __slots__ = ("freeze_factor",)

    def __init__(self, freeze_factor: float = SEH_FREEZE_FACTOR):
        self.freeze_factor = float(freeze_factor)

    def __call__(self, a, s, s_hat):
        return score_seh(a, s_hat, self.freeze_factor)

    def __eq__(self, other):
        return isinstance(other, SEHScore) and other.freeze_factor == self.freeze_factor

    def __hash__(self):
        return hash(self.freeze_factor)

    def __reduce__(self):
        return (SEHScore, (self.freeze_factor,))


def _fifo(a, s, s_hat):
    return 0.0


@dataclass(frozen=True)
class Policy:
    """A scheduling rule plus the information it is allowed to see.

    ``score`` takes ``(attained, true_size, est_size)``.  It is ``None`` for
    LAS, which is a processor-sharing discipline rather than a score rule.
    FCFS uses a constant score so the engine's arrival-order tie-break makes
    it first-come-first-served.
    """

    name: str
    kind: str
    requires_true_size: bool
    requires_estimate: bool
    score: Optional[Callable[[float, float, float], float]] = None

    @property
    def is_score_based(self) -> bool:
        return self.kind in (SCORE, FIFO)


SRPT = Policy("SRPT", SCORE, True, False, _srpt)
SERPT = Policy("SERPT", SCORE, False, True, _serpt)
SEPT = Policy("SEPT", SCORE, False, True, _sept)
SEH = Policy("SEH", SCORE, False, True, SEHScore())
LAS_POLICY = Policy("LAS", LAS, False, False, None)
FCFS = Policy("FCFS", FIFO, False, False, _fifo)


def seh_policy(freeze_factor: float = SEH_FREEZE_FACTOR) -> Policy:
    if freeze_factor == SEH_FREEZE_FACTOR:
        return SEH
    return Policy("SEH", SCORE, False, True, SEHScore(freeze_factor))


def gittins_policy(error_model=None) -> Policy:
    """The error-distribution-only Gittins policy for a log-normal error model."""
    from .gittins import ErrorModel, GittinsScore

    if error_model is None:
        error_model = ErrorModel()
    return Policy("GITTINS", SCORE, False, True, GittinsScore(error_model))


def policy_catalog(error_model=None) -> list[Policy]:
    """All policies in their canonical order.

    GITTINS depends on the error model in use; pass the workload's model so the
    index matches the errors actually being generated.
    """
    return [SRPT, SERPT, SEPT, SEH, gittins_policy(error_model), LAS_POLICY, FCFS]


def suggest_policy_name(name: str) -> Optional[str]:
    match = difflib.get_close_matches(name.upper(), POLICY_NAMES, n=1, cutoff=0.5)
    return match[0] if match else None


def get_policy(name: str, error_model=None) -> Policy:
    key = name.upper()
    for policy in policy_catalog(error_model):
        if policy.name == key:
            return policy
    hint = suggest_policy_name(name)
    msg = f"unknown policy {name!r}"
    if hint:
        msg += f" (did you mean {hint!r}?)"
    raise KeyError(msg)
