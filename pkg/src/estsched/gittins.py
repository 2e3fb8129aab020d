"""Gittins-style index built from the estimation-error distribution alone.

The error model is multiplicative, ``S_hat = S * X`` with ``X`` log-normal and
independent of ``S``.  Given only the estimate ``s_hat`` the true size is
treated as ``S = s_hat / X``.  The index used by the ``GITTINS`` policy is::

    G(a, s_hat) = 1 / (s_hat - a * E[X | X <= s_hat / a])      (a > 0)
    G(0, s_hat) = 1 / s_hat

``truncated_mean`` evaluates the conditional mean in closed form; the
quadrature routines in this module are independent oracles for it and for the
efficiency function ``J(a, delta, s_hat)`` the index is derived from.

Note that the exact supremum over ``delta`` of ``J`` is *not* equal to the
closed-form index above: at ``a = 0`` the supremum is close to
``1 / (s_hat E[1/X])`` rather than ``1 / s_hat``.  ``efficiency_sup`` exposes the numeric supremum
so the two can be compared.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

_SQRT2 = math.sqrt(2.0)

# Half-width, in units of sigma, beyond which the normal density is ignored
# during quadrature (exp(-40**2 / 2) is far below double precision).
_TAIL_SIGMAS = 40.0


class QuadratureError(RuntimeError):
    def __init__(self, what: str, abserr: float, value: float):
        super().__init__(f"quadrature for {what} did not converge "
                         f"(value {value!r}, estimated abs error {abserr:.3g})")
        self.abserr = abserr
        self.value = value


@dataclass(frozen=True)
class ErrorModel:
    """Log-normal multiplicative estimation error ``X = exp(mu + sigma * Z)``.

    ``sigma == 0`` is allowed as the degenerate model ``X == 1`` (exact
    estimates).
    """

    mu: float = 0.0
    sigma: float = 0.5
    family: str = "lognormal"

    def __post_init__(self):
        if self.family != "lognormal":
            raise ValueError(f"unsupported error family {self.family!r}")
        if not self.sigma >= 0.0 or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be >= 0, got {self.sigma!r}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu!r}")

    @property
    def support_lower(self) -> float:
        return math.exp(self.mu) if self.sigma == 0 else 0.0

    @property
    def support_upper(self) -> float:
        return math.exp(self.mu) if self.sigma == 0 else math.inf

    @property
    def median(self) -> float:
        return math.exp(self.mu)

    @property
    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma ** 2)

    @property
    def is_exact(self) -> bool:
        return self.sigma == 0.0

    def sample(self, rng: np.random.Generator, size=None):
        return np.exp(self.mu + self.sigma * rng.standard_normal(size))


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def truncated_mean(model: ErrorModel, t: float) -> float:
    """``E[X | X <= t]`` for the log-normal error ``X``.

    Uses ``exp(mu + sigma^2/2) * Phi(z - sigma) / Phi(z)`` with
    ``z = (ln t - mu) / sigma``.  For ``z < 0`` the ratio of normal CDFs is
    rewritten with the scaled complementary error function ``erfcx``, which
    gives ``t * erfcx(-(z - sigma)/sqrt2) / erfcx(-z/sqrt2)``.  That form has no
    underflow cutoff at all: as ``t -> 0`` it tends to ``t * |z| / (|z| + sigma)``
    without ever forming ``Phi(z)`` itself.
    """
    if not t > 0.0:
        raise ValueError(f"t must be positive, got {t!r}")
    if model.sigma == 0.0:
        x = math.exp(model.mu)
        # Conditioning on a null event; return its limit from above.
        return x if t >= x else t
    if math.isinf(t):
        return model.mean
    sigma = model.sigma
    z = (math.log(t) - model.mu) / sigma
    if z >= 0.0:
        return model.mean * _norm_cdf(z - sigma) / _norm_cdf(z)
    return t * float(special.erfcx(-(z - sigma) / _SQRT2)) / float(special.erfcx(-z / _SQRT2))


def gittins_score(a: float, s_hat: float, model: ErrorModel) -> float:
    """Index of a job with attained service ``a`` and estimate ``s_hat``.

    The log-normal support is unbounded above, so only the truncated branch
    applies.  The denominator is positive because ``E[X | X <= t] < t``.
    """
    if a < 0.0 or not s_hat > 0.0:
        raise ValueError(f"need a >= 0 and s_hat > 0, got a={a!r}, s_hat={s_hat!r}")
    if a == 0.0:
        return 1.0 / s_hat
    t = s_hat / a
    return 1.0 / (s_hat - a * truncated_mean(model, t))


class GittinsScore:
    """Engine adapter: ``(attained, true_size, est_size) -> index``."""

    __slots__ = ("model",)

    def __init__(self, model: ErrorModel):
        self.model = model

    def __call__(self, a, s, s_hat):
        return gittins_score(a, s_hat, self.model)

    def __repr__(self):
        return f"GittinsScore({self.model!r})"

    def __eq__(self, other):
        return isinstance(other, GittinsScore) and other.model == self.model

    def __hash__(self):
        return hash(self.model)

    def __reduce__(self):
        return (GittinsScore, (self.model,))


def gittins_score_exponent_form(a: float, s_hat: float, model: ErrorModel,
                                cdf: str = "lognormal") -> float:
    """Comparison-only variant ``1 / (s_hat - a * exp(mu + g))`` with

        g = sigma^2 F((ln(s_hat/a) - mu - sigma^2)/sigma) / (2 F((ln(s_hat/a) - mu)/sigma))

    where ``F`` is either the Log-N(0, sigma^2) CDF (``cdf="lognormal"``) or the
    standard normal CDF (``cdf="normal"``).  Neither reading reproduces the
    truncated-mean index; this exists so the discrepancy can be tabulated.
    Returns ``nan`` where the expression is undefined.
    """
    if a == 0.0:
        return 1.0 / s_hat
    sigma, mu = model.sigma, model.mu
    r = math.log(s_hat / a)
    w1 = (r - mu - sigma ** 2) / sigma
    w2 = (r - mu) / sigma
    if cdf == "normal":
        f1, f2 = _norm_cdf(w1), _norm_cdf(w2)
    elif cdf == "lognormal":
        def f(w):
            return _norm_cdf(math.log(w) / sigma) if w > 0 else 0.0
        f1, f2 = f(w1), f(w2)
    else:
        raise ValueError(f"cdf must be 'lognormal' or 'normal', got {cdf!r}")
    if f2 == 0.0:
        return math.nan
    g = sigma ** 2 * f1 / (2.0 * f2)
    denom = s_hat - a * math.exp(mu + g)
    return 1.0 / denom if denom > 0 else math.nan


# --------------------------------------------------------------------------
# Quadrature oracles.  All integrals are taken over y = ln x, against the
# normal density of ln X rescaled so that its peak on the interval is 1.

def _quad(f, lo, hi, what, epsabs=1e-13, epsrel=1e-12):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr, info = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel,
                                             limit=500, full_output=1)[:3]
    tol = max(epsabs, epsrel * abs(value))
    if abserr > 100 * tol:
        raise QuadratureError(what, abserr, value)
    return value


def _normal_piecewise(f, lo, hi, model: ErrorModel, anchor: float, what: str) -> float:
    """``integral_lo^hi f(y) exp(-((y-mu)^2 - (anchor-mu)^2) / (2 sigma^2)) dy``.

    The range is clipped to where the Gaussian factor is non-negligible and
    split at its mode so adaptive quadrature sees the peak as an endpoint.
    """
    mu, sigma = model.mu, model.sigma
    if hi <= lo:
        return 0.0
    peak = min(max(mu, lo), hi)
    margin = _TAIL_SIGMAS * sigma + sigma ** 2
    lo_c = max(lo, peak - margin)
    hi_c = min(hi, peak + margin)
    c = (anchor - mu) ** 2
    two_var = 2.0 * sigma ** 2

    def g(y):
        return f(y) * math.exp(-((y - mu) ** 2 - c) / two_var)

    total = 0.0
    for a, b in ((lo_c, peak), (peak, hi_c)):
        if b > a:
            total += _quad(g, a, b, what)
    return total


def truncated_mean_quadrature(model: ErrorModel, t: float) -> float:
    """``E[X | X <= t]`` by adaptive quadrature in log space (oracle)."""
    if model.sigma == 0.0:
        return truncated_mean(model, t)
    L = math.log(t) if math.isfinite(t) else math.inf
    anchor = min(L, model.mu)
    # Factor exp(y) as exp(L) * exp(y - L) to keep the numerator O(1).
    shift = L if math.isfinite(L) else model.mu + model.sigma ** 2
    num = _normal_piecewise(lambda y: math.exp(y - shift), -math.inf, L, model, anchor,
                            "truncated mean numerator")
    den = _normal_piecewise(lambda y: 1.0, -math.inf, L, model, anchor,
                            "truncated mean denominator")
    return math.exp(shift) * num / den


def efficiency_terms(a: float, delta: float, s_hat: float, model: ErrorModel):
    """``(P(S - a <= delta | S > a), E[min(S - a, delta) | S > a])`` by quadrature,
    with ``S = s_hat / X``."""
    if a < 0.0 or not delta > 0.0 or not s_hat > 0.0:
        raise ValueError("need a >= 0, delta > 0, s_hat > 0")
    if model.sigma == 0.0:
        s = s_hat / math.exp(model.mu)
        if s <= a:
            raise ValueError("P(S > a) is zero for this degenerate model")
        rem = s - a
        return (1.0 if rem <= delta else 0.0), min(rem, delta)
    # S > a  <=>  Y < L ;  S - a <= delta  <=>  Y >= L2
    L = math.log(s_hat / a) if a > 0.0 else math.inf
    L2 = math.log(s_hat / (a + delta))
    anchor = min(L, model.mu)
    done = _normal_piecewise(lambda y: 1.0, L2, L, model, anchor, "completion probability")
    short = _normal_piecewise(lambda y: 1.0, -math.inf, L2, model, anchor, "P(S - a > delta)")
    rem = _normal_piecewise(lambda y: s_hat * math.exp(-y) - a, L2, L, model, anchor,
                            "expected remaining work")
    mass = done + short
    if not mass > 0.0:
        raise ValueError("P(S > a) is numerically zero for these arguments")
    return done / mass, (delta * short + rem) / mass


def efficiency_oracle(a: float, delta: float, s_hat: float, model: ErrorModel) -> float:
    """Efficiency ``J(a, delta, s_hat)`` with ``S = s_hat / X``, by quadrature::

        J = P(S - a <= delta | S > a) / E[min(S - a, delta) | S > a]
    """
    prob, expected = efficiency_terms(a, delta, s_hat, model)
    return prob / expected


def efficiency_limit(a: float, s_hat: float, model: ErrorModel) -> float:
    """``lim_{delta -> inf} J = 1 / E[S - a | S > a]`` by quadrature."""
    L = math.log(s_hat / a) if a > 0.0 else math.inf
    anchor = min(L, model.mu)
    mass = _normal_piecewise(lambda y: 1.0, -math.inf, L, model, anchor, "P(S > a)")
    rem = _normal_piecewise(lambda y: s_hat * math.exp(-y) - a, -math.inf, L, model, anchor,
                            "expected remaining work")
    return mass / rem


def efficiency_sup(a: float, s_hat: float, model: ErrorModel,
                   n_grid: int = 160, span: tuple[float, float] = (-6.0, 6.0)):
    """Numeric ``sup_delta J(a, delta, s_hat)``.

    Scans ``delta = s_hat * 10**u`` on a log grid, refines around the best grid
    point with a bounded scalar search, and also considers the
    ``delta -> inf`` limit.  Returns ``(sup, argmax_delta)`` where
    ``argmax_delta`` is ``inf`` when the limit wins.
    """
    from scipy.optimize import minimize_scalar

    us = np.linspace(span[0], span[1], n_grid)
    vals = np.array([efficiency_oracle(a, s_hat * 10.0 ** u, s_hat, model) for u in us])
    i = int(np.argmax(vals))
    best, best_delta = float(vals[i]), s_hat * 10.0 ** us[i]
    lo, hi = us[max(i - 1, 0)], us[min(i + 1, n_grid - 1)]
    if hi > lo:
        res = minimize_scalar(lambda u: -efficiency_oracle(a, s_hat * 10.0 ** u, s_hat, model),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        if -res.fun > best:
            best, best_delta = float(-res.fun), s_hat * 10.0 ** res.x
    limit = efficiency_limit(a, s_hat, model)
    if limit > best:
        best, best_delta = limit, math.inf
    return best, best_delta
