"""Compiled event loop used by :func:`estsched.engine.run_simulation`.

Same algorithm and the same floating-point operation order as
:class:`estsched.engine.Simulator`, so the two agree bit for bit; the Python
simulator stays the instrumented reference (event stream, decision trace,
invariant checks).  The clock is compensated the same way.  Jobs are passed in as arrays; if a run needs more
arrivals than were supplied the kernel returns ``NEED_MORE`` and the caller
retries with a longer prefix of the same stream.
"""
import ctypes
import heapq
import math

import numpy as np
from numba import njit
from numba.extending import get_cython_function_address

SRPT, SERPT, SEPT, SEH, GITTINS, FCFS, LAS = range(7)
OK, NEED_MORE = 0, 1

_SQRT2 = math.sqrt(2.0)
_LAS_EPS = 1e-9

# scipy's erfcx via its Cython export; a ctypes pointer rules out on-disk caching
# for everything that calls it.
_erfcx = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(
    get_cython_function_address("scipy.special.cython_special", "__pyx_fuse_1erfcx"))


@njit(cache=True)
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True)
def _norm_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit
def _truncated_mean(t, mu, sigma, mean_x):
    if sigma == 0.0:
        x = math.exp(mu)
        return x if t >= x else t
    if math.isinf(t):
        return mean_x
    z = (math.log(t) - mu) / sigma
    if z >= 0.0:
        return mean_x * _norm_cdf(z - sigma) / _norm_cdf(z)
    return t * _erfcx(-(z - sigma) / _SQRT2) / _erfcx(-z / _SQRT2)


@njit
def _score(code, a, s, e, mu, sigma, mean_x, freeze):
    if code == SRPT:
        return 1.0 / (s - a)
    if code == SERPT:
        if e > a:
            return 1.0 / (e - a)
        return np.inf
    if code == SEPT:
        return 1.0 / e
    if code == SEH:
        if a < e:
            return 1.0 / (e - a * (1.0 - a / (2.0 * e)))
        return freeze / e
    if code == GITTINS:
        if a == 0.0:
            return 1.0 / e
        t = e / a
        return 1.0 / (e - a * _truncated_mean(t, mu, sigma, mean_x))
    return 0.0


@njit
def run_score(code, arrival, size, est, exhausted, horizon, stop_at_last,
              mu, sigma, mean_x, freeze):
    n_avail = arrival.shape[0]
    completion = np.full(horizon, np.nan)
    sojourn = np.full(horizon, np.nan)
    attained = np.zeros(n_avail)
    waiting = [(0.0, 0)]
    waiting.pop()
    clock = 0.0
    clock_lo = 0.0
    serving = -1
    nxt = 0
    pending = horizon
    n_present = 0
    area = 0.0
    busy = 0.0
    while pending > 0:
        if nxt >= n_avail:
            if not exhausted:
                return completion, sojourn, clock, area, nxt, busy, NEED_MORE
            if stop_at_last:
                break
        d_arr = np.inf
        if nxt < n_avail:
            d_arr = (arrival[nxt] - clock) - clock_lo
        d_dep = np.inf
        if serving >= 0:
            d_dep = size[serving] - attained[serving]
        departure = d_dep <= d_arr
        elapsed = d_dep if departure else d_arr
        if math.isinf(elapsed):
            raise RuntimeError("event queue underflow before the horizon completed")
        if elapsed < 0.0:
            raise RuntimeError("negative elapsed time")
        area += n_present * elapsed
        if serving >= 0:
            busy += elapsed
            attained[serving] += elapsed
        if departure:
            clock, clock_lo = _two_sum(clock, clock_lo + elapsed)
            j = serving
            attained[j] = size[j]
            n_present -= 1
            if j < horizon:
                completion[j] = clock
                sojourn[j] = (clock - arrival[j]) + clock_lo
                pending -= 1
            if len(waiting) > 0:
                serving = heapq.heappop(waiting)[1]
            else:
                serving = -1
        else:
            clock = arrival[nxt]
            clock_lo = 0.0
            j = nxt
            nxt += 1
            n_present += 1
            if serving < 0:
                serving = j
            else:
                new_key = -_score(code, 0.0, size[j], est[j], mu, sigma, mean_x, freeze)
                cur_key = -_score(code, attained[serving], size[serving], est[serving],
                                  mu, sigma, mean_x, freeze)
                # the newcomer has the larger id, so it loses exact ties
                if new_key < cur_key:
                    heapq.heappush(waiting, (cur_key, serving))
                    serving = j
                else:
                    heapq.heappush(waiting, (new_key, j))
            if stop_at_last and exhausted and nxt >= n_avail:
                break
    return completion, sojourn, clock, area, nxt, busy, OK


@njit(cache=True)
def run_las(arrival, size, exhausted, horizon, stop_at_last):
    n_avail = arrival.shape[0]
    completion = np.full(horizon, np.nan)
    sojourn = np.full(horizon, np.nan)
    active = [(0.0, 0)]
    active.pop()
    waiting = [(0.0, 0)]
    waiting.pop()
    level = 0.0
    clock = 0.0
    clock_lo = 0.0
    nxt = 0
    pending = horizon
    n_present = 0
    area = 0.0
    busy = 0.0
    while pending > 0:
        if nxt >= n_avail:
            if not exhausted:
                return completion, sojourn, clock, area, nxt, busy, NEED_MORE
            if stop_at_last:
                break
        d_arr = np.inf
        if nxt < n_avail:
            d_arr = (arrival[nxt] - clock) - clock_lo
        d_dep = np.inf
        d_catch = np.inf
        n = len(active)
        if n > 0:
            d_dep = (active[0][0] - level) * n
            if len(waiting) > 0:
                d_catch = (waiting[0][0] - level) * n
        if d_dep <= d_catch and d_dep <= d_arr:
            kind = 0
            elapsed = d_dep
        elif d_catch <= d_arr:
            kind = 1
            elapsed = d_catch
        else:
            kind = 2
            elapsed = d_arr
        if math.isinf(elapsed):
            raise RuntimeError("event queue underflow before the horizon completed")
        if elapsed < 0.0:
            raise RuntimeError("negative elapsed time")
        area += n_present * elapsed
        if n > 0:
            busy += elapsed
            level += elapsed / n
        if kind == 2:
            clock = arrival[nxt]
            clock_lo = 0.0
        else:
            clock, clock_lo = _two_sum(clock, clock_lo + elapsed)

        if kind == 2:
            j = nxt
            nxt += 1
            n_present += 1
            if len(active) > 0 and level > 0.0:
                while len(active) > 0:
                    old = heapq.heappop(active)[1]
                    heapq.heappush(waiting, (level, old))
                level = 0.0
            if len(active) == 0:
                level = 0.0
            heapq.heappush(active, (size[j], j))
            if stop_at_last and exhausted and nxt >= n_avail:
                break
            continue
        if kind == 0:
            first = heapq.heappop(active)
            level = first[0]
            n_present -= 1
            if first[1] < horizon:
                completion[first[1]] = clock
                sojourn[first[1]] = (clock - arrival[first[1]]) + clock_lo
                pending -= 1
            while len(active) > 0 and active[0][0] <= level:
                done = heapq.heappop(active)
                n_present -= 1
                if done[1] < horizon:
                    completion[done[1]] = clock
                    sojourn[done[1]] = (clock - arrival[done[1]]) + clock_lo
                    pending -= 1
        else:
            level = waiting[0][0]
        # refill the share set from waiting jobs at (or within eps of) the level
        if len(active) == 0 and len(waiting) > 0:
            level = waiting[0][0]
        while len(waiting) > 0 and waiting[0][0] <= level + _LAS_EPS:
            w = heapq.heappop(waiting)
            heapq.heappush(active, (size[w[1]], w[1]))
    return completion, sojourn, clock, area, nxt, busy, OK
