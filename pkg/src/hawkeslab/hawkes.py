"""Exact event-driven simulator for the single-type marked self-exciting process.

Construction: the intensity is piecewise constant between events, so the
next arrival is placed by the inverse-compensator (time-change) method --
a unit-exponential threshold is consumed at the current rate while
competing against the earliest scheduled mark expiry in a priority queue.
No thinning rejection is involved; arrival times, intensity integrals and
driver jumps are exact up to floating point.

Randomness enters through three per-path substreams (thresholds, ``x``
marks, ``y`` marks).  The k-th arrival always consumes the k-th element
of each stream, which couples runs across parameter changes: raising
``a_T`` with the same seed raises the compensator pathwise and therefore
never removes arrivals.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import BudgetError
from .marks import MarkPairConfig
from .seeding import STREAM_THRESHOLD, STREAM_X, STREAM_Y, derived_rng

_OK = 0
_GROW = 1
_BUDGET = 2

DEFAULT_MAX_EVENTS = 10_000_000


@dataclass(frozen=True)
class HawkesParams:
    """Model parameters; ``a_T = 1 - lam / T`` records the criticality gap ``lam``."""

    lam0: float
    a_T: float
    T: float
    tau: float
    marks: MarkPairConfig

    def __post_init__(self):
        if self.lam0 <= 0:
            raise ValueError("lam0 must be positive")
        if not 0.0 <= self.a_T < 1.0:
            raise ValueError("a_T must lie in [0, 1)")
        if self.T <= 0 or self.tau <= 0:
            raise ValueError("T and tau must be positive")
        branching = self.a_T * self.marks.x_dist.mean() * self.marks.y_dist.mean()
        if branching >= 1.0:
            raise ValueError(f"a_T E(X) E(Y) = {branching:.6g} >= 1: explosive regime")

    @property
    def lam(self) -> float:
        """Criticality gap ``T (1 - a_T)``."""
        return self.T * (1.0 - self.a_T)

    @property
    def horizon(self) -> float:
        """Simulation horizon in original (unrescaled) time."""
        return self.T * self.tau


@njit(cache=True)
def _heap_push(heap_t, heap_amt, hn, t, amt):
    i = hn
    heap_t[i] = t
    heap_amt[i] = amt
    while i > 0:
        parent = (i - 1) >> 1
        if heap_t[parent] <= heap_t[i]:
            break
        heap_t[parent], heap_t[i] = heap_t[i], heap_t[parent]
        heap_amt[parent], heap_amt[i] = heap_amt[i], heap_amt[parent]
        i = parent
    return hn + 1


@njit(cache=True)
def _heap_pop(heap_t, heap_amt, hn):
    hn -= 1
    heap_t[0] = heap_t[hn]
    heap_amt[0] = heap_amt[hn]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= hn:
            break
        small = left
        right = left + 1
        if right < hn and heap_t[right] < heap_t[left]:
            small = right
        if heap_t[i] <= heap_t[small]:
            break
        heap_t[i], heap_t[small] = heap_t[small], heap_t[i]
        heap_amt[i], heap_amt[small] = heap_amt[small], heap_amt[i]
        i = small
    return hn


@njit(cache=True)
def _hawkes_core(lam0, a, horizon, max_events, E, X, Y,
                 s_arr, prelam, bp_t, bp_lam, bp_cum, bp_cumsq):
    cap = E.shape[0]
    heap_t = np.empty(cap)
    heap_amt = np.empty(cap)
    hn = 0

    t = 0.0
    lam = lam0
    cum = 0.0
    cumsq = 0.0
    bp_t[0] = 0.0
    bp_lam[0] = lam
    bp_cum[0] = 0.0
    bp_cumsq[0] = 0.0
    nbp = 1
    n = 0
    R = E[0]
    status = _OK

    while True:
        t_arr = t + R / lam
        t_exp = heap_t[0] if hn > 0 else np.inf
        if t_arr >= horizon and t_exp >= horizon:
            dt = horizon - t
            cum += lam * dt
            cumsq += np.sqrt(lam) * dt
            bp_t[nbp] = horizon
            bp_lam[nbp] = lam
            bp_cum[nbp] = cum
            bp_cumsq[nbp] = cumsq
            nbp += 1
            break
        if t_exp <= t_arr:
            dt = t_exp - t
            cum += lam * dt
            cumsq += np.sqrt(lam) * dt
            R -= lam * dt
            lam -= heap_amt[0]
            hn = _heap_pop(heap_t, heap_amt, hn)
            t = t_exp
        else:
            dt = t_arr - t
            cum += lam * dt
            cumsq += np.sqrt(lam) * dt
            t = t_arr
            if n >= max_events:
                status = _BUDGET
                break
            s_arr[n] = t
            prelam[n] = lam
            bump = a * X[n]
            if Y[n] > 0.0 and bump > 0.0:
                lam += bump
                hn = _heap_push(heap_t, heap_amt, hn, t + Y[n], bump)
            n += 1
            if n >= cap:
                status = _GROW
                break
            R = E[n]
        bp_t[nbp] = t
        bp_lam[nbp] = lam
        bp_cum[nbp] = cum
        bp_cumsq[nbp] = cumsq
        nbp += 1
    return status, n, nbp


@dataclass(frozen=True)
class EventLog:
    """One exact path: arrivals, marks, and the piecewise-constant intensity record.

    ``bp_cum`` and ``bp_cumsq`` hold ``int_0^t lam`` and ``int_0^t sqrt(lam)``
    at the breakpoints, so compensators need no quadrature.
    """

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pre_intensity: np.ndarray
    bp_t: np.ndarray
    bp_lam: np.ndarray
    bp_cum: np.ndarray
    bp_cumsq: np.ndarray
    params: HawkesParams
    seed: int
    path_index: int
    budget_exceeded: bool = False
    _cum_x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_cum_x", np.concatenate(([0.0], np.cumsum(self.x))))

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    @property
    def horizon(self) -> float:
        return float(self.bp_t[-1])

    def _piece(self, t):
        return np.searchsorted(self.bp_t, np.asarray(t, dtype=float), side="right") - 1

    def intensity(self, t):
        """Right-continuous intensity value(s) at time(s) ``t``."""
        return self.bp_lam[self._piece(t)]

    def integrated_intensity(self, t):
        t = np.asarray(t, dtype=float)
        i = self._piece(t)
        return self.bp_cum[i] + self.bp_lam[i] * (t - self.bp_t[i])

    def integrated_sqrt_intensity(self, t):
        t = np.asarray(t, dtype=float)
        i = self._piece(t)
        return self.bp_cumsq[i] + np.sqrt(self.bp_lam[i]) * (t - self.bp_t[i])

    def offspring_count(self, t):
        """``N_t``: total offspring mass (sum of ``x``) born up to ``t``."""
        k = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self._cum_x[k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("s,x,y\n")
        for i in range(self.n_events):
            buf.write(f"{self.times[i]:.17g},{self.x[i]:.17g},{self.y[i]:.17g}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "path_index": self.path_index,
            "n_events": self.n_events,
            "final_intensity": float(self.bp_lam[-1]),
            "horizon": self.horizon,
            "budget_exceeded": self.budget_exceeded,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def simulate(
    params: HawkesParams,
    seed: int,
    path_index: int = 0,
    events_hint: int = 4096,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> EventLog:
    """Draw one exact path.

    Pure function of ``(params, seed, path_index)``: mark and threshold
    buffers are regenerated from scratch on capacity growth, so the
    realized path does not depend on the initial ``events_hint``.
    """
    horizon = params.horizon
    cap = max(64, int(events_hint))
    while True:
        rng_e = derived_rng(seed, path_index, STREAM_THRESHOLD)
        rng_x = derived_rng(seed, path_index, STREAM_X)
        rng_y = derived_rng(seed, path_index, STREAM_Y)
        E = rng_e.standard_exponential(cap)
        X = np.asarray(params.marks.x_dist.sample(rng_x, cap), dtype=float)
        Y = np.asarray(params.marks.y_dist.sample(rng_y, cap), dtype=float)
        s_arr = np.empty(cap)
        prelam = np.empty(cap)
        nbp_cap = 2 * cap + 2
        bp_t = np.empty(nbp_cap)
        bp_lam = np.empty(nbp_cap)
        bp_cum = np.empty(nbp_cap)
        bp_cumsq = np.empty(nbp_cap)
        status, n, nbp = _hawkes_core(
            params.lam0, params.a_T, horizon, max_events, E, X, Y,
            s_arr, prelam, bp_t, bp_lam, bp_cum, bp_cumsq,
        )
        if status == _GROW and n < max_events:
            cap *= 2
            continue
        log = EventLog(
            times=s_arr[:n].copy(), x=X[:n].copy(), y=Y[:n].copy(),
            pre_intensity=prelam[:n].copy(),
            bp_t=bp_t[:nbp].copy(), bp_lam=bp_lam[:nbp].copy(),
            bp_cum=bp_cum[:nbp].copy(), bp_cumsq=bp_cumsq[:nbp].copy(),
            params=params, seed=seed, path_index=path_index,
            budget_exceeded=status != _OK,
        )
        if status != _OK:
            raise BudgetError(
                f"event budget {max_events} exhausted at t={log.times[-1]:.6g} "
                f"(horizon {horizon:.6g})",
                partial=log,
            )
        return log


def rescaled_intensity(log: EventLog, T: float, grid: np.ndarray) -> np.ndarray:
    """``lam_{T t} / T`` evaluated at the rescaled times in ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if T * float(np.max(grid)) > log.horizon * (1 + 1e-12):
        raise ValueError("grid extends beyond the simulated horizon")
    return log.intensity(T * grid) / T


def offspring_count(log: EventLog, t) -> np.ndarray:
    return log.offspring_count(t)


@dataclass(frozen=True)
class FluctuationPath:
    """``Z^T`` on a rescaled grid: compensated offspring mass over ``T``."""

    t: np.ndarray
    values: np.ndarray


def fluctuation(log: EventLog, T: float, grid: np.ndarray) -> FluctuationPath:
    """``Z^T_t = (N_{Tt} - int_0^{Tt} lam_r dr) / T`` with the integral exact."""
    grid = np.asarray(grid, dtype=float)
    tt = T * grid
    if float(np.max(tt)) > log.horizon * (1 + 1e-12):
        raise ValueError("grid extends beyond the simulated horizon")
    values = (log.offspring_count(tt) - log.integrated_intensity(tt)) / T
    return FluctuationPath(t=grid, values=values)


@dataclass(frozen=True)
class DriverPath:
    """A compensated jump martingale on a rescaled grid, with its exact
    jump-square quadratic variation."""

    t: np.ndarray
    values: np.ndarray
    qv: np.ndarray


def _driver(log: EventLog, T: float, grid: np.ndarray, jump_marks: np.ndarray,
            mean_jump_mark: float) -> DriverPath:
    grid = np.asarray(grid, dtype=float)
    tt = T * grid
    if float(np.max(tt)) > log.horizon * (1 + 1e-12):
        raise ValueError("grid extends beyond the simulated horizon")
    jumps = jump_marks / (np.sqrt(T) * np.sqrt(log.pre_intensity))
    cum_jump = np.concatenate(([0.0], np.cumsum(jumps)))
    cum_qv = np.concatenate(([0.0], np.cumsum(jumps ** 2)))
    k = np.searchsorted(log.times, tt, side="right")
    compensator = mean_jump_mark * log.integrated_sqrt_intensity(tt) / np.sqrt(T)
    return DriverPath(t=grid, values=cum_jump[k] - compensator, qv=cum_qv[k])


def empirical_driver(log: EventLog, T: float, grid: np.ndarray,
                     weight_by_duration: bool = True) -> DriverPath:
    """The normalized driver martingale extracted from one path.

    With ``weight_by_duration`` the jumps carry ``x y`` (the driver whose
    quadratic variation approaches ``E(X^2) E(Y^2) t``); without it they
    carry ``x`` alone (the driver of the compensated offspring count).
    """
    marks = log.params.marks
    if weight_by_duration:
        jump_marks = log.x * log.y
        mean_jump = marks.x_dist.mean() * marks.y_dist.mean()
    else:
        jump_marks = log.x.copy()
        mean_jump = marks.x_dist.mean()
    return _driver(log, T, grid, jump_marks, mean_jump)


def driver_tail_component(log: EventLog, T: float, grid: np.ndarray, cap: float) -> DriverPath:
    """Large-mark part of the duration-weighted driver: jumps where ``x`` or
    ``y`` exceeds ``cap``.  Its sup-magnitude is the truncation remainder that
    must die as ``T`` grows (the default cap policy is ``T**0.25``)."""
    from .marks import truncated_mean

    marks = log.params.marks
    tail = (log.x > cap) | (log.y > cap)
    jump_marks = np.where(tail, log.x * log.y, 0.0)
    mean_jump = (
        marks.x_dist.mean() * marks.y_dist.mean()
        - truncated_mean(marks.x_dist, cap) * truncated_mean(marks.y_dist, cap)
    )
    return _driver(log, T, grid, jump_marks, mean_jump)


def active_mass_remainder(log: EventLog, T: float, grid: np.ndarray) -> np.ndarray:
    """Compensated still-active mark mass at rescaled times, over ``T``.

    This is the boundary term produced by arrivals whose duration straddles
    the evaluation time; it vanishes in the scaling limit and its empirical
    sup-magnitude should shrink as ``T`` grows.
    """
    grid = np.asarray(grid, dtype=float)
    marks = log.params.marks
    a, lam0 = log.params.a_T, log.params.lam0
    mean_x = marks.x_dist.mean()
    y_dist = marks.y_dist
    out = np.empty(grid.shape[0])
    starts = log.bp_t[:-1]
    ends = log.bp_t[1:]
    lams = log.bp_lam[:-1]
    for j, r in enumerate(grid):
        tt = T * r
        active = starts < tt
        s0 = starts[active]
        s1 = np.minimum(ends[active], tt)
        g = y_dist.integrated_survival(tt - s0) - y_dist.integrated_survival(tt - s1)
        compensated = a * mean_x * float(lams[active] @ g)
        jump_part = float(log.intensity(tt)) - lam0
        out[j] = (jump_part - compensated) / T
    return out


def conservation_gap(log: EventLog, sample: int = 64) -> float:
    """Max breakpoint error of ``lam(t) - lam0 - a_T sum(active x)``, by an
    independent sweep over the event log."""
    a = log.params.a_T
    starts = log.times
    stops = log.times + log.y
    idx = np.unique(np.linspace(0, log.bp_t.shape[0] - 1, sample).astype(np.int64))
    worst = 0.0
    for i in idx:
        t = log.bp_t[i]
        active = (starts <= t) & (t < stops) & (log.x > 0)
        expect = log.params.lam0 + a * float(log.x[active].sum())
        worst = max(worst, abs(expect - log.bp_lam[i]))
    return worst


def coupled_params(params: HawkesParams, a_T: float) -> HawkesParams:
    """Same model with a different endogeneity factor (for coupling studies)."""
    return replace(params, a_T=a_T)
