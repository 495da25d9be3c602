"""Exact simulator for the coupled bid/ask market.

Four marked arrival streams drive two intensities: streams 1 and 3 arrive
at the bid rate ``lam+`` and streams 2 and 4 at the ask rate ``lam-``;
streams 1, 2 feed ``lam+`` (coefficients ``a1, a2``) while 3, 4 feed
``lam-``.  Streams 1, 2 are buy orders and 3, 4 sell orders, each
executing at speed ``x`` for duration ``y``, so the price
``P = N+ - N-`` is continuous and piecewise linear with slope equal to
the active buy mass minus the active sell mass.

Each stream owns an independent exponential clock consumed at its
driving rate (the same inverse-compensator construction as the scalar
simulator) plus its own mark substreams.  This makes the simulator
equivariant under the bid/ask relabeling: reversing the stream slots
(1,2,3,4) -> (4,3,2,1) together with the baselines maps every path to
its mirror image with the price negated, seed for seed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import BudgetError, InstabilityError
from .hawkes import DriverPath
from .marks import MarkPairConfig
from .seeding import (
    STREAM_MARKET_THRESHOLD,
    STREAM_MARKET_X,
    STREAM_MARKET_Y,
    derived_rng,
)

_OK = 0
_GROW = 1
_BUDGET = 2

DEFAULT_MAX_EVENTS = 10_000_000

# stream roles, slot i = stream M_{i+1}
_DRIVE = np.array([0, 1, 0, 1], dtype=np.int64)  # 0: bid rate, 1: ask rate
_FEED = np.array([0, 0, 1, 1], dtype=np.int64)
_SIGN = np.array([1.0, 1.0, -1.0, -1.0])


@dataclass(frozen=True)
class BidAskParams:
    """Market parameters: baselines, feedback gains, scale, and mark laws.

    ``rng_slots`` assigns each stream its random substream; mirrored
    configurations reverse it so both runs replay identical draws.
    """

    lam0_plus: float
    lam0_minus: float
    a: tuple[float, float, float, float]
    T: float
    tau: float
    marks: tuple[MarkPairConfig, MarkPairConfig, MarkPairConfig, MarkPairConfig]
    rng_slots: tuple[int, int, int, int] = (0, 1, 2, 3)

    def __post_init__(self):
        if self.lam0_plus <= 0 or self.lam0_minus <= 0:
            raise ValueError("baseline intensities must be positive")
        if len(self.a) != 4 or min(self.a) < 0:
            raise ValueError("need four nonnegative gains")
        if len(self.marks) != 4:
            raise ValueError("need four mark configurations")
        if sorted(self.rng_slots) != [0, 1, 2, 3]:
            raise ValueError("rng_slots must be a permutation of 0..3")
        if self.T <= 0 or self.tau <= 0:
            raise ValueError("T and tau must be positive")

    @property
    def horizon(self) -> float:
        return self.T * self.tau

    def gain_matrix(self) -> np.ndarray:
        """Mean-feedback matrix: row = fed side, column = driving side."""
        ex = [cfg.x_dist.mean() for cfg in self.marks]
        return np.array([
            [self.a[0] * ex[0], self.a[1] * ex[1]],
            [self.a[2] * ex[2], self.a[3] * ex[3]],
        ])


def spectral_radius(matrix: np.ndarray) -> float:
    m = np.asarray(matrix, dtype=float)
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        root = np.sqrt(disc)
        return max(abs(tr + root), abs(tr - root)) / 2.0
    return float(np.sqrt(det))


@dataclass(frozen=True)
class StabilityReport:
    radius: float
    mean_duration: float
    value: float
    passed: bool


def check_stability(params: BidAskParams) -> StabilityReport:
    """Spectral-radius criterion ``s(A) E(Y_1) < 1`` for non-explosion."""
    radius = spectral_radius(params.gain_matrix())
    ey = params.marks[0].y_dist.mean()
    value = radius * ey
    return StabilityReport(radius=radius, mean_duration=ey, value=value, passed=value < 1.0)


def mirrored(params: BidAskParams) -> BidAskParams:
    """The bid/ask reflection: slots (1,2,3,4) -> (4,3,2,1), baselines swapped.

    With the same seed the mirrored market replays every event with
    the price negated.
    """
    return replace(
        params,
        lam0_plus=params.lam0_minus,
        lam0_minus=params.lam0_plus,
        a=tuple(params.a[::-1]),
        marks=tuple(params.marks[::-1]),
        rng_slots=tuple(params.rng_slots[::-1]),
    )


@njit(cache=True)
def _mheap_push(ht, hamt, hside, hslope, hn, t, amt, side, slope):
    i = hn
    ht[i] = t
    hamt[i] = amt
    hside[i] = side
    hslope[i] = slope
    while i > 0:
        p = (i - 1) >> 1
        if ht[p] <= ht[i]:
            break
        ht[p], ht[i] = ht[i], ht[p]
        hamt[p], hamt[i] = hamt[i], hamt[p]
        hside[p], hside[i] = hside[i], hside[p]
        hslope[p], hslope[i] = hslope[i], hslope[p]
        i = p
    return hn + 1


@njit(cache=True)
def _mheap_pop(ht, hamt, hside, hslope, hn):
    hn -= 1
    ht[0] = ht[hn]
    hamt[0] = hamt[hn]
    hside[0] = hside[hn]
    hslope[0] = hslope[hn]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= hn:
            break
        small = left
        right = left + 1
        if right < hn and ht[right] < ht[left]:
            small = right
        if ht[i] <= ht[small]:
            break
        ht[i], ht[small] = ht[small], ht[i]
        hamt[i], hamt[small] = hamt[small], hamt[i]
        hside[i], hside[small] = hside[small], hside[i]
        hslope[i], hslope[small] = hslope[small], hslope[i]
        i = small
    return hn


@njit(cache=True)
def _market_core(lam0p, lam0m, gains, drive, feed, sign, horizon, max_events,
                 E, X, Y,
                 ev_t, ev_stream, ev_x, ev_y, ev_prelam,
                 bp_t, bp_lamp, bp_lamm, bp_price,
                 bp_cum_p, bp_cum_m, bp_cumsq_p, bp_cumsq_m):
    cap = E.shape[1]
    total_cap = ev_t.shape[0]
    ht = np.empty(total_cap)
    hamt = np.empty(total_cap)
    hside = np.empty(total_cap, dtype=np.int64)
    hslope = np.empty(total_cap)
    hn = 0

    t = 0.0
    lamp = lam0p
    lamm = lam0m
    price = 0.0
    slope = 0.0
    cum_p = 0.0
    cum_m = 0.0
    cumsq_p = 0.0
    cumsq_m = 0.0

    bp_t[0] = 0.0
    bp_lamp[0] = lamp
    bp_lamm[0] = lamm
    bp_price[0] = 0.0
    bp_cum_p[0] = 0.0
    bp_cum_m[0] = 0.0
    bp_cumsq_p[0] = 0.0
    bp_cumsq_m[0] = 0.0
    nbp = 1

    n = np.zeros(4, dtype=np.int64)
    n_tot = 0
    R = np.empty(4)
    for j in range(4):
        R[j] = E[j, 0]
    status = _OK

    while True:
        best = -1
        t_next = horizon
        for j in range(4):
            rate = lamp if drive[j] == 0 else lamm
            tj = t + R[j] / rate
            if tj < t_next:
                t_next = tj
                best = j
        is_exp = False
        if hn > 0 and ht[0] <= t_next:
            t_next = ht[0]
            is_exp = True
            best = -1

        dt = t_next - t
        cum_p += lamp * dt
        cum_m += lamm * dt
        cumsq_p += np.sqrt(lamp) * dt
        cumsq_m += np.sqrt(lamm) * dt
        price += slope * dt
        for j in range(4):
            if j != best:
                rate = lamp if drive[j] == 0 else lamm
                R[j] -= rate * dt
        t = t_next

        if best < 0 and not is_exp:
            break  # horizon reached

        if is_exp:
            if hside[0] == 0:
                lamp -= hamt[0]
            else:
                lamm -= hamt[0]
            slope -= hslope[0]
            hn = _mheap_pop(ht, hamt, hside, hslope, hn)
        else:
            j = best
            if n_tot >= max_events:
                status = _BUDGET
                break
            k = n[j]
            x = X[j, k]
            y = Y[j, k]
            ev_t[n_tot] = t
            ev_stream[n_tot] = j
            ev_x[n_tot] = x
            ev_y[n_tot] = y
            ev_prelam[n_tot] = lamp if drive[j] == 0 else lamm
            n_tot += 1
            if y > 0.0:
                s_amt = sign[j] * x
                slope += s_amt
                bump = gains[j] * x
                if feed[j] == 0:
                    lamp += bump
                else:
                    lamm += bump
                hn = _mheap_push(ht, hamt, hside, hslope, hn, t + y, bump, feed[j], s_amt)
            n[j] += 1
            if n[j] >= cap:
                status = _GROW
                break
            R[j] = E[j, n[j]]

        bp_t[nbp] = t
        bp_lamp[nbp] = lamp
        bp_lamm[nbp] = lamm
        bp_price[nbp] = price
        bp_cum_p[nbp] = cum_p
        bp_cum_m[nbp] = cum_m
        bp_cumsq_p[nbp] = cumsq_p
        bp_cumsq_m[nbp] = cumsq_m
        nbp += 1

    if status == _OK:
        bp_t[nbp] = horizon
        bp_lamp[nbp] = lamp
        bp_lamm[nbp] = lamm
        bp_price[nbp] = price
        bp_cum_p[nbp] = cum_p
        bp_cum_m[nbp] = cum_m
        bp_cumsq_p[nbp] = cumsq_p
        bp_cumsq_m[nbp] = cumsq_m
        nbp += 1
    return status, n_tot, nbp


@dataclass(frozen=True)
class MarketPath:
    """One exact market path: the four event streams, both intensity records,
    and the piecewise-linear price."""

    ev_t: np.ndarray
    ev_stream: np.ndarray
    ev_x: np.ndarray
    ev_y: np.ndarray
    ev_prelam: np.ndarray
    bp_t: np.ndarray
    bp_lamp: np.ndarray
    bp_lamm: np.ndarray
    bp_price: np.ndarray
    bp_cum_p: np.ndarray
    bp_cum_m: np.ndarray
    bp_cumsq_p: np.ndarray
    bp_cumsq_m: np.ndarray
    params: BidAskParams
    seed: int
    path_index: int
    budget_exceeded: bool = False

    @property
    def n_events(self) -> int:
        return int(self.ev_t.shape[0])

    @property
    def horizon(self) -> float:
        return float(self.bp_t[-1])

    def _piece(self, t):
        return np.searchsorted(self.bp_t, np.asarray(t, dtype=float), side="right") - 1

    def intensity_plus(self, t):
        return self.bp_lamp[self._piece(t)]

    def intensity_minus(self, t):
        return self.bp_lamm[self._piece(t)]

    def price(self, t):
        """Exact: the price is continuous piecewise linear between breakpoints."""
        return np.interp(np.asarray(t, dtype=float), self.bp_t, self.bp_price)

    def integrated_sqrt_intensity(self, t, side: int):
        t = np.asarray(t, dtype=float)
        i = self._piece(t)
        if side == 0:
            return self.bp_cumsq_p[i] + np.sqrt(self.bp_lamp[i]) * (t - self.bp_t[i])
        return self.bp_cumsq_m[i] + np.sqrt(self.bp_lamm[i]) * (t - self.bp_t[i])

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,stream,x,y\n")
        for i in range(self.n_events):
            buf.write(f"{self.ev_t[i]:.17g},{int(self.ev_stream[i]) + 1},"
                      f"{self.ev_x[i]:.17g},{self.ev_y[i]:.17g}\n")
        return buf.getvalue()

    def price_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,P\n")
        for i in range(self.bp_t.shape[0]):
            buf.write(f"{self.bp_t[i]:.17g},{self.bp_price[i]:.17g}\n")
        return buf.getvalue()


def simulate_market(
    params: BidAskParams,
    seed: int,
    path_index: int = 0,
    events_hint: int = 4096,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> MarketPath:
    """Draw one exact market path; fails on unstable configurations."""
    report = check_stability(params)
    if not report.passed:
        raise InstabilityError(
            f"spectral radius x E(Y) = {report.value:.6g} >= 1: unstable market"
        )
    horizon = params.horizon
    cap = max(64, int(events_hint))
    gains = np.asarray(params.a, dtype=float)
    while True:
        E = np.empty((4, cap))
        X = np.empty((4, cap))
        Y = np.empty((4, cap))
        for j in range(4):
            slot = params.rng_slots[j]
            E[j] = derived_rng(seed, path_index, STREAM_MARKET_THRESHOLD + slot).standard_exponential(cap)
            X[j] = np.asarray(params.marks[j].x_dist.sample(
                derived_rng(seed, path_index, STREAM_MARKET_X + slot), cap), dtype=float)
            Y[j] = np.asarray(params.marks[j].y_dist.sample(
                derived_rng(seed, path_index, STREAM_MARKET_Y + slot), cap), dtype=float)
        total_cap = 4 * cap
        ev_t = np.empty(total_cap)
        ev_stream = np.empty(total_cap, dtype=np.int64)
        ev_x = np.empty(total_cap)
        ev_y = np.empty(total_cap)
        ev_prelam = np.empty(total_cap)
        nbp_cap = 2 * total_cap + 2
        bp = [np.empty(nbp_cap) for _ in range(8)]
        status, n_tot, nbp = _market_core(
            params.lam0_plus, params.lam0_minus, gains, _DRIVE, _FEED, _SIGN,
            horizon, max_events, E, X, Y,
            ev_t, ev_stream, ev_x, ev_y, ev_prelam, *bp,
        )
        if status == _GROW and n_tot < max_events:
            cap *= 2
            continue
        path = MarketPath(
            ev_t=ev_t[:n_tot].copy(), ev_stream=ev_stream[:n_tot].copy(),
            ev_x=ev_x[:n_tot].copy(), ev_y=ev_y[:n_tot].copy(),
            ev_prelam=ev_prelam[:n_tot].copy(),
            bp_t=bp[0][:nbp].copy(), bp_lamp=bp[1][:nbp].copy(), bp_lamm=bp[2][:nbp].copy(),
            bp_price=bp[3][:nbp].copy(),
            bp_cum_p=bp[4][:nbp].copy(), bp_cum_m=bp[5][:nbp].copy(),
            bp_cumsq_p=bp[6][:nbp].copy(), bp_cumsq_m=bp[7][:nbp].copy(),
            params=params, seed=seed, path_index=path_index,
            budget_exceeded=status != _OK,
        )
        if status != _OK:
            raise BudgetError(
                f"event budget {max_events} exhausted at t={path.ev_t[-1]:.6g} "
                f"(horizon {horizon:.6g})",
                partial=path,
            )
        return path


def rescaled_market(path: MarketPath, T: float, grid: np.ndarray):
    """``(lam~+, lam~-, P~)`` at the rescaled times in ``grid``."""
    grid = np.asarray(grid, dtype=float)
    tt = T * grid
    if float(np.max(tt)) > path.horizon * (1 + 1e-12):
        raise ValueError("grid extends beyond the simulated horizon")
    return (
        path.intensity_plus(tt) / T,
        path.intensity_minus(tt) / T,
        path.price(tt) / T,
    )


def executed_volumes(path: MarketPath, t: float) -> tuple[float, float]:
    """Exact executed volume per side: ``sum x (y ^ (t - s))`` over arrivals."""
    mask = path.ev_t <= t
    done = np.minimum(path.ev_y[mask], t - path.ev_t[mask])
    done = np.maximum(done, 0.0)
    vol = path.ev_x[mask] * done
    buy = _SIGN[path.ev_stream[mask]] > 0
    return float(vol[buy].sum()), float(vol[~buy].sum())


def driver_quartet(path: MarketPath, T: float, grid: np.ndarray) -> list[DriverPath]:
    """The four normalized driver martingales, one per stream."""
    grid = np.asarray(grid, dtype=float)
    tt = T * grid
    if float(np.max(tt)) > path.horizon * (1 + 1e-12):
        raise ValueError("grid extends beyond the simulated horizon")
    out = []
    for j in range(4):
        sel = path.ev_stream == j
        times = path.ev_t[sel]
        jumps = path.ev_x[sel] * path.ev_y[sel] / (np.sqrt(T) * np.sqrt(path.ev_prelam[sel]))
        cum_jump = np.concatenate(([0.0], np.cumsum(jumps)))
        cum_qv = np.concatenate(([0.0], np.cumsum(jumps ** 2)))
        k = np.searchsorted(times, tt, side="right")
        marks = path.params.marks[j]
        mean_jump = marks.x_dist.mean() * marks.y_dist.mean()
        comp = mean_jump * path.integrated_sqrt_intensity(tt, int(_DRIVE[j])) / np.sqrt(T)
        out.append(DriverPath(t=grid, values=cum_jump[k] - comp, qv=cum_qv[k]))
    return out


def symmetric_market(
    lam0: float,
    T: float,
    tau: float,
    marks: MarkPairConfig,
    lam: float = 1.0,
) -> BidAskParams:
    """The canonical near-critical configuration: equal gains ``1 - lam/T`` on
    all four streams, identical mark laws, equal baselines."""
    a_T = 1.0 - lam / T
    if a_T <= 0:
        raise ValueError("T too small for the requested criticality gap")
    return BidAskParams(
        lam0_plus=lam0, lam0_minus=lam0,
        a=(a_T, a_T, a_T, a_T), T=T, tau=tau,
        marks=(marks, marks, marks, marks),
    )
