"""Integrators for the limit diffusions.

Scalar square-root (CIR-type) intensity in two equivalent forms -- the
stochastic-Volterra convolution with the exponential kernel
``theta(z) = (1/m) exp(-lam z / m)`` and its Markovian counterpart

    d lam~ = (1/m) (lam0 - lam lam~) dt + (sigma1 sigma2 / m) sqrt(lam~) dW,

the joint intensity/fluctuation pair with correlated drivers, and the
coupled two-sided system with the price equation.  Discretization is
Euler with full truncation: negative excursions are clipped inside both
drift and diffusion, and their pre-clip frequency is reported rather
than hidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .seeding import STREAM_GAUSS, derived_rng

_BLOCK = 1024


@dataclass(frozen=True)
class CirParams:
    """Scalar limit-intensity parameters.

    ``lam`` is the criticality gap, ``m = E(Y^2)/2`` the kernel scale,
    ``sigma1**2 = E(X^2)`` and ``sigma2**2 = E(Y^2)`` the mark noise
    scales; the long-run mean is ``lam0 / lam``.
    """

    lam: float
    m: float
    sigma1: float
    sigma2: float
    lam0: float
    dt: float
    tau: float
    x0: float = 0.0
    scheme: str = "markov_full_truncation"

    def __post_init__(self):
        if min(self.lam, self.m, self.dt, self.tau) <= 0:
            raise ValueError("lam, m, dt, tau must be positive")
        if self.sigma1 < 0 or self.sigma2 < 0 or self.lam0 < 0 or self.x0 < 0:
            raise ValueError("noise scales, lam0 and x0 must be nonnegative")
        n = self.tau / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("tau must be an integral number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.tau / self.dt))

    def mean_curve(self, t) -> np.ndarray:
        """Closed-form ``E lam~_t`` (exact for both schemes' continuous limit)."""
        t = np.asarray(t, dtype=float)
        decay = np.exp(-self.lam * t / self.m)
        return (self.lam0 / self.lam) * (1.0 - decay) + self.x0 * decay

    def integrated_mean(self, t) -> np.ndarray:
        """Closed-form ``int_0^t E lam~_s ds``."""
        t = np.asarray(t, dtype=float)
        decay = np.exp(-self.lam * t / self.m)
        tail = (self.m / self.lam) * (1.0 - decay)
        return (self.lam0 / self.lam) * (t - tail) + self.x0 * tail

    def stationary_variance_curve(self, t) -> np.ndarray:
        """Closed-form ``Var lam~_t`` for the scalar square-root diffusion."""
        t = np.asarray(t, dtype=float)
        a = self.lam / self.m
        sig = self.sigma1 * self.sigma2 / self.m
        b = self.lam0 / self.lam
        e = np.exp(-a * t)
        return (sig ** 2 / a) * (b * 0.5 * (1.0 - e) ** 2 + self.x0 * (e - e ** 2))


@dataclass(frozen=True)
class SdePath:
    """Ensemble of discretized trajectories on a common stored grid.

    ``components[name]`` has shape ``(n_paths, len(t))``.  ``diagnostics``
    carries scheme-level counters such as the pre-truncation negativity
    fraction.
    """

    t: np.ndarray
    components: dict
    seed: int
    diagnostics: dict

    @property
    def n_paths(self) -> int:
        return next(iter(self.components.values())).shape[0]

    def at(self, name: str, time: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.t - time)))
        if abs(self.t[idx] - time) > 1e-9 + 1e-6 * abs(time):
            raise ValueError(f"time {time} is not on the stored grid")
        return self.components[name][:, idx]


def _normals(seed: int, first_path: int, count: int, n_drivers: int, n_steps: int) -> np.ndarray:
    out = np.empty((count, n_drivers, n_steps))
    for j in range(count):
        rng = derived_rng(seed, first_path + j, STREAM_GAUSS)
        out[j] = rng.standard_normal((n_drivers, n_steps))
    return out


def _stored_index(n_steps: int, store_every: int) -> np.ndarray:
    idx = np.arange(0, n_steps + 1, store_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _run_blocks(
    seed: int,
    n_paths: int,
    n_drivers: int,
    n_steps: int,
    names: tuple,
    store_idx: np.ndarray,
    stepper: Callable,
    init: dict | None = None,
) -> tuple[dict, int]:
    """Drive ``stepper`` over path blocks; gather stored snapshots per component."""
    init = init or {}
    comps = {name: np.empty((n_paths, store_idx.shape[0])) for name in names}
    negatives = 0
    done = 0
    while done < n_paths:
        count = min(_BLOCK, n_paths - done)
        dw = _normals(seed, done, count, n_drivers, n_steps)
        state = {name: np.full(count, init.get(name, 0.0)) for name in names}
        keep = {name: np.empty((count, store_idx.shape[0])) for name in names}
        pos = 0
        if store_idx[pos] == 0:
            for name in names:
                keep[name][:, pos] = state[name]
            pos += 1
        for i in range(n_steps):
            negatives += stepper(state, dw[:, :, i], i)
            if pos < store_idx.shape[0] and store_idx[pos] == i + 1:
                for name in names:
                    keep[name][:, pos] = state[name]
                pos += 1
        for name in names:
            comps[name][done:done + count] = keep[name]
        done += count
    return comps, negatives


def simulate_cir_markov(params: CirParams, seed: int, n_paths: int = 1,
                        store_every: int = 1) -> SdePath:
    """Full-truncation Euler for the Markovian square-root form."""
    dt = params.dt
    drift0 = params.lam0 / params.m
    rate = params.lam / params.m
    sig = params.sigma1 * params.sigma2 / params.m
    sqdt = np.sqrt(dt)

    def step(state, dw, i):
        x = state["lam"]
        xp = np.maximum(x, 0.0)
        state["lam"] = x + (drift0 - rate * xp) * dt + sig * np.sqrt(xp) * sqdt * dw[:, 0]
        return int(np.count_nonzero(state["lam"] < 0.0))

    store_idx = _stored_index(params.n_steps, store_every)
    comps, neg = _run_blocks(seed, n_paths, 1, params.n_steps, ("lam",), store_idx, step,
                             init={"lam": params.x0})
    comps["lam"] = np.maximum(comps["lam"], 0.0)
    frac = neg / (n_paths * params.n_steps)
    return SdePath(t=store_idx * dt, components=comps, seed=seed,
                   diagnostics={"negative_fraction": frac, "scheme": "markov_full_truncation"})


def simulate_cir_volterra(params: CirParams, seed: int, n_paths: int = 1,
                          store_every: int = 1) -> SdePath:
    """Euler discretization of the Volterra convolution form.

    The exponential kernel lets the stochastic convolution be carried as a
    single recursively-updated state, so the scheme is O(n) per path while
    remaining exactly the Volterra-Euler sum.
    """
    dt = params.dt
    lam, m = params.lam, params.m
    decay = np.exp(-lam * dt / m)
    sig = params.sigma1 * params.sigma2
    sqdt = np.sqrt(dt)
    n_steps = params.n_steps
    drift = params.mean_curve(np.arange(n_steps + 1) * dt)

    def step(state, dw, i):
        conv = state["_conv"]
        x = state["lam"]
        xp = np.maximum(x, 0.0)
        conv = decay * (conv + np.sqrt(xp) * sqdt * dw[:, 0] / m)
        state["_conv"] = conv
        state["lam"] = drift[i + 1] + sig * conv
        return int(np.count_nonzero(state["lam"] < 0.0))

    store_idx = _stored_index(n_steps, store_every)
    comps, neg = _run_blocks(seed, n_paths, 1, n_steps, ("lam", "_conv"), store_idx, step,
                             init={"lam": params.x0})
    del comps["_conv"]
    comps["lam"] = np.maximum(comps["lam"], 0.0)
    frac = neg / (n_paths * n_steps)
    return SdePath(t=store_idx * dt, components=comps, seed=seed,
                   diagnostics={"negative_fraction": frac, "scheme": "volterra_euler"})


def simulate_cir(params: CirParams, seed: int, n_paths: int = 1, store_every: int = 1) -> SdePath:
    if params.scheme == "volterra_euler":
        return simulate_cir_volterra(params, seed, n_paths, store_every)
    if params.scheme == "markov_full_truncation":
        return simulate_cir_markov(params, seed, n_paths, store_every)
    raise ValueError(f"unknown scheme {params.scheme!r}")


def simulate_fluctuation_limit(params: CirParams, rho: float, seed: int,
                               n_paths: int = 1, store_every: int = 1) -> SdePath:
    """Joint ``(lam~, Z)`` with per-step driver correlation ``rho``.

    ``Z_t = sigma1 int_0^t sqrt(lam~_s) dB_s`` where ``corr(W, B) = rho``
    equals ``E(Y)/sqrt(E(Y^2))`` for the process drivers.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("|rho| must not exceed 1")
    dt = params.dt
    drift0 = params.lam0 / params.m
    rate = params.lam / params.m
    sig = params.sigma1 * params.sigma2 / params.m
    sig_z = params.sigma1
    mix = np.sqrt(1.0 - rho ** 2)
    sqdt = np.sqrt(dt)

    def step(state, dw, i):
        x = state["lam"]
        xp = np.maximum(x, 0.0)
        w = dw[:, 0]
        b = rho * w + mix * dw[:, 1]
        root = np.sqrt(xp) * sqdt
        state["lam"] = x + (drift0 - rate * xp) * dt + sig * root * w
        state["Z"] = state["Z"] + sig_z * root * b
        return int(np.count_nonzero(state["lam"] < 0.0))

    store_idx = _stored_index(params.n_steps, store_every)
    comps, neg = _run_blocks(seed, n_paths, 2, params.n_steps, ("lam", "Z"), store_idx, step,
                             init={"lam": params.x0})
    comps["lam"] = np.maximum(comps["lam"], 0.0)
    frac = neg / (n_paths * params.n_steps)
    return SdePath(t=store_idx * dt, components=comps, seed=seed,
                   diagnostics={"negative_fraction": frac, "rho": rho})


@dataclass(frozen=True)
class PairCirParams:
    """Two-sided limit system: coupled intensities, price, and noise mixtures.

    ``driver_vars[i]`` is the variance rate ``E(X_{i+1}^2) E(Y^2)`` of
    driver ``i+1``; streams 1, 3 load on ``sqrt(lam~+)`` and 2, 4 on
    ``sqrt(lam~-)``.
    """

    lam: float
    m: float
    lam0_plus: float
    lam0_minus: float
    driver_vars: tuple[float, float, float, float]
    dt: float
    tau: float

    def __post_init__(self):
        if min(self.lam, self.m, self.dt, self.tau) <= 0:
            raise ValueError("lam, m, dt, tau must be positive")
        if self.lam0_plus < 0 or self.lam0_minus < 0 or min(self.driver_vars) < 0:
            raise ValueError("forcing levels and driver variances must be nonnegative")
        n = self.tau / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("tau must be an integral number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.tau / self.dt))

    def total_params(self) -> CirParams:
        """Scalar reduction of the summed intensity when all driver variances agree."""
        v = self.driver_vars[0]
        if any(abs(vi - v) > 1e-12 for vi in self.driver_vars):
            raise ValueError("scalar reduction requires equal driver variances")
        # sum process noise rate: d[Z] = 2 v dt
        return CirParams(
            lam=self.lam, m=self.m, sigma1=np.sqrt(2.0 * v), sigma2=1.0,
            lam0=self.lam0_plus + self.lam0_minus, dt=self.dt, tau=self.tau,
        )


def simulate_heston_price(params: PairCirParams, seed: int, n_paths: int = 1,
                          store_every: int = 1) -> SdePath:
    """Coupled two-sided intensities with the price and its noise mixtures.

    Components: ``lam_plus``, ``lam_minus``, ``price``, the price mixture
    ``V`` with its realized quadratic variation ``qv_V``, and the total
    volatility mixture ``Z``.
    """
    dt = params.dt
    m = params.m
    rate = params.lam / m
    d0p = params.lam0_plus / m
    d0m = params.lam0_minus / m
    scales = np.sqrt(np.asarray(params.driver_vars) * dt)

    def step(state, dw, i):
        xp = np.maximum(state["lam_plus"], 0.0)
        xm = np.maximum(state["lam_minus"], 0.0)
        rp = np.sqrt(xp)
        rm = np.sqrt(xm)
        w1 = scales[0] * dw[:, 0]
        w2 = scales[1] * dw[:, 1]
        w3 = scales[2] * dw[:, 2]
        w4 = scales[3] * dw[:, 3]
        d_price = rp * (w1 - w3) + rm * (w2 - w4)
        tot = xp + xm
        root_tot = np.sqrt(np.where(tot > 0.0, tot, 1.0))
        wp = np.where(tot > 0.0, rp / root_tot, 0.0)
        wm = np.where(tot > 0.0, rm / root_tot, 0.0)
        d_v = wp * (w1 - w3) + wm * (w2 - w4)
        d_z = wp * (w1 + w3) + wm * (w2 + w4)
        state["lam_plus"] = state["lam_plus"] + (d0p - rate * xp) * dt + (rp * w1 + rm * w2) / m
        state["lam_minus"] = state["lam_minus"] + (d0m - rate * xm) * dt + (rp * w3 + rm * w4) / m
        state["price"] = state["price"] + d_price
        state["V"] = state["V"] + d_v
        state["Z"] = state["Z"] + d_z
        state["qv_V"] = state["qv_V"] + d_v ** 2
        return int(np.count_nonzero(state["lam_plus"] < 0.0) + np.count_nonzero(state["lam_minus"] < 0.0))

    names = ("lam_plus", "lam_minus", "price", "V", "Z", "qv_V")
    store_idx = _stored_index(params.n_steps, store_every)
    comps, neg = _run_blocks(seed, n_paths, 4, params.n_steps, names, store_idx, step)
    comps["lam_plus"] = np.maximum(comps["lam_plus"], 0.0)
    comps["lam_minus"] = np.maximum(comps["lam_minus"], 0.0)
    frac = neg / (2 * n_paths * params.n_steps)
    return SdePath(t=store_idx * dt, components=comps, seed=seed,
                   diagnostics={"negative_fraction": frac})
