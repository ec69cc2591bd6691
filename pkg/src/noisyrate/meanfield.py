"""Moment equations of the Gaussian mean-field limit.

    dmu_a/dt = -mu_a / tau_a + sum_b J_ab f(mu_b, v_b) + I_a
    dv_a/dt  = -2 v_a / tau_a + lambda_a^2

The variance equation is linear and decoupled; it is integrated alongside the
mean anyway so that scheduled noise uses the same code path, and the closed
form in :mod:`noisyrate.model` serves as a running check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, IntegrationError, RangeError, SpecError
from .io import write_csv
from .model import ModelSpec, MomentState, closure_f

METHODS = ("rk45_adaptive", "rk4_fixed", "euler_fixed")


@dataclass(frozen=True)
class OdeConfig:
    """Integrator choice.

    ``dt`` is the step of the fixed-step methods and the output sampling
    interval of the adaptive one.
    """

    t_end: float
    method: str = "rk45_adaptive"
    dt: float = 0.01
    rtol: float = 1e-9
    atol: float = 1e-9

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {METHODS}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise SpecError("t_end must be finite and non-negative")
        if not (self.dt > 0 and self.rtol > 0 and self.atol > 0):
            raise SpecError("dt and tolerances must be positive")

    def to_dict(self) -> dict:
        return {"t_end": self.t_end, "method": self.method, "dt": self.dt, "rtol": self.rtol, "atol": self.atol}


@dataclass
class MomentTrajectory:
    """Samples of the mean-field moments on ``[0, T]``; arrays are ``(K, P)``."""

    spec: ModelSpec
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise SpecError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def state(self, k: int) -> MomentState:
        return MomentState(float(self.times[k]), self.mean[k].copy(), self.variance[k].copy())

    @property
    def final(self) -> MomentState:
        return self.state(-1)


def _check_state(mu, v, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    if mu.shape[-1] != spec.n_pop or v.shape[-1] != spec.n_pop:
        raise SpecError(f"state must have {spec.n_pop} populations")
    if np.any(v < 0):
        raise DomainError("variance must be non-negative")
    return mu, v


def moment_rhs(state: MomentState, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives ``(dmu/dt, dv/dt)`` at ``state``."""
    mu, v = _check_state(state.mean, state.variance, spec)
    t = state.time
    f = closure_f(mu, v, spec.gain, spec.threshold)
    dmu = -mu / spec.tau + spec.connectivity @ f + spec.input_at(t)
    dv = -2.0 * v / spec.tau + spec.noise_at(t) ** 2
    return dmu, dv


def mean_rhs(mu, spec: ModelSpec, v=None) -> np.ndarray:
    """Mean drift at frozen variance (stationary variance by default), final schedule values."""
    from .model import stationary_variance

    v = stationary_variance(spec) if v is None else v
    mu = np.asarray(mu, dtype=float)
    f = closure_f(mu, v, spec.gain, spec.threshold)
    return -mu / spec.tau + f @ spec.connectivity.T + spec.final_input


# {{{ compiled fixed-step kernels


@nb.njit(inline="always", cache=True)
def _field(y, tau, g, gamma, J, I, lam2, out):
    P = tau.shape[0]
    for b in range(P):
        s = math.sqrt(1.0 + g[b] * g[b] * y[P + b])
        z = (g[b] * y[b] + gamma[b]) / s
        out[P + b] = 0.5 * math.erfc(-z * 0.7071067811865476)
    for a in range(P):
        d = -y[a] / tau[a] + I[a]
        for b in range(P):
            d += J[a, b] * out[P + b]
        out[a] = d
    for a in range(P):
        out[P + a] = -2.0 * y[P + a] / tau[a] + lam2[a]


@nb.njit(cache=True)
def rk4_kernel(y0, tau, g, gamma, J, I, lam2, h, n_steps, every, out):
    """Classical RK4 on the moment system with constant input and noise.

    ``out[k]`` receives the state after ``k * every`` steps.
    """
    n = y0.shape[0]
    y = y0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    out[0, :] = y
    rec = 1
    for s in range(n_steps):
        _field(y, tau, g, gamma, J, I, lam2, k1)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _field(tmp, tau, g, gamma, J, I, lam2, k2)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _field(tmp, tau, g, gamma, J, I, lam2, k3)
        for i in range(n):
            tmp[i] = y[i] + h * k3[i]
        _field(tmp, tau, g, gamma, J, I, lam2, k4)
        for i in range(n):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (s + 1) % every == 0:
            out[rec, :] = y
            rec += 1
    return y


@nb.njit(cache=True)
def euler_kernel(y0, tau, g, gamma, J, I, lam2, h, n_steps, out):
    n = y0.shape[0]
    P = n // 2
    y = y0.copy()
    k = np.empty(n)
    out[0, :] = y
    for s in range(n_steps):
        _field(y, tau, g, gamma, J, I, lam2, k)
        for i in range(P):
            y[i] += h * k[i]
        # exact Euler-Maruyama variance recursion
        for a in range(P):
            c = 1.0 - h / tau[a]
            y[P + a] = c * c * y[P + a] + lam2[a] * h
        out[s + 1, :] = y
    return y


# }}}


def _segments(spec: ModelSpec, t_end: float) -> list[tuple[float, float]]:
    cuts = [0.0] + spec.breakpoints(t_end) + [t_end]
    return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]


def _kernel_args(spec: ModelSpec, t: float):
    return (
        spec.tau,
        spec.gain,
        spec.threshold,
        np.ascontiguousarray(spec.connectivity, dtype=float),
        spec.input_at(t).astype(float),
        spec.noise_at(t).astype(float) ** 2,
    )


def _fixed_step(spec: ModelSpec, y0: np.ndarray, cfg: OdeConfig):
    times, states = [np.array([0.0])], [y0[None, :]]
    y = y0
    for a, b in _segments(spec, cfg.t_end):
        n = max(1, int(math.ceil((b - a) / cfg.dt - 1e-9)))
        h = (b - a) / n
        out = np.empty((n + 1, y.size))
        if cfg.method == "rk4_fixed":
            y = rk4_kernel(y, *_kernel_args(spec, a), h, n, 1, out)
        else:
            y = euler_kernel(y, *_kernel_args(spec, a), h, n, out)
        times.append(a + h * np.arange(1, n + 1))
        states.append(out[1:])
    return np.concatenate(times), np.concatenate(states)


def _adaptive(spec: ModelSpec, y0: np.ndarray, cfg: OdeConfig):
    P = spec.n_pop
    J = spec.connectivity
    times, states = [np.array([0.0])], [y0[None, :]]
    y = y0
    for a, b in _segments(spec, cfg.t_end):
        tau, g, gamma = spec.tau, spec.gain, spec.threshold
        I, lam2 = spec.input_at(a), spec.noise_at(a) ** 2

        def fun(t, y):
            mu, v = y[:P], np.maximum(y[P:], 0.0)
            f = closure_f(mu, v, g, gamma)
            return np.concatenate([-mu / tau + J @ f + I, -2.0 * v / tau + lam2])

        n = max(1, int(math.ceil((b - a) / cfg.dt - 1e-9)))
        t_eval = a + (b - a) * np.arange(1, n + 1) / n
        t_eval[-1] = b
        sol = solve_ivp(fun, (a, b), y, method="RK45", t_eval=t_eval, rtol=cfg.rtol, atol=cfg.atol)
        if sol.status != 0:
            raise IntegrationError(f"adaptive integration failed on [{a}, {b}]: {sol.message}")
        times.append(sol.t)
        states.append(sol.y.T)
        y = sol.y[:, -1]
    return np.concatenate(times), np.concatenate(states)


def integrate(spec: ModelSpec, init: MomentState, cfg: OdeConfig) -> MomentTrajectory:
    """Integrate the moment equations from ``init`` over ``[0, cfg.t_end]``."""
    mu0, v0 = _check_state(init.mean, init.variance, spec)
    y0 = np.concatenate([mu0, v0]).astype(float)
    if cfg.t_end == 0:
        return MomentTrajectory(spec, np.array([0.0]), mu0[None].copy(), v0[None].copy())
    if cfg.method == "rk45_adaptive":
        times, Y = _adaptive(spec, y0, cfg)
    else:
        times, Y = _fixed_step(spec, y0, cfg)
    if not np.all(np.isfinite(Y)):
        raise IntegrationError("moment integration produced non-finite values")
    P = spec.n_pop
    if np.any(Y[:, P:] < -1e-12):
        raise IntegrationError("variance became negative during integration")
    return MomentTrajectory(spec, times, Y[:, :P].copy(), np.maximum(Y[:, P:], 0.0))


def gaussian_law_at(traj: MomentTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the mean-field Gaussian marginal at time ``t``.

    Cubic Hermite interpolation using the vector field for the slopes; stored
    samples are returned exactly.
    """
    t0, t1 = traj.times[0], traj.times[-1]
    if not t0 <= t <= t1:
        raise RangeError(f"t={t} outside trajectory span [{t0}, {t1}]")
    k = np.searchsorted(traj.times, t)
    if k < traj.times.size and traj.times[k] == t:
        return traj.mean[k].copy(), traj.variance[k].copy()
    if traj.times.size == 1:
        return traj.mean[0].copy(), traj.variance[0].copy()
    lo, hi = k - 1, k
    ts = traj.times[lo : hi + 1]
    ys = np.concatenate([traj.mean[lo : hi + 1], traj.variance[lo : hi + 1]], axis=1)
    dys = []
    for j in range(2):
        # slope on the segment's own schedule piece, i.e. the one in force just after ts[0]
        tt = ts[0] if j == 0 else np.nextafter(ts[1], ts[0])
        dmu, dv = moment_rhs(MomentState(tt, ys[j, : traj.spec.n_pop], ys[j, traj.spec.n_pop :]), traj.spec)
        dys.append(np.concatenate([dmu, dv]))
    spline = CubicHermiteSpline(ts, ys, np.array(dys), axis=0)
    y = spline(t)
    P = traj.spec.n_pop
    return y[:P], np.maximum(y[P:], 0.0)


def write_moment_csv(traj: MomentTrajectory, path: str | Path, meta: dict | None = None) -> Path:
    P = traj.spec.n_pop
    rows = ((t, a, traj.mean[k, a], traj.variance[k, a]) for k, t in enumerate(traj.times) for a in range(P))
    return write_csv(path, ["t", "population", "mu", "v"], rows, meta)
