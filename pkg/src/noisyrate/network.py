"""Finite-N network simulation by fixed-step Euler-Maruyama.

Neurons are stored population by population, so population ``a`` occupies
the index range ``offsets[a]:offsets[a + 1]``.  Because every synapse from
population ``b`` onto a neuron of population ``a`` carries ``J_ab / N_b``,
the recurrent input is ``sum_b J_ab * rate_b`` with ``rate_b`` the mean of
``S_b`` over population ``b``; one step therefore costs O(N).

Each step reads the old voltages only through the population rates, then
overwrites every voltage, so the update order of neurons is irrelevant.
Realizations run in parallel; each one sums in a fixed order, which keeps
results bit-identical for any thread count.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import ndtr

from . import rng
from ._phi import PHI_TABLE, phi_fast
from .errors import DomainError, IntegrationDivergedError, MemoryBudgetError, SpecError
from .io import write_csv
from .model import ModelSpec, closure_f

RECORD_MODES = ("full_trajectories", "population_stats", "final_state")
_MODE_CODE = {m: k for k, m in enumerate(RECORD_MODES)}

# fast-math without the no-NaN/no-Inf assumptions so divergence stays detectable
_FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}


@dataclass(frozen=True)
class SimConfig:
    """Time stepping, ensemble size, seeding and recording for a network run.

    ``record_every`` is the number of steps between recorded samples.
    """

    n_total: int
    dt: float = 0.001
    t_end: float = 10.0
    n_realizations: int = 1
    seed: int = 0
    record_mode: str = "population_stats"
    record_every: int = 1
    memory_cap_bytes: int = 4 * 2**30

    def __post_init__(self) -> None:
        if int(self.n_total) != self.n_total or self.n_total < 1:
            raise SpecError(f"n_total must be a positive integer, got {self.n_total}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise SpecError(f"dt must be positive, got {self.dt}")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise SpecError(f"t_end must be non-negative, got {self.t_end}")
        if self.n_realizations < 1:
            raise SpecError("n_realizations must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")
        if self.record_mode not in RECORD_MODES:
            raise SpecError(f"record_mode must be one of {RECORD_MODES}")
        if self.record_every < 1:
            raise SpecError("record_every must be at least 1")
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise SpecError(f"t_end={self.t_end} is not a whole number of steps dt={self.dt}")
        if self.dt > 0.01:
            warnings.warn(f"dt={self.dt} exceeds 0.01; Euler-Maruyama bias may be visible", stacklevel=3)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_every + 1

    def record_times(self) -> np.ndarray:
        return np.arange(self.n_records) * self.record_every * self.dt

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "dt": self.dt,
            "t_end": self.t_end,
            "n_realizations": self.n_realizations,
            "seed": self.seed,
            "record_mode": self.record_mode,
            "record_every": self.record_every,
            "memory_cap_bytes": self.memory_cap_bytes,
        }


@dataclass(frozen=True)
class InitialLaw:
    """Independent Gaussian initial voltages, one mean and variance per population."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if var.shape != mean.shape:
            raise SpecError("initial mean and variance must have the same length")
        if np.any(var < 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mean)):
            raise DomainError("initial variance must be finite and non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @classmethod
    def constant(cls, mean, variance, n_pop: int) -> InitialLaw:
        return cls(np.broadcast_to(mean, (n_pop,)).copy(), np.broadcast_to(variance, (n_pop,)).copy())

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "variance": self.variance.tolist()}


@dataclass
class EnsembleState:
    """Voltages of ``R`` realizations of an ``N``-neuron network at one time."""

    voltages: np.ndarray
    population_of: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.voltages = np.atleast_2d(np.asarray(self.voltages, dtype=float))
        self.population_of = np.asarray(self.population_of, dtype=np.int64)
        if self.voltages.shape[1] != self.population_of.shape[0]:
            raise SpecError("voltages and population_of disagree on N")


def population_sizes(fractions, n_total: int) -> np.ndarray:
    """Split ``n_total`` by fractions with largest-remainder rounding."""
    fr = np.asarray(fractions, dtype=float)
    raw = fr * n_total
    sizes = np.floor(raw).astype(np.int64)
    short = n_total - int(sizes.sum())
    # ties broken by population order for determinism
    order = np.lexsort((np.arange(fr.size), -(raw - sizes)))
    sizes[order[:short]] += 1
    if np.any(sizes < 1):
        raise SpecError(f"N={n_total} leaves a population empty (sizes {sizes.tolist()})")
    return sizes


def population_layout(spec: ModelSpec, n_total: int) -> tuple[np.ndarray, np.ndarray]:
    """``(offsets, population_of)`` for contiguous population blocks."""
    sizes = population_sizes(spec.fraction, n_total)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return offsets, np.repeat(np.arange(spec.n_pop), sizes)


def sample_initial(spec: ModelSpec, sim: SimConfig, init: InitialLaw) -> EnsembleState:
    """Draw the initial voltages from the initial-condition stream."""
    if init.mean.shape != (spec.n_pop,):
        raise SpecError(f"initial law has {init.mean.size} populations, model has {spec.n_pop}")
    _, pop = population_layout(spec, sim.n_total)
    sd = np.sqrt(init.variance)[pop]
    V = np.empty((sim.n_realizations, sim.n_total))
    for r in range(sim.n_realizations):
        z = rng.normal_block(sim.seed, r, 0, sim.n_total, rng.INIT_STREAM)
        V[r] = init.mean[pop] + sd * z
    return EnsembleState(V, pop, 0.0)


def population_rates(V: np.ndarray, pop: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Mean of ``S_b(V)`` over each population ``b`` per realization, shape ``(R, P)``."""
    S = ndtr(spec.gain[pop] * V + spec.threshold[pop])
    counts = np.bincount(pop, minlength=spec.n_pop)
    if np.any(counts == 0):
        raise SpecError("empty population")
    out = np.empty((V.shape[0], spec.n_pop))
    for b in range(spec.n_pop):
        out[:, b] = S[:, pop == b].sum(axis=1) / counts[b]
    return out


def em_step(state: EnsembleState, spec: ModelSpec, dt: float, noise_draws: np.ndarray) -> EnsembleState:
    """One Euler-Maruyama step of the network; ``noise_draws`` has the shape of the voltages."""
    V, pop, t = state.voltages, state.population_of, state.time
    z = np.asarray(noise_draws, dtype=float).reshape(V.shape)
    drift = spec.input_at(t) + population_rates(V, pop, spec) @ spec.connectivity.T
    a1 = 1.0 - dt / spec.tau
    sl = spec.noise_at(t) * math.sqrt(dt)
    with np.errstate(over="ignore", invalid="ignore"):
        Vn = a1[pop] * V + dt * drift[:, pop] + sl[pop] * z
    if not np.all(np.isfinite(Vn)):
        raise IntegrationDivergedError(int(round(t / dt)) + 1)
    return EnsembleState(Vn, pop, t + dt)


# {{{ compiled kernels


@nb.njit(inline="always", cache=True)
def _fill(z, k0, k1, step):
    n = z.shape[0]
    for p in range(n // 2):
        z0, z1 = rng.gaussian_pair(k0, k1, p, step)
        z[2 * p] = z0
        z[2 * p + 1] = z1
    if n % 2:
        z0, _ = rng.gaussian_pair(k0, k1, n // 2, step)
        z[n - 1] = z0


@nb.njit(inline="always", cache=True)
def _record_stats(V, r, offsets, out_mean, out_m2, rec):
    P = offsets.shape[0] - 1
    for a in range(P):
        lo, hi = offsets[a], offsets[a + 1]
        s = 0.0
        for i in range(lo, hi):
            s += V[r, i]
        m = s / (hi - lo)
        q = 0.0
        for i in range(lo, hi):
            d = V[r, i] - m
            q += d * d
        out_mean[rec, r, a] = m
        out_m2[rec, r, a] = q


@nb.njit(inline="always", cache=True)
def _segment(seg_step, seg, s):
    while seg + 1 < seg_step.shape[0] and seg_step[seg + 1] <= s:
        seg += 1
    return seg


@nb.njit(parallel=True, fastmath=_FASTMATH, error_model="numpy", cache=True)
def _network_kernel(
    V, offsets, keys, n_steps, dt, a1, g, gamma, J,
    seg_step, I_seg, s_seg, rec_every, mode, out_mean, out_m2, out_full, tab, diverged,
):
    R, N = V.shape
    P = offsets.shape[0] - 1
    for r in nb.prange(R):
        k0 = keys[r, 0]
        k1 = keys[r, 1]
        z = np.empty(N)
        acc = np.empty(P)
        drift = np.empty(P)
        for a in range(P):
            sacc = 0.0
            for i in range(offsets[a], offsets[a + 1]):
                sacc += phi_fast(g[a] * V[r, i] + gamma[a], tab)
            acc[a] = sacc
        if mode == 0:
            out_full[0, r, :] = V[r, :]
        elif mode == 1:
            _record_stats(V, r, offsets, out_mean, out_m2, 0)
        rec = 1
        seg = 0
        for s in range(n_steps):
            seg = _segment(seg_step, seg, s)
            for a in range(P):
                d = I_seg[seg, a]
                for b in range(P):
                    d += J[a, b] * (acc[b] / (offsets[b + 1] - offsets[b]))
                drift[a] = d
            _fill(z, k0, k1, s)
            total = 0.0
            for a in range(P):
                ca = a1[a]
                da = dt * drift[a]
                sa = s_seg[seg, a]
                ga = g[a]
                gm = gamma[a]
                sacc = 0.0
                for i in range(offsets[a], offsets[a + 1]):
                    v = ca * V[r, i] + da + sa * z[i]
                    V[r, i] = v
                    total += v
                    sacc += phi_fast(ga * v + gm, tab)
                acc[a] = sacc
            if not math.isfinite(total):
                diverged[r] = s + 1
                break
            if (s + 1) % rec_every == 0:
                if mode == 0:
                    out_full[rec, r, :] = V[r, :]
                elif mode == 1:
                    _record_stats(V, r, offsets, out_mean, out_m2, rec)
                rec += 1


@nb.njit(parallel=True, fastmath=_FASTMATH, error_model="numpy", cache=True)
def _coupled_kernel(
    V, W, offsets, keys, n_steps, dt, a1, g, gamma, J,
    seg_step, I_seg, s_seg, companion_drift, rec_every, out_disc, sup_disc, tab, diverged,
):
    R, N = V.shape
    P = offsets.shape[0] - 1
    for r in nb.prange(R):
        k0 = keys[r, 0]
        k1 = keys[r, 1]
        z = np.empty(N)
        acc = np.empty(P)
        drift = np.empty(P)
        for a in range(P):
            sacc = 0.0
            for i in range(offsets[a], offsets[a + 1]):
                sacc += phi_fast(g[a] * V[r, i] + gamma[a], tab)
            acc[a] = sacc
        worst = 0.0
        for i in range(N):
            worst = max(worst, abs(V[r, i] - W[r, i]))
        out_disc[0, r] = worst
        sup = worst
        rec = 1
        seg = 0
        for s in range(n_steps):
            seg = _segment(seg_step, seg, s)
            for a in range(P):
                d = I_seg[seg, a]
                for b in range(P):
                    d += J[a, b] * (acc[b] / (offsets[b + 1] - offsets[b]))
                drift[a] = d
            _fill(z, k0, k1, s)
            total = 0.0
            worst = 0.0
            for a in range(P):
                ca = a1[a]
                da = dt * drift[a]
                wa = dt * companion_drift[s, a]
                sa = s_seg[seg, a]
                ga = g[a]
                gm = gamma[a]
                sacc = 0.0
                for i in range(offsets[a], offsets[a + 1]):
                    noise = sa * z[i]
                    v = ca * V[r, i] + da + noise
                    w = ca * W[r, i] + wa + noise
                    V[r, i] = v
                    W[r, i] = w
                    total += v
                    worst = max(worst, abs(v - w))
                    sacc += phi_fast(ga * v + gm, tab)
                acc[a] = sacc
            if not math.isfinite(total):
                diverged[r] = s + 1
                break
            sup = max(sup, worst)
            if (s + 1) % rec_every == 0:
                out_disc[rec, r] = worst
                rec += 1
        sup_disc[r] = sup


# }}}


def _schedule_tables(spec: ModelSpec, sim: SimConfig):
    """Segment start steps and the input and noise-per-step values on each segment."""
    breaks = spec.breakpoints(sim.t_end)
    starts = [0.0] + breaks
    seg_step = np.array([int(math.ceil(t / sim.dt - 1e-9)) for t in starts], dtype=np.int64)
    I_seg = np.array([spec.input_at(t) for t in starts])
    s_seg = np.array([spec.noise_at(t) for t in starts]) * math.sqrt(sim.dt)
    return seg_step, I_seg, s_seg


def _kernel_params(spec: ModelSpec, sim: SimConfig):
    seg_step, I_seg, s_seg = _schedule_tables(spec, sim)
    return (
        sim.dt,
        1.0 - sim.dt / spec.tau,
        spec.gain.copy(),
        spec.threshold.copy(),
        np.ascontiguousarray(spec.connectivity, dtype=float),
        seg_step,
        I_seg,
        s_seg,
    )


def _raise_if_diverged(diverged: np.ndarray) -> None:
    bad = np.flatnonzero(diverged >= 0)
    if bad.size:
        r = int(bad[np.argmin(diverged[bad])])
        raise IntegrationDivergedError(int(diverged[r]), r)


@dataclass
class EnsembleRun:
    """Result of :func:`run_ensemble`.

    ``pop_mean`` and ``pop_m2`` hold, per record time, realization and
    population, the within-population mean and sum of squared deviations.
    """

    spec: ModelSpec
    sim: SimConfig
    init: InitialLaw
    times: np.ndarray
    offsets: np.ndarray
    final: EnsembleState
    pop_mean: np.ndarray | None = None
    pop_m2: np.ndarray | None = None
    voltages: np.ndarray | None = None
    wall_time: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def population_of(self) -> np.ndarray:
        return self.final.population_of

    def throughput(self) -> float:
        """Neuron-steps per second."""
        work = self.sim.n_total * self.sim.n_realizations * self.sim.n_steps
        return work / self.wall_time if self.wall_time > 0 else float("inf")


def full_trajectory_bytes(sim: SimConfig) -> int:
    return sim.n_records * sim.n_realizations * sim.n_total * 8


def run_ensemble(spec: ModelSpec, sim: SimConfig, init: InitialLaw) -> EnsembleRun:
    """Simulate ``sim.n_realizations`` independent networks from ``init``.

    Output is a deterministic function of ``(spec, sim, init)``.
    """
    if sim.record_mode == "full_trajectories":
        need = full_trajectory_bytes(sim)
        if need > sim.memory_cap_bytes:
            raise MemoryBudgetError(need, sim.memory_cap_bytes)
    offsets, _ = population_layout(spec, sim.n_total)
    state = sample_initial(spec, sim, init)
    V = np.ascontiguousarray(state.voltages)
    R, N, P = sim.n_realizations, sim.n_total, spec.n_pop
    K = sim.n_records
    mode = _MODE_CODE[sim.record_mode]
    out_full = np.empty((K if mode == 0 else 1, R, N if mode == 0 else 1))
    out_mean = np.empty((K if mode == 1 else 1, R, P))
    out_m2 = np.empty_like(out_mean)
    diverged = np.full(R, -1, dtype=np.int64)
    keys = rng.stream_keys(sim.seed, R, rng.NOISE_STREAM)

    t0 = time.perf_counter()
    _network_kernel(
        V, offsets, keys, sim.n_steps, *_kernel_params(spec, sim),
        sim.record_every, mode, out_mean, out_m2, out_full, PHI_TABLE, diverged,
    )
    wall = time.perf_counter() - t0
    _raise_if_diverged(diverged)

    return EnsembleRun(
        spec=spec,
        sim=sim,
        init=init,
        times=sim.record_times(),
        offsets=offsets,
        final=EnsembleState(V, state.population_of, sim.n_steps * sim.dt),
        pop_mean=out_mean if mode == 1 else None,
        pop_m2=out_m2 if mode == 1 else None,
        voltages=out_full if mode == 0 else None,
        wall_time=wall,
    )


# {{{ statistics


@dataclass(frozen=True)
class PopulationStats:
    """Per-population empirical mean and unbiased variance.

    Arrays are shaped ``(..., P)``; a leading time axis is present for
    trajectories and a realization axis when not pooled.
    """

    times: np.ndarray | None
    mean: np.ndarray
    variance: np.ndarray


def _pool(mean: np.ndarray, m2: np.ndarray, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Combine per-realization groups (axis -2) into one sample per population."""
    R = mean.shape[-2]
    grand = mean.mean(axis=-2)
    m2_tot = m2.sum(axis=-2) + n * ((mean - grand[..., None, :]) ** 2).sum(axis=-2)
    return grand, m2_tot / (R * n - 1)


def _state_moments(V: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    P = offsets.size - 1
    mean = np.empty(V.shape[:-1] + (P,))
    m2 = np.empty_like(mean)
    for a in range(P):
        block = V[..., offsets[a] : offsets[a + 1]]
        mean[..., a] = block.mean(axis=-1)
        m2[..., a] = ((block - mean[..., a : a + 1]) ** 2).sum(axis=-1)
    return mean, m2


def _offsets_from_populations(pop: np.ndarray) -> np.ndarray:
    if np.any(np.diff(pop) < 0):
        raise SpecError("population_of must list neurons population by population")
    counts = np.bincount(pop)
    if np.any(counts == 0):
        raise SpecError("empty population")
    return np.concatenate([[0], np.cumsum(counts)])


def empirical_stats(obj: EnsembleState | EnsembleRun, pool: bool = True) -> PopulationStats:
    """Population means and unbiased variances of a state or a recorded run.

    With ``pool`` the realizations are merged into one sample per population;
    otherwise statistics are per realization.
    """
    if isinstance(obj, EnsembleState):
        offsets = _offsets_from_populations(obj.population_of)
        n = np.diff(offsets)
        if np.any(n < 2):
            raise SpecError("need at least 2 neurons per population")
        mean, m2 = _state_moments(obj.voltages, offsets)
        times = None
    else:
        offsets = obj.offsets
        n = np.diff(offsets)
        if np.any(n < 2):
            raise SpecError("need at least 2 neurons per population")
        times = obj.times
        if obj.pop_mean is not None:
            mean, m2 = obj.pop_mean, obj.pop_m2
        elif obj.voltages is not None:
            mean, m2 = _state_moments(obj.voltages, offsets)
        else:
            mean, m2 = _state_moments(obj.final.voltages, offsets)
            times = np.array([obj.final.time])
            mean, m2 = mean[None], m2[None]
    if pool:
        mean, var = _pool(mean, m2, n)
    else:
        var = m2 / (n - 1)
    return PopulationStats(times, mean, var)


# }}}


# {{{ coupling with the mean-field companion


def discrete_moments(spec: ModelSpec, init: InitialLaw, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Moment recursion matching the Euler-Maruyama discretization.

    A mean-field copy stepped by Euler-Maruyama stays exactly Gaussian, with
    mean and variance obeying this recursion; using it for the companion
    removes the time-discretization error from the coupling discrepancy.
    """
    P = spec.n_pop
    mu = np.empty((n_steps + 1, P))
    v = np.empty((n_steps + 1, P))
    mu[0], v[0] = init.mean, init.variance
    a1 = 1.0 - dt / spec.tau
    J = spec.connectivity
    for k in range(n_steps):
        t = k * dt
        f = closure_f(mu[k], v[k], spec.gain, spec.threshold)
        mu[k + 1] = a1 * mu[k] + dt * (spec.input_at(t) + J @ f)
        v[k + 1] = a1 * a1 * v[k] + spec.noise_at(t) ** 2 * dt
    return mu, v


@dataclass
class CoupledRun:
    """Network and mean-field companions driven by identical noise.

    ``sup_discrepancy[r]`` is ``sup_t max_i |V_i - Vbar_i|`` for realization ``r``;
    ``discrepancy`` holds ``max_i |V_i - Vbar_i|`` at the record times.
    """

    times: np.ndarray
    sup_discrepancy: np.ndarray
    discrepancy: np.ndarray
    network: EnsembleState
    companion: EnsembleState
    mf_mean: np.ndarray
    mf_variance: np.ndarray
    wall_time: float = 0.0

    @property
    def mean_sup(self) -> float:
        return float(self.sup_discrepancy.mean())


def run_coupled(spec: ModelSpec, sim: SimConfig, init: InitialLaw) -> CoupledRun:
    """Run the network alongside independent mean-field copies of each neuron.

    Copy ``i`` starts from neuron ``i``'s initial voltage and receives the same
    Brownian increments, but feels the mean-field input
    ``sum_b J_ab f(mu_b(t), v_b(t))`` instead of the empirical rates.
    """
    offsets, _ = population_layout(spec, sim.n_total)
    state = sample_initial(spec, sim, init)
    V = np.ascontiguousarray(state.voltages)
    W = V.copy()
    R = sim.n_realizations
    mu, v = discrete_moments(spec, init, sim.dt, sim.n_steps)
    times = np.arange(sim.n_steps) * sim.dt
    inputs = np.array([spec.input_at(t) for t in times]).reshape(sim.n_steps, spec.n_pop)
    f = closure_f(mu[:-1], v[:-1], spec.gain, spec.threshold)
    companion_drift = np.ascontiguousarray(inputs + f @ spec.connectivity.T)
    out_disc = np.empty((sim.n_records, R))
    sup = np.empty(R)
    diverged = np.full(R, -1, dtype=np.int64)
    keys = rng.stream_keys(sim.seed, R, rng.NOISE_STREAM)
    t0 = time.perf_counter()
    dt, a1, g, gamma, J, seg_step, I_seg, s_seg = _kernel_params(spec, sim)
    _coupled_kernel(
        V, W, offsets, keys, sim.n_steps, dt, a1, g, gamma, J, seg_step, I_seg, s_seg,
        companion_drift, sim.record_every, out_disc, sup, PHI_TABLE, diverged,
    )
    wall = time.perf_counter() - t0
    _raise_if_diverged(diverged)
    t_end = sim.n_steps * sim.dt
    return CoupledRun(
        times=sim.record_times(),
        sup_discrepancy=sup,
        discrepancy=out_disc,
        network=EnsembleState(V, state.population_of, t_end),
        companion=EnsembleState(W, state.population_of, t_end),
        mf_mean=mu,
        mf_variance=v,
        wall_time=wall,
    )


# }}}


# {{{ CSV output


def write_trajectory_csv(run: EnsembleRun, path: str | Path, meta: dict | None = None) -> Path:
    """Full-mode samples, one row per (time, realization, neuron)."""
    if run.voltages is None:
        raise SpecError("run was not recorded in full_trajectories mode")
    pop = run.population_of

    def rows():
        for k, t in enumerate(run.times):
            for r in range(run.voltages.shape[1]):
                for i, val in enumerate(run.voltages[k, r]):
                    yield t, r, i, int(pop[i]), val

    return write_csv(path, ["t", "realization", "neuron", "population", "V"], rows(), meta)


def write_stats_csv(run: EnsembleRun, path: str | Path, meta: dict | None = None) -> Path:
    """Realization-pooled population mean and variance at every record time."""
    st = empirical_stats(run, pool=True)
    rows = (
        (t, a, st.mean[k, a], st.variance[k, a])
        for k, t in enumerate(st.times)
        for a in range(run.spec.n_pop)
    )
    return write_csv(path, ["t", "population", "emp_mean", "emp_var"], rows, meta)


# }}}
