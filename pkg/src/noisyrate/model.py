"""Model parameters, the Gaussian-CDF sigmoid and the Gaussian moment closure.

A network is made of ``P`` populations.  Neuron ``i`` in population ``a`` obeys

    dV = (-V / tau_a + I_a(t) + sum_b J_ab * mean_{j in b} S_b(V_j)) dt + lambda_a(t) dB

with ``S_b(x) = Phi(g_b x + gamma_b)`` and ``Phi`` the standard normal CDF.
In the large-network limit every neuron is Gaussian with mean ``mu_a(t)`` and
variance ``v_a(t)``; the expectation ``E[S_b(U)]`` for ``U ~ N(mu, v)`` has the
closed form implemented by :func:`closure_f`.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, SpecError

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _out(x: np.ndarray, scalar: bool):
    return float(x) if scalar else x


def _is_scalar(*args) -> bool:
    return all(np.ndim(a) == 0 for a in args)


# {{{ schedules


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant function of time.

    ``points`` is a sequence of ``(t_start, value)`` pairs sorted by start time;
    the first start must be 0.  The value holds until the next start.
    """

    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(t), float(v)) for t, v in self.points)
        if not pts:
            raise SpecError("schedule needs at least one (t_start, value) pair")
        if pts[0][0] != 0.0:
            raise SpecError(f"schedule must start at t=0, got {pts[0][0]}")
        starts = [t for t, _ in pts]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise SpecError("schedule start times must be strictly increasing")
        if not all(math.isfinite(v) for _, v in pts):
            raise SpecError("schedule values must be finite")
        object.__setattr__(self, "points", pts)

    @classmethod
    def constant(cls, value: float) -> Schedule:
        return cls(((0.0, float(value)),))

    @property
    def starts(self) -> np.ndarray:
        return np.array([t for t, _ in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points])

    @property
    def is_constant(self) -> bool:
        return len(self.points) == 1

    @property
    def final(self) -> float:
        return self.points[-1][1]

    def __call__(self, t):
        idx = np.searchsorted(self.starts, t, side="right") - 1
        out = self.values[np.clip(idx, 0, None)]
        return float(out) if np.ndim(t) == 0 else out

    def segments(self, t_end: float) -> Iterable[tuple[float, float, float]]:
        """Yield ``(a, b, value)`` for the pieces intersecting ``[0, t_end]``."""
        starts = self.starts
        for k, (a, v) in enumerate(self.points):
            if a >= t_end:
                break
            b = starts[k + 1] if k + 1 < len(starts) else math.inf
            yield a, min(b, t_end), v


def as_schedule(value: float | Schedule | Iterable) -> Schedule:
    if isinstance(value, Schedule):
        return value
    if np.ndim(value) == 0:
        return Schedule.constant(float(value))
    return Schedule(tuple((float(t), float(v)) for t, v in value))


def _schedule_to_json(value: float | Schedule):
    if isinstance(value, Schedule):
        if value.is_constant:
            return value.final
        return [[t, v] for t, v in value.points]
    return float(value)


# }}}


# {{{ parameters


@dataclass(frozen=True)
class PopulationParams:
    """Parameters of one population.

    ``noise`` and ``input`` may be constants or :class:`Schedule` objects.
    """

    tau: float = 1.0
    gain: float = 1.0
    threshold: float = 0.0
    noise: float | Schedule = 0.0
    input: float | Schedule = 0.0
    fraction: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise SpecError(f"tau must be positive, got {self.tau}")
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise SpecError(f"gain must be positive, got {self.gain}")
        if not math.isfinite(self.threshold):
            raise SpecError(f"threshold must be finite, got {self.threshold}")
        noise = as_schedule(self.noise)
        if np.any(noise.values < 0):
            raise SpecError("noise must be non-negative")
        as_schedule(self.input)

    def noise_at(self, t):
        return as_schedule(self.noise)(t)

    def input_at(self, t):
        return as_schedule(self.input)(t)


_INDEXED = re.compile(r"^(\w+)\[(\d+)\]$")
_ALIASES = {"g": "gain", "gamma": "threshold", "lambda": "noise", "lam": "noise", "I": "input"}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A ``P``-population network.

    ``connectivity[a, b]`` is the total weight that population ``b`` exerts on
    each neuron of population ``a``; the per-synapse weight is this value divided
    by the size of population ``b``.
    """

    populations: tuple[PopulationParams, ...]
    connectivity: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        pops = tuple(self.populations)
        if not pops:
            raise SpecError("a model needs at least one population")
        object.__setattr__(self, "populations", pops)
        J = np.array(self.connectivity, dtype=float)
        if J.ndim == 0 and len(pops) == 1:
            J = J.reshape(1, 1)
        P = len(pops)
        if J.shape != (P, P):
            raise SpecError(f"connectivity must be {P}x{P}, got shape {J.shape}")
        if not np.all(np.isfinite(J)):
            raise SpecError("connectivity must be finite")
        J.setflags(write=False)
        object.__setattr__(self, "connectivity", J)

        fr = np.array([p.fraction for p in pops])
        if P == 1:
            if abs(fr[0] - 1.0) > 1e-12:
                raise SpecError("a single population must have fraction 1")
        else:
            if np.any(fr <= 0) or np.any(fr >= 1):
                raise SpecError("population fractions must lie strictly in (0, 1)")
            if abs(fr.sum() - 1.0) > 1e-12:
                raise SpecError(f"population fractions must sum to 1, got {fr.sum()!r}")

    @property
    def n_pop(self) -> int:
        return len(self.populations)

    @property
    def tau(self) -> np.ndarray:
        return np.array([p.tau for p in self.populations])

    @property
    def gain(self) -> np.ndarray:
        return np.array([p.gain for p in self.populations])

    @property
    def threshold(self) -> np.ndarray:
        return np.array([p.threshold for p in self.populations])

    @property
    def fraction(self) -> np.ndarray:
        return np.array([p.fraction for p in self.populations])

    def noise_at(self, t: float) -> np.ndarray:
        return np.array([p.noise_at(t) for p in self.populations])

    def input_at(self, t: float) -> np.ndarray:
        return np.array([p.input_at(t) for p in self.populations])

    @property
    def final_noise(self) -> np.ndarray:
        return np.array([as_schedule(p.noise).final for p in self.populations])

    @property
    def final_input(self) -> np.ndarray:
        return np.array([as_schedule(p.input).final for p in self.populations])

    @property
    def is_autonomous(self) -> bool:
        return all(
            as_schedule(p.noise).is_constant and as_schedule(p.input).is_constant
            for p in self.populations
        )

    def breakpoints(self, t_end: float) -> list[float]:
        """Interior schedule switch times in ``(0, t_end)``."""
        ts: set[float] = set()
        for p in self.populations:
            for s in (as_schedule(p.noise), as_schedule(p.input)):
                ts.update(float(t) for t in s.starts if 0.0 < t < t_end)
        return sorted(ts)

    # parameters by name, used by continuation and sweeps

    def get_parameter(self, name: str) -> float:
        if name == "j":
            return 1.0
        attr, idx = self._resolve(name)
        pops = self.populations if idx is None else [self.populations[idx]]
        vals = [_scalar_value(getattr(p, attr)) for p in pops]
        return vals[0]

    def with_parameter(self, name: str, value: float) -> ModelSpec:
        """Return a copy with one named parameter replaced.

        Names are population fields (``gain``, ``threshold``, ``noise``, ``tau``,
        ``input``) applied to every population, an indexed form such as
        ``input[0]``, the 1-based aliases ``I1``, ``I2``, ..., or ``j`` which
        rescales the whole connectivity matrix by ``value``.
        """
        if name == "j":
            return replace(self, connectivity=value * self.connectivity)
        attr, idx = self._resolve(name)
        pops = list(self.populations)
        targets = range(len(pops)) if idx is None else [idx]
        for k in targets:
            pops[k] = replace(pops[k], **{attr: float(value)})
        return replace(self, populations=tuple(pops))

    def _resolve(self, name: str) -> tuple[str, int | None]:
        m = re.fullmatch(r"I(\d+)", name)
        if m:
            name = f"input[{int(m.group(1)) - 1}]"
        idx = None
        m = _INDEXED.match(name)
        if m:
            name, idx = m.group(1), int(m.group(2))
            if not 0 <= idx < self.n_pop:
                raise SpecError(f"population index {idx} out of range")
        name = _ALIASES.get(name, name)
        if name not in {"tau", "gain", "threshold", "noise", "input"}:
            raise SpecError(f"unknown parameter {name!r}")
        return name, idx

    # serialization

    def to_dict(self) -> dict[str, Any]:
        return {
            "populations": [
                {
                    "tau": p.tau,
                    "gain": p.gain,
                    "threshold": p.threshold,
                    "noise": _schedule_to_json(p.noise),
                    "input": _schedule_to_json(p.input),
                    "fraction": p.fraction,
                }
                for p in self.populations
            ],
            "connectivity": self.connectivity.tolist(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> ModelSpec:
        try:
            pops = []
            for p in doc["populations"]:
                kw = dict(p)
                for key in ("noise", "input"):
                    if key in kw and np.ndim(kw[key]) > 0:
                        kw[key] = as_schedule(kw[key])
                pops.append(PopulationParams(**kw))
            return cls(tuple(pops), np.asarray(doc["connectivity"], dtype=float), doc.get("label", ""))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed model document: {exc}") from exc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> ModelSpec:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> ModelSpec:
        return cls.from_json(Path(path).read_text())


def _scalar_value(v) -> float:
    return as_schedule(v).final if isinstance(v, Schedule) else float(v)


@dataclass(frozen=True)
class MomentState:
    """Mean and variance of every population at one time."""

    time: float
    mean: np.ndarray
    variance: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.zeros_like(mean) if self.variance is None else np.atleast_1d(np.asarray(self.variance, dtype=float))
        if var.shape != mean.shape:
            raise SpecError("mean and variance must have the same length")
        if np.any(var < 0):
            raise DomainError("variance components must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)


# }}}


# {{{ presets


def pitchfork_network(J: float = 1.0, gain: float = 1.0, noise: float = 0.0, tau: float = 1.0) -> ModelSpec:
    """One population with input ``-J/2`` so that ``mu = 0`` is always an equilibrium."""
    pop = PopulationParams(tau=tau, gain=gain, threshold=0.0, noise=noise, input=-J / 2, fraction=1.0)
    return ModelSpec((pop,), np.array([[J]]), label="one-population pitchfork")


def hopf_network(J: float = 1.0, gain: float = 1.0, noise: float = 0.0) -> ModelSpec:
    """Two equal populations with rotation-like coupling ``J [[1, -1], [1, 1]]``."""
    pops = (
        PopulationParams(gain=gain, noise=noise, input=0.0, fraction=0.5),
        PopulationParams(gain=gain, noise=noise, input=-J, fraction=0.5),
    )
    return ModelSpec(pops, J * np.array([[1.0, -1.0], [1.0, 1.0]]), label="two-population hopf")


EI_CONNECTIVITY = np.array([[15.0, -12.0], [16.0, -5.0]])


def ei_network(
    noise: float = 0.0,
    I1: float = 0.0,
    I2: float = -3.0,
    j: float = 1.0,
    gain: float = 1.0,
    threshold: float = 0.0,
    tau: float = 1.0,
) -> ModelSpec:
    """Excitatory/inhibitory pair with weights ``j [[15, -12], [16, -5]]``."""
    pops = (
        PopulationParams(tau=tau, gain=gain, threshold=threshold, noise=noise, input=I1, fraction=0.5),
        PopulationParams(tau=tau, gain=gain, threshold=threshold, noise=noise, input=I2, fraction=0.5),
    )
    return ModelSpec(pops, j * EI_CONNECTIVITY, label="excitatory-inhibitory")


# }}}


# {{{ sigmoid and closure


def sigmoid(x, g, gamma):
    """``Phi(g x + gamma)`` with ``Phi`` the standard normal CDF."""
    scalar = _is_scalar(x, g, gamma)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("sigmoid argument must be finite")
    return _out(ndtr(np.multiply(g, x) + gamma), scalar)


def _scaled_argument(mu, v, g, gamma):
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise DomainError("variance must be non-negative")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
        raise DomainError("mean and variance must be finite")
    g = np.asarray(g, dtype=float)
    s = np.sqrt(1.0 + g * g * v)
    return (g * mu + gamma) / s, s


def closure_f(mu, v, g, gamma):
    """``E[Phi(g U + gamma)]`` for ``U ~ N(mu, v)``.

    Equals ``Phi((g mu + gamma) / sqrt(1 + g^2 v))``: noise lowers the
    effective slope and threshold of the sigmoid.
    """
    scalar = _is_scalar(mu, v, g, gamma)
    z, _ = _scaled_argument(mu, v, g, gamma)
    return _out(ndtr(z), scalar)


def closure_f_dmu(mu, v, g, gamma):
    """Derivative of :func:`closure_f` with respect to ``mu``."""
    scalar = _is_scalar(mu, v, g, gamma)
    z, s = _scaled_argument(mu, v, g, gamma)
    return _out(np.asarray(g) / s * np.exp(-0.5 * z * z) / SQRT_2PI, scalar)


# }}}


# {{{ variance and covariance


def stationary_variance(spec: ModelSpec) -> np.ndarray:
    """Limit ``tau * lambda^2 / 2`` of the variance for the final noise levels."""
    return spec.tau * spec.final_noise**2 / 2.0


def _driven_variance(tau: float, noise: Schedule, t_lo: float, t_hi: float) -> float:
    """``exp(-(t_lo + t_hi)/tau) * int_0^t_lo exp(2s/tau) lambda(s)^2 ds`` for ``t_lo <= t_hi``."""
    total = 0.0
    for a, b, lam in noise.segments(t_lo):
        if lam == 0.0:
            continue
        # overflow-free: exponents are all <= 0
        total += lam * lam * tau / 2.0 * (
            math.exp((2 * b - t_lo - t_hi) / tau) - math.exp((2 * a - t_lo - t_hi) / tau)
        )
    return total


def variance_trajectory(v0: float, tau: float, lam, t: float) -> float:
    """Variance at time ``t`` of the mean-field solution started with variance ``v0``.

    ``lam`` is a constant noise level or a :class:`Schedule`.
    """
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if v0 < 0:
        raise DomainError(f"initial variance must be non-negative, got {v0}")
    return _covariance_same(v0, tau, as_schedule(lam), t, t)


def _covariance_same(c0: float, tau: float, noise: Schedule, t1: float, t2: float) -> float:
    lo, hi = min(t1, t2), max(t1, t2)
    return math.exp(-(t1 + t2) / tau) * c0 + _driven_variance(tau, noise, lo, hi)


def covariance(spec: ModelSpec, alpha: int, beta: int, t1: float, t2: float, v0_cov) -> float:
    """Two-time covariance ``Cov(V_alpha(t1), V_beta(t2))`` of the mean-field solution.

    Populations are driven by independent Brownian motions, so for
    ``alpha != beta`` only the decayed initial covariance survives.
    """
    if t1 < 0 or t2 < 0:
        raise DomainError("times must be non-negative")
    C0 = np.atleast_2d(np.asarray(v0_cov, dtype=float))
    pa, pb = spec.populations[alpha], spec.populations[beta]
    if alpha == beta:
        return _covariance_same(float(C0[alpha, alpha]), pa.tau, as_schedule(pa.noise), t1, t2)
    return math.exp(-(t1 / pa.tau + t2 / pb.tau)) * float(C0[alpha, beta])


# }}}
