"""Spectra, goodness-of-fit and independence tests, and convergence-rate fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import t as student_t

from .errors import DomainError
from .io import write_csv, write_json

# {{{ spectra


@dataclass(frozen=True)
class SpectrumResult:
    """One-sided squared DFT moduli of a mean-removed, windowed signal.

    ``power[k] = |X_k|^2`` at ``freqs[k]`` cycles per time unit, ``k = 0..n//2``.
    """

    freqs: np.ndarray
    power: np.ndarray
    window: str
    n: int
    dt: float
    energy: float

    @property
    def bin_width(self) -> float:
        return 1.0 / (self.n * self.dt)

    def parseval_sum(self) -> float:
        """Signal energy rebuilt from the one-sided spectrum."""
        w = np.full(self.power.size, 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return float(np.dot(w, self.power) / self.n)

    def peak(self) -> tuple[int, float]:
        """Index and frequency of the largest nonzero-frequency bin."""
        k = int(np.argmax(self.power[1:])) + 1
        return k, float(self.freqs[k])

    def has_peak(self, prominence: float = 10.0) -> bool:
        """Whether the largest nonzero bin stands ``prominence`` times above the median bin."""
        if not np.any(self.power[1:] > 0):
            return False
        k, _ = self.peak()
        return bool(self.power[k] > prominence * np.median(self.power[1:]))

    def coherence(self, half_width: int = 2) -> float:
        """Share of nonzero-frequency power within ``half_width`` bins of the peak and its harmonics.

        Near 1 for a limit cycle, small for broadband noise.
        """
        p = self.power[1:]
        total = p.sum()
        if total <= 0:
            return 0.0
        k, _ = self.peak()
        mask = np.zeros(self.power.size, dtype=bool)
        for h in range(1, (self.power.size - 1) // k + 1):
            c = h * k
            mask[max(1, c - half_width) : c + half_width + 1] = True
        return float(self.power[mask].sum() / total)

    def has_resonance(self, min_bin: int = 3, threshold: float = 0.8) -> bool:
        """Whether the dominant bin sits away from DC and carries a coherent oscillation."""
        if not np.any(self.power[1:] > 0):
            return False
        k, _ = self.peak()
        return k >= min_bin and self.coherence() >= threshold


def power_spectrum(signal, dt: float, window: str = "hann", times=None) -> SpectrumResult:
    """Squared moduli of the DFT of a uniformly sampled signal after removing its mean."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size < 16:
        raise DomainError("signal must be one-dimensional with at least 16 samples")
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError("dt must be positive")
    if times is not None:
        steps = np.diff(np.asarray(times, dtype=float))
        if steps.size != x.size - 1 or np.max(np.abs(steps - dt)) > 1e-9 * dt:
            raise DomainError("signal is not uniformly sampled at the given dt")
    n = x.size
    if np.all(x == x[0]):
        y = np.zeros(n)
    else:
        y = x - x.mean()
    if window == "hann":
        y = y * np.hanning(n)
    elif window not in ("rect", "rectangular", "none"):
        raise DomainError(f"unknown window {window!r}")
    X = np.fft.rfft(y)
    return SpectrumResult(
        freqs=np.fft.rfftfreq(n, dt),
        power=(X.real**2 + X.imag**2),
        window="hann" if window == "hann" else "rect",
        n=n,
        dt=dt,
        energy=float(np.dot(y, y)),
    )


def write_spectrum_csv(spec: SpectrumResult, path: str | Path, meta: dict | None = None) -> Path:
    return write_csv(path, ["freq", "power"], zip(spec.freqs, spec.power), meta)


# }}}


# {{{ hypothesis tests


@dataclass(frozen=True)
class TestReport:
    statistic: float
    p_value: float
    n: int
    alpha: float
    verdict: str
    critical_value: float | None = None

    __test__ = False  # not a pytest class

    @property
    def rejected(self) -> bool:
        return self.verdict == "reject"

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path, meta: dict | None = None) -> Path:
        return write_json(path, self.to_dict(), meta)


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """``P(K > x)`` for the Kolmogorov distribution.

    Uses ``2 sum (-1)^(k-1) exp(-2 k^2 x^2)`` for moderate and large ``x``,
    and the Jacobi theta form of the CDF for small ``x`` where the
    alternating series converges slowly.
    """
    if x <= 0:
        return 1.0
    if x < 1.0:
        c = -(math.pi**2) / (8.0 * x * x)
        cdf = math.sqrt(2.0 * math.pi) / x * sum(math.exp(c * (2 * k - 1) ** 2) for k in range(1, terms + 1))
        return min(1.0, max(0.0, 1.0 - cdf))
    s = 0.0
    for k in range(1, terms + 1):
        s += (-1) ** (k - 1) * math.exp(-2.0 * k * k * x * x)
    return min(1.0, max(0.0, 2.0 * s))


def kolmogorov_critical(alpha: float) -> float:
    """``x`` with ``P(K > x) = alpha``, by bisection."""
    lo, hi = 0.2, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kolmogorov_sf(mid) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ks_statistic(samples, cdf) -> float:
    """``sup_x |F_n(x) - F(x)|``, attained at a sample point from one side or the other."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_gaussian_test(samples, mu: float, v: float, alpha: float = 0.05) -> TestReport:
    """One-sample Kolmogorov-Smirnov test against Gaussian(mu, v)."""
    x = np.asarray(samples, dtype=float).ravel()
    if v <= 0:
        raise DomainError("variance must be positive")
    if x.size < 20:
        raise DomainError("need at least 20 samples")
    sd = math.sqrt(v)
    D = ks_statistic(x, lambda y: ndtr((y - mu) / sd))
    n = x.size
    p = kolmogorov_sf(math.sqrt(n) * D)
    crit = kolmogorov_critical(alpha) / math.sqrt(n)
    return TestReport(D, p, n, alpha, "reject" if p < alpha else "fail_to_reject", crit)


def independence_test(x, y, alpha: float = 0.05) -> TestReport:
    """Pearson correlation with the two-sided t-approximation p-value under ``r = 0``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise DomainError("inputs must have equal length")
    n = x.size
    if n < 10:
        raise DomainError("need at least 10 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise DomainError("zero-variance input")
    r = float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        tval = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * student_t.sf(abs(tval), n - 2))
    return TestReport(r, p, n, alpha, "reject" if p < alpha else "fail_to_reject")


# }}}


# {{{ convergence rate


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_rate(discrepancies: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log N, log d)``."""
    data = np.asarray(discrepancies, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise DomainError("expected (N, discrepancy) pairs")
    N, d = data[:, 0], data[:, 1]
    if np.unique(N).size < 3:
        raise DomainError("need at least 3 distinct N values")
    if np.any(d <= 0) or np.any(N <= 0):
        raise DomainError("N and discrepancies must be positive")
    slope, intercept = np.polyfit(np.log(N), np.log(d), 1)
    return RateFit(float(slope), float(intercept), int(N.size))


# }}}
