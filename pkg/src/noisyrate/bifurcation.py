"""Equilibria, continuation and bifurcations of the mean-field moment equations.

The variance relaxes to ``tau * lambda^2 / 2`` independently of the mean, so
equilibria and their stability are those of the mean dynamics with the
variance frozen at that value.  Noise then acts only through the effective
gain ``g / sqrt(1 + g^2 v)`` and threshold ``gamma / sqrt(1 + g^2 v)``.

Curves are followed by pseudo-arclength continuation.  The same tracer serves
equilibrium branches (one free parameter) and fold or Hopf loci (two free
parameters) by swapping the defining system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import SpecError
from .io import write_csv, write_json
from .meanfield import rk4_kernel
from .model import ModelSpec, MomentState, stationary_variance

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
MERGE_DISTANCE = 1e-7
CYCLE_AMPLITUDE_FLOOR = 1e-4
CYCLE_JITTER_BOUND = 0.01
HOMOCLINIC_TOLERANCE = 0.05

KINDS = (
    "saddle_node",
    "pitchfork",
    "branch_point",
    "hopf",
    "bogdanov_takens",
    "cusp",
    "hopf_turning_point",
    "homoclinic_estimate",
)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# {{{ records


@dataclass
class EquilibriumRecord:
    """A fixed point of the mean dynamics at stationary variance."""

    parameter_point: dict[str, float]
    mu_star: np.ndarray
    variance: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    stability: str
    classification_flags: frozenset[str]
    residual: float

    def to_dict(self) -> dict:
        return {
            "parameter_point": self.parameter_point,
            "mu_star": self.mu_star.tolist(),
            "variance": self.variance.tolist(),
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "stability": self.stability,
            "flags": sorted(self.classification_flags),
            "residual": self.residual,
        }


@dataclass
class BifurcationPoint:
    kind: str
    parameter_values: dict[str, float]
    state: np.ndarray
    auxiliary: dict = field(default_factory=dict)
    tolerance: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "parameter_values": self.parameter_values,
            "state": np.asarray(self.state).tolist(),
            "auxiliary": self.auxiliary,
            "tolerance": self.tolerance,
        }


@dataclass
class Branch:
    """A continued equilibrium branch; arrays are indexed by continuation step."""

    parameter: str
    params: np.ndarray
    states: np.ndarray
    stability: list[str]
    eigenvalues: np.ndarray
    points: list[BifurcationPoint]
    truncated: bool = False


@dataclass
class ContinuationResult:
    parameter: str
    branches: list[Branch]
    points: list[BifurcationPoint]

    def kinds(self) -> list[str]:
        return [p.kind for p in self.points]


@dataclass
class SweepResult:
    """Attractor labels over a one- or two-parameter grid.

    ``labels[i, j]`` belongs to ``(axes[0].values[i], axes[1].values[j])``.
    ``boundaries`` lists refined transition locations between adjacent cells.
    """

    axes: list[dict]
    labels: np.ndarray
    boundaries: list[dict] = field(default_factory=list)
    points: list[BifurcationPoint] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def write(self, csv_path: str | Path, json_path: str | Path, meta: dict | None = None) -> None:
        a0 = self.axes[0]
        a1 = self.axes[1] if len(self.axes) > 1 else {"name": "", "values": [float("nan")]}
        rows = (
            (x, y, self.labels[i, j])
            for i, x in enumerate(a0["values"])
            for j, y in enumerate(a1["values"])
        )
        write_csv(csv_path, ["p1", "p2", "label"], rows, meta)
        doc = {
            "axes": [{"name": a["name"], "values": list(map(float, a["values"]))} for a in self.axes],
            "boundaries": self.boundaries,
            "bifurcation_points": [p.to_dict() for p in self.points],
            "calibration": self.metadata,
        }
        write_json(json_path, doc, meta)


# }}}


# {{{ vector field at frozen variance


class MeanField:
    """Mean drift of one model at stationary variance, with derivatives."""

    def __init__(self, spec: ModelSpec, variance: np.ndarray | None = None):
        self.spec = spec
        v = stationary_variance(spec) if variance is None else np.asarray(variance, dtype=float)
        self.v = v
        s = np.sqrt(1.0 + spec.gain**2 * v)
        self.ge = spec.gain / s
        self.ce = spec.threshold / s
        self.inv_tau = 1.0 / spec.tau
        self.J = np.asarray(spec.connectivity)
        self.I = spec.final_input
        self.P = spec.n_pop

    def rhs(self, mu: np.ndarray) -> np.ndarray:
        return -mu * self.inv_tau + self.J @ ndtr(self.ge * mu + self.ce) + self.I

    def slope(self, mu: np.ndarray) -> np.ndarray:
        z = self.ge * mu + self.ce
        return self.ge * np.exp(-0.5 * z * z) * _INV_SQRT_2PI

    def jac(self, mu: np.ndarray) -> np.ndarray:
        return self.J * self.slope(mu)[None, :] - np.diag(self.inv_tau)

    def curvature(self, mu: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Second derivative ``D^2 F(mu)[u, u]``."""
        z = self.ge * mu + self.ce
        f2 = -self.ge**2 * z * np.exp(-0.5 * z * z) * _INV_SQRT_2PI
        return self.J @ (f2 * u * u)


def mean_jacobian(spec: ModelSpec, mu) -> np.ndarray:
    """Jacobian of the mean drift at stationary variance."""
    return MeanField(spec).jac(np.asarray(mu, dtype=float))


def bialternate_det(A: np.ndarray) -> float:
    """Determinant of ``2 A (.) I``, whose eigenvalues are ``lambda_i + lambda_j`` for ``i < j``.

    It vanishes when a pair of eigenvalues sums to zero, as at a Hopf point.
    For 2x2 matrices it equals the trace.
    """
    n = A.shape[0]
    if n == 2:
        return float(A[0, 0] + A[1, 1])
    # product of lambda_i + lambda_j, a polynomial in the entries of A
    ev = np.linalg.eigvals(A)
    return float(np.prod([ev[i] + ev[j] for i, j in combinations(range(n), 2)]).real)


def classify(eigenvalues: np.ndarray, tol: float = 1e-3) -> tuple[str, frozenset[str]]:
    re = eigenvalues.real
    if np.all(re < 0):
        label = "stable"
    elif np.all(re > 0):
        label = "unstable"
    else:
        label = "saddle"
    flags = set()
    real = np.abs(eigenvalues.imag) < 1e-12
    if np.any(real & (np.abs(re) < tol)):
        flags.add("near_saddle_node")
    if np.any(~real & (np.abs(re) < tol)):
        flags.add("near_hopf")
    return label, frozenset(flags)


def _record(spec: ModelSpec, mu: np.ndarray, point: dict[str, float] | None = None) -> EquilibriumRecord:
    mf = MeanField(spec)
    A = mf.jac(mu)
    ev = np.linalg.eigvals(A)
    order = np.lexsort((ev.imag, ev.real))
    ev = ev[order]
    label, flags = classify(ev)
    return EquilibriumRecord(
        parameter_point=dict(point or {}),
        mu_star=mu.copy(),
        variance=mf.v.copy(),
        jacobian=A,
        eigenvalues=ev,
        stability=label,
        classification_flags=flags,
        residual=float(np.max(np.abs(mf.rhs(mu)))),
    )


# }}}


# {{{ equilibria


def newton(
    F: Callable[[np.ndarray], np.ndarray],
    DF: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> tuple[np.ndarray, bool]:
    """Damped Newton iteration for a square system."""
    x = np.array(x0, dtype=float)
    r = F(x)
    nr = np.max(np.abs(r))
    for _ in range(max_iter):
        if nr < tol:
            return x, True
        try:
            dx = np.linalg.solve(DF(x), -r)
        except np.linalg.LinAlgError:
            return x, False
        step = 1.0
        for _ in range(40):
            xn = x + step * dx
            rn = F(xn)
            nrn = np.max(np.abs(rn))
            if np.isfinite(nrn) and nrn < nr:
                break
            step *= 0.5
        else:
            return x, nr < 1e-10
        stalled = np.max(np.abs(xn - x)) <= 1e-15 * (1.0 + np.max(np.abs(x)))
        x, r, nr = xn, rn, nrn
        if stalled:
            return x, nr < 1e-10
    return x, nr < tol


def default_seeds(spec: ModelSpec, per_axis: int = 5, half_width: float = 10.0) -> list[np.ndarray]:
    axis = np.linspace(-half_width, half_width, per_axis)
    return [np.array(p) for p in product(axis, repeat=spec.n_pop)]


def relax(spec: ModelSpec, mu0: np.ndarray, t_end: float = 50.0, dt: float = 0.05) -> np.ndarray:
    """Mean after integrating the moment equations at stationary variance."""
    v = stationary_variance(spec)
    y0 = np.concatenate([np.asarray(mu0, dtype=float), v])
    n = int(round(t_end / dt))
    out = np.empty((2, y0.size))
    y = rk4_kernel(
        y0, spec.tau, spec.gain, spec.threshold, np.ascontiguousarray(spec.connectivity),
        spec.final_input, spec.final_noise**2, dt, n, n, out,
    )
    return y[: spec.n_pop]


def find_equilibria(
    spec: ModelSpec,
    seeds: Sequence[np.ndarray] | None = None,
    simulate: bool = True,
    point: dict[str, float] | None = None,
) -> list[EquilibriumRecord]:
    """Equilibria found by Newton's method from ``seeds``.

    Default seeds are a 5-per-axis lattice over ``[-10, 10]^P``; with
    ``simulate`` the endpoints of short integrations from those seeds are
    added.  Roots closer than 1e-7 are merged.
    """
    mf = MeanField(spec)
    base = list(default_seeds(spec)) if seeds is None else [np.atleast_1d(np.asarray(s, float)) for s in seeds]
    starts = list(base)
    if simulate:
        starts += [relax(spec, s) for s in base]
    found: list[np.ndarray] = []
    for s in starts:
        if s.shape != (spec.n_pop,):
            raise SpecError(f"seed {s} has wrong length for {spec.n_pop} populations")
        x, ok = newton(mf.rhs, mf.jac, s)
        if not ok:
            log.debug("Newton did not converge from seed %s", s)
            continue
        if all(np.max(np.abs(x - y)) > MERGE_DISTANCE for y in found):
            found.append(x)
    found.sort(key=lambda m: tuple(m))
    return [_record(spec, m, point) for m in found]


def pitchfork_threshold(J: float, lam: float, tau: float = 1.0) -> float | str:
    """Gain at which the null state of the symmetric one-population model destabilizes.

    Linearizing at ``mu = 0`` gives the eigenvalue ``-1/tau + J G / sqrt(2 pi)``
    with effective gain ``G = g / sqrt(1 + g^2 tau lambda^2 / 2)``.  Since
    ``G < sqrt(2 / (tau lambda^2))`` for every ``g``, strong noise removes the
    instability altogether.  Returns ``"none"`` in that case or when ``J <= 0``.
    """
    if J <= 0:
        return "none"
    c = math.sqrt(2.0 * math.pi) / (J * tau)
    d = 1.0 - c * c * tau * lam * lam / 2.0
    if d <= 0:
        return "none"
    return c / math.sqrt(d)


def hopf_threshold_2pop(J: float, lam: float) -> tuple[float, float] | str:
    """Gain and angular frequency of the Hopf point of the rotational two-population model.

    At ``mu = 0`` the Jacobian is ``-Id + (G J / sqrt(2 pi)) [[1, -1], [1, 1]]``
    with eigenvalues ``-1 + G J / sqrt(2 pi) (1 +- i)``, so the real part
    crosses zero at the pitchfork gain and the frequency there is 1.
    """
    g = pitchfork_threshold(J, lam)
    if g == "none":
        return "none"
    G = g / math.sqrt(1.0 + g * g * lam * lam / 2.0)
    return g, G * J * _INV_SQRT_2PI


def network_jacobian(spec: ModelSpec, n_total: int, V: np.ndarray | None = None) -> np.ndarray:
    """Jacobian of the deterministic ``N``-neuron network drift at voltages ``V``.

    Synaptic weights are ``J_ab / N_b``; neurons are ordered by population.
    """
    from .network import population_layout

    offsets, pop = population_layout(spec, n_total)
    sizes = np.diff(offsets)
    V = np.zeros(n_total) if V is None else np.asarray(V, dtype=float)
    W = spec.connectivity[np.ix_(pop, pop)] / sizes[pop][None, :]
    z = spec.gain[pop] * V + spec.threshold[pop]
    dS = spec.gain[pop] * np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    return W * dS[None, :] - np.diag(1.0 / spec.tau[pop])


# }}}


# {{{ pseudo-arclength curve tracing


class _System:
    """Defining system ``F(x) = 0`` with ``x = (mu, params)`` and one more unknown than equations."""

    def __init__(self, spec: ModelSpec, names: Sequence[str], extra: str | None = None):
        self.spec = spec
        self.names = list(names)
        self.floors = [_parameter_floor(n) for n in self.names]
        self.extra = extra
        self.P = spec.n_pop
        self._cache_key = None
        self._cache_val = None

    def field(self, p: np.ndarray) -> MeanField:
        key = tuple(p)
        if key != self._cache_key:
            s = self.spec
            for name, val in zip(self.names, p):
                if self.floors[self.names.index(name)] == 0.0:
                    # noise enters through lambda^2 only
                    val = abs(val)
                s = s.with_parameter(name, float(val))
            self._cache_key, self._cache_val = key, MeanField(s)
        return self._cache_val

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.P], x[self.P :]

    def extra_value(self, A: np.ndarray) -> float:
        if self.extra == "det":
            return float(np.linalg.det(A))
        if self.extra == "bialt":
            return bialternate_det(A)
        raise AssertionError(self.extra)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        mu, p = self.split(x)
        try:
            mf = self.field(p)
        except SpecError:
            return np.full(x.size - 1, np.nan)
        r = mf.rhs(mu)
        if self.extra is None:
            return r
        return np.append(r, self.extra_value(mf.jac(mu)))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        n = x.size
        m = n - 1
        D = np.empty((m, n))
        mu, p = self.split(x)
        if self.extra is None:
            D[:, : self.P] = self.field(p).jac(mu)
            cols = range(self.P, n)
        else:
            cols = range(n)
        for k in cols:
            h = 1e-6 * max(1.0, abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            if k >= self.P and x[k] - h <= self.floors[k - self.P]:
                D[:, k] = (self(xp) - self(x)) / h
                continue
            xm[k] -= h
            D[:, k] = (self(xp) - self(xm)) / (2 * h)
        return D


def _tangent(system: _System, x: np.ndarray, ref: np.ndarray | None) -> np.ndarray:
    D = system.jacobian(x)
    _, _, Vt = np.linalg.svd(D)
    t = Vt[-1]
    if ref is not None and np.dot(t, ref) < 0:
        t = -t
    return t


def _correct(system: _System, xp: np.ndarray, normal: np.ndarray, tol: float = 1e-11, max_iter: int = 12):
    """Newton on ``F(x) = 0`` restricted to the hyperplane through ``xp`` orthogonal to ``normal``."""
    x = xp.copy()
    for _ in range(max_iter):
        r = np.append(system(x), np.dot(normal, x - xp))
        if not np.all(np.isfinite(r)):
            return x, False
        if np.max(np.abs(r)) < tol:
            return x, True
        A = np.vstack([system.jacobian(x), normal])
        try:
            dx = np.linalg.solve(A, -r)
        except np.linalg.LinAlgError:
            return x, False
        x = x + dx
        if np.max(np.abs(dx)) < 1e-14 * (1 + np.max(np.abs(x))):
            r = system(x)
            return x, bool(np.max(np.abs(r)) < 1e-9)
    return x, False


@dataclass
class _Curve:
    xs: list[np.ndarray]
    ts: list[np.ndarray]
    truncated: bool = False
    closed: bool = False


def _trace(
    system: _System,
    x0: np.ndarray,
    t0: np.ndarray,
    h_max: float,
    lower: np.ndarray,
    upper: np.ndarray,
    max_steps: int = 20000,
    state_bound: float = 1e3,
) -> _Curve:
    """Follow the solution curve from ``x0`` along ``t0`` until it leaves the box."""
    P = system.P
    xs, ts = [x0.copy()], [t0.copy()]
    x, t, h = x0.copy(), t0.copy(), h_max
    curve = _Curve(xs, ts)
    for _ in range(max_steps):
        while True:
            xp = x + h * t
            xn, ok = _correct(system, xp, t)
            if ok and np.linalg.norm(xn - x) < 2.0 * h:
                tn = _tangent(system, xn, t)
                if np.dot(tn, t) > 0.5:
                    break
            h *= 0.5
            if h < 1e-10:
                curve.truncated = True
                return curve
        p = xn[P:]
        if np.any(p < lower) or np.any(p > upper) or np.max(np.abs(xn[:P])) > state_bound:
            xs.append(xn)
            ts.append(tn)
            return curve
        xs.append(xn)
        ts.append(tn)
        if len(xs) > 10 and np.linalg.norm(xn - x0) < 0.5 * h and np.dot(tn, t0) > 0.9:
            curve.closed = True
            return curve
        x, t = xn, tn
        h = min(h_max, h * 1.5)
    curve.truncated = True
    return curve


def _bisect(system: _System, xa: np.ndarray, xb: np.ndarray, test: Callable[[np.ndarray], float], iters: int = 60):
    """Locate a sign change of ``test`` between two nearby curve points."""
    d = xb - xa
    n = d / np.linalg.norm(d)
    fa = test(xa)
    lo, hi = 0.0, 1.0
    x_best = xa
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        xm, ok = _correct(system, xa + mid * d, n)
        if not ok:
            break
        x_best = xm
        fm = test(xm)
        if fm == 0.0:
            break
        if np.sign(fm) == np.sign(fa):
            lo, fa = mid, fm
        else:
            hi = mid
        if (hi - lo) * np.linalg.norm(d) < 1e-13:
            break
    return x_best


def _is_odd_symmetric(mf: MeanField, mu: np.ndarray) -> bool:
    """Whether the drift is odd about ``mu``: ``F(mu + d) = -F(mu - d)`` for finite ``d``."""
    rs = np.random.default_rng(12345)
    scale = 1.0 + np.max(np.abs(mf.J))
    for amp in (0.1, 0.7, 2.0):
        for _ in range(3):
            d = amp * rs.standard_normal(mf.P)
            if np.max(np.abs(mf.rhs(mu + d) + mf.rhs(mu - d))) > 1e-8 * scale:
                return False
    return True


def _parameter_floor(name: str) -> float:
    base = name.split("[")[0]
    if base in ("gain", "g", "tau"):
        return 1e-6
    if base in ("noise", "lambda", "lam"):
        return 0.0
    return -math.inf


def _same_point(a: BifurcationPoint, b: BifurcationPoint) -> bool:
    if a.kind != b.kind:
        return False
    pa = np.array(list(a.parameter_values.values()))
    pb = np.array(list(b.parameter_values.values()))
    return np.max(np.abs(pa - pb)) < 1e-6 and np.max(np.abs(a.state - b.state)) < 1e-5


def _dedupe(points: list[BifurcationPoint]) -> list[BifurcationPoint]:
    out: list[BifurcationPoint] = []
    for p in points:
        if not any(_same_point(p, q) for q in out):
            out.append(p)
    return out


# }}}


# {{{ one-parameter continuation


def _branch_points(system: _System, name: str, curve: _Curve) -> list[BifurcationPoint]:
    P = system.P
    xs = curve.xs
    pts: list[BifurcationPoint] = []

    def det_at(x):
        mu, p = system.split(x)
        return float(np.linalg.det(system.field(p).jac(mu)))

    def bialt_at(x):
        mu, p = system.split(x)
        return bialternate_det(system.field(p).jac(mu))

    dets = [det_at(x) for x in xs]
    bis = [bialt_at(x) for x in xs] if P >= 2 else None
    tp = [t[P] for t in curve.ts]
    for k in range(len(xs) - 1):
        xa, xb = xs[k], xs[k + 1]
        if np.sign(dets[k]) != np.sign(dets[k + 1]):
            x = _bisect(system, xa, xb, det_at)
            mu, p = system.split(x)
            mf = system.field(p)
            turning = np.sign(tp[k]) != np.sign(tp[k + 1])
            if _is_odd_symmetric(mf, mu):
                kind = "pitchfork"
            else:
                kind = "saddle_node" if turning else "branch_point"
            pts.append(BifurcationPoint(kind, {name: float(p[0])}, mu.copy(), {"det": det_at(x)}))
        if bis is not None and np.sign(bis[k]) != np.sign(bis[k + 1]):
            x = _bisect(system, xa, xb, bialt_at)
            mu, p = system.split(x)
            ev = np.linalg.eigvals(system.field(p).jac(mu))
            cx = ev[np.abs(ev.imag) > 1e-9]
            if cx.size:
                z = cx[np.argmin(np.abs(cx.real))]
                if abs(z.real) < 1e-6:
                    pts.append(
                        BifurcationPoint("hopf", {name: float(p[0])}, mu.copy(), {"frequency": float(abs(z.imag))})
                    )
    return pts


def _on_curve(system: _System, curve: _Curve, x: np.ndarray, tol: float = 1e-6) -> bool:
    """Whether ``x`` lies on ``curve``, testing at equal parameter value."""
    P = system.P
    p = x[P]
    for xa, xb in zip(curve.xs, curve.xs[1:]):
        if (xa[P] - p) * (xb[P] - p) > 0:
            continue
        w = 0.0 if xb[P] == xa[P] else (p - xa[P]) / (xb[P] - xa[P])
        guess = xa + w * (xb - xa)
        mf = system.field(np.array([p]))
        mu, ok = newton(mf.rhs, mf.jac, guess[:P])
        if ok and np.max(np.abs(mu - x[:P])) < tol:
            return True
    return False


def continue_equilibria(
    spec: ModelSpec,
    parameter: str,
    p_range: tuple[float, float],
    step: float = 0.02,
    max_steps: int = 20000,
    seeds: Sequence[np.ndarray] | None = None,
) -> ContinuationResult:
    """Follow every equilibrium branch across ``p_range`` and locate bifurcations.

    Branches start from the equilibria found at both ends of the range.
    Folds and branch points are sign changes of ``det(Jac)``, told apart by
    whether the branch turns back in the parameter; a branch point or fold
    where the drift is odd-symmetric is reported as a pitchfork.  Hopf points
    are sign changes of the bialternate product with a complex pair on the
    imaginary axis.
    """
    lo, hi = float(p_range[0]), float(p_range[1])
    lo = max(lo, _parameter_floor(parameter))
    if not hi > lo:
        raise SpecError("parameter range must have hi > lo")
    system = _System(spec, [parameter])
    P = spec.n_pop
    curves: list[_Curve] = []
    starts = []
    for p0, direction in ((lo, 1.0), (hi, -1.0)):
        s0 = spec.with_parameter(parameter, p0)
        for rec in find_equilibria(s0, seeds=seeds):
            starts.append((np.append(rec.mu_star, p0), direction))
    for x0, direction in starts:
        if any(_on_curve(system, c, x0) for c in curves):
            continue
        t0 = _tangent(system, x0, None)
        if t0[P] * direction < 0:
            t0 = -t0
        curves.append(_trace(system, x0, t0, step, np.array([lo]), np.array([hi]), max_steps))

    branches, allpts = [], []
    for c in curves:
        pts = _branch_points(system, parameter, c)
        X = np.array(c.xs)
        eig, stab = [], []
        for x in X:
            mu, p = system.split(x)
            ev = np.linalg.eigvals(system.field(p).jac(mu))
            eig.append(np.sort_complex(ev))
            stab.append(classify(ev)[0])
        inside = (X[:, P] >= lo) & (X[:, P] <= hi)
        pts = [q for q in pts if lo <= q.parameter_values[parameter] <= hi]
        branches.append(
            Branch(parameter, X[inside, P], X[inside, :P], [s for s, k in zip(stab, inside) if k],
                   np.array(eig)[inside], pts, c.truncated)
        )
        allpts += pts
    return ContinuationResult(parameter, branches, _dedupe(allpts))


def write_branch_csv(result: ContinuationResult, path: str | Path, meta: dict | None = None) -> Path:
    P = result.branches[0].states.shape[1] if result.branches else 1
    header = ["param"] + [f"mu_{a + 1}" for a in range(P)] + ["stability"]
    rows = []
    for br in result.branches:
        for p, mu, s in zip(br.params, br.states, br.stability):
            rows.append([p, *mu, s])
        rows.append([float("nan")] * (P + 1) + ["break"])
    return write_csv(path, header, rows, meta)


# }}}


# {{{ two-parameter loci and codimension-two points


def _fold_coefficient(mf: MeanField, mu: np.ndarray, w_ref: np.ndarray | None):
    """Quadratic normal-form coefficient ``w . D^2F(v, v)`` at a fold, with oriented null vectors."""
    A = mf.jac(mu)
    U, _, Vt = np.linalg.svd(A)
    v = Vt[-1]
    w = U[:, -1]
    if w_ref is not None and np.dot(w, w_ref) < 0:
        w = -w
    return float(np.dot(w, mf.curvature(mu, v))), w


def _trace_both_ways(system, x0, h, lower, upper, max_steps):
    t0 = _tangent(system, x0, None)
    fwd = _trace(system, x0, t0, h, lower, upper, max_steps)
    if fwd.closed:
        return fwd
    bwd = _trace(system, x0, -t0, h, lower, upper, max_steps)
    xs = list(reversed(bwd.xs))[:-1] + fwd.xs
    ts = [-t for t in reversed(bwd.ts)][:-1] + fwd.ts
    return _Curve(xs, ts, fwd.truncated or bwd.truncated, False)


def _near_curve(curve: _Curve, x: np.ndarray, tol: float) -> bool:
    X = np.array(curve.xs)
    return bool(np.min(np.linalg.norm(X - x, axis=1)) < tol)


@dataclass
class Codim2Result:
    points: list[BifurcationPoint]
    fold_curves: list[np.ndarray]
    hopf_curves: list[np.ndarray]

    def of_kind(self, kind: str) -> list[BifurcationPoint]:
        return [p for p in self.points if p.kind == kind]


def find_codim2(
    spec: ModelSpec,
    p1: str,
    p2: str,
    search_box: tuple[tuple[float, float], tuple[float, float]],
    n_scan: int = 12,
    step: float = 0.02,
    max_steps: int = 50000,
) -> Codim2Result:
    """Cusps, Bogdanov-Takens points and Hopf-locus turning points in the ``(p1, p2)`` plane.

    One-parameter scans in ``p1`` at ``n_scan`` levels of ``p2`` seed the fold
    and Hopf loci, which are then traced through the box.  On fold loci a cusp
    is a sign change of the quadratic normal-form coefficient and a BT point a
    zero of the bialternate product, polished by Newton on
    ``{F = 0, det = 0, bialt = 0}``.  On Hopf loci, where ``det > 0``, a turning
    point is a sign change of the ``p2`` component of the tangent.
    """
    if spec.n_pop < 2:
        raise SpecError("codimension-two analysis needs at least two populations")
    (a1, b1), (a2, b2) = search_box
    a1, a2 = max(a1, _parameter_floor(p1)), max(a2, _parameter_floor(p2))
    lower, upper = np.array([a1, a2]), np.array([b1, b2])
    P = spec.n_pop
    fold_seeds, hopf_seeds = [], []
    for lev in np.linspace(a2, b2, n_scan):
        res = continue_equilibria(spec.with_parameter(p2, lev), p1, (a1, b1), step=max(step, 0.05))
        for q in res.points:
            x = np.concatenate([q.state, [q.parameter_values[p1], lev]])
            (fold_seeds if q.kind == "saddle_node" else hopf_seeds if q.kind == "hopf" else []).append(x)

    names = [p1, p2]
    fold_sys = _System(spec, names, "det")
    hopf_sys = _System(spec, names, "bialt")
    folds: list[_Curve] = []
    hopfs: list[_Curve] = []
    for x0 in fold_seeds:
        if any(_near_curve(c, x0, 5 * step) for c in folds):
            continue
        folds.append(_trace_both_ways(fold_sys, x0, step, lower, upper, max_steps))
    for x0 in hopf_seeds:
        if any(_near_curve(c, x0, 5 * step) for c in hopfs):
            continue
        hopfs.append(_trace_both_ways(hopf_sys, x0, step, lower, upper, max_steps))

    points: list[BifurcationPoint] = []

    def pdict(x):
        return {p1: float(x[P]), p2: float(x[P + 1])}

    for c in folds:
        w_ref = None
        coef = []
        for x in c.xs:
            mu, p = fold_sys.split(x)
            a, w_ref = _fold_coefficient(fold_sys.field(p), mu, w_ref)
            coef.append(a)
        bis = [bialternate_det(fold_sys.field(x[P:]).jac(x[:P])) for x in c.xs]
        for k in range(len(c.xs) - 1):
            xa, xb = c.xs[k], c.xs[k + 1]
            if np.sign(coef[k]) != np.sign(coef[k + 1]):
                w0 = _fold_coefficient(fold_sys.field(xa[P:]), xa[:P], None)[1]

                def cusp_test(x, w0=w0):
                    return _fold_coefficient(fold_sys.field(x[P:]), x[:P], w0)[0]

                x = _bisect(fold_sys, xa, xb, cusp_test)
                points.append(BifurcationPoint("cusp", pdict(x), x[:P].copy(), {"coefficient": cusp_test(x)}))
            if np.sign(bis[k]) != np.sign(bis[k + 1]):
                x = _bisect(fold_sys, xa, xb, lambda y: bialternate_det(fold_sys.field(y[P:]).jac(y[:P])))
                x = _polish_bt(spec, names, x)
                A = fold_sys.field(x[P:]).jac(x[:P])
                points.append(
                    BifurcationPoint(
                        "bogdanov_takens", pdict(x), x[:P].copy(),
                        {"det": float(np.linalg.det(A)), "trace": float(np.trace(A))},
                    )
                )
    for c in hopfs:
        dets = [float(np.linalg.det(hopf_sys.field(x[P:]).jac(x[:P]))) for x in c.xs]
        for k in range(len(c.xs) - 1):
            ta, tb = c.ts[k][P + 1], c.ts[k + 1][P + 1]
            if np.sign(ta) != np.sign(tb) and dets[k] > 0 and dets[k + 1] > 0:
                def turn_test(x, ref=c.ts[k]):
                    return _tangent(hopf_sys, x, ref)[P + 1]

                x = _bisect(hopf_sys, c.xs[k], c.xs[k + 1], turn_test)
                A = hopf_sys.field(x[P:]).jac(x[:P])
                points.append(
                    BifurcationPoint(
                        "hopf_turning_point", pdict(x), x[:P].copy(),
                        {"frequency": float(math.sqrt(max(np.linalg.det(A), 0.0)))},
                    )
                )
    return Codim2Result(
        _dedupe(points),
        [np.array(c.xs) for c in folds],
        [np.array(c.xs) for c in hopfs],
    )


def _polish_bt(spec: ModelSpec, names: Sequence[str], x0: np.ndarray) -> np.ndarray:
    sys_d = _System(spec, names, "det")
    P = spec.n_pop

    def F(x):
        mf = sys_d.field(x[P:])
        A = mf.jac(x[:P])
        return np.concatenate([mf.rhs(x[:P]), [np.linalg.det(A), bialternate_det(A)]])

    def DF(x):
        n = x.size
        D = np.empty((n, n))
        for k in range(n):
            h = 1e-6 * max(1.0, abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            D[:, k] = (F(xp) - F(xm)) / (2 * h)
        return D

    x, ok = newton(F, DF, x0, tol=1e-10)
    return x if ok else x0


# }}}


# {{{ limit cycles


@dataclass
class CycleResult:
    """Outcome of :func:`characterize_cycle`.

    ``kind`` is ``"none"`` (settles to a fixed point), ``"cycle"`` or
    ``"unresolved"``.
    """

    kind: str
    amplitude: np.ndarray
    period: float | None = None
    jitter: float | None = None
    n_maxima: int = 0
    final_state: np.ndarray | None = None
    flags: tuple[str, ...] = ()
    orbit_min: np.ndarray | None = None
    orbit_max: np.ndarray | None = None


def _integrate_mean(spec: ModelSpec, mu0, v0, t_end: float, dt: float, every: int = 1) -> np.ndarray:
    y0 = np.concatenate([np.asarray(mu0, float), np.asarray(v0, float)])
    n = int(round(t_end / dt))
    out = np.empty((n // every + 1, y0.size))
    rk4_kernel(
        y0, spec.tau, spec.gain, spec.threshold, np.ascontiguousarray(spec.connectivity),
        spec.final_input, spec.final_noise**2, dt, n, every, out,
    )
    return out


def _maxima(x: np.ndarray, dt: float) -> np.ndarray:
    """Times of strict interior maxima, refined by parabolic interpolation."""
    k = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
    a, b, c = x[k - 1], x[k], x[k + 1]
    den = a - 2 * b + c
    off = np.where(den != 0, 0.5 * (a - c) / np.where(den != 0, den, 1.0), 0.0)
    return (k + off) * dt


def characterize_cycle(
    spec: ModelSpec,
    init,
    t_transient: float = 200.0,
    t_measure: float = 200.0,
    dt: float = 0.01,
    max_extensions: int = 3,
) -> CycleResult:
    """Classify the long-time behavior of the moment equations from ``init``.

    After the transient, a peak-to-peak amplitude below 1e-4 in every
    population means a fixed point.  Otherwise the period comes from
    successive maxima of the most active population and is accepted when
    the periods agree to 1%.  A decaying oscillation is integrated further
    and reported ``"unresolved"`` if it has not settled; so is an orbit with
    fewer than three maxima in the window, the signature of a period
    diverging near a homoclinic orbit.
    """
    v_star = stationary_variance(spec)
    if isinstance(init, MomentState):
        mu0, v0 = np.asarray(init.mean, float), np.asarray(init.variance, float)
    else:
        mu0, v0 = np.asarray(init, float), v_star
    P = spec.n_pop
    Y = _integrate_mean(spec, mu0, v0, t_transient, dt, every=max(1, int(round(t_transient / dt))))
    y = Y[-1]
    window = t_measure
    for attempt in range(max_extensions + 1):
        Y = _integrate_mean(spec, y[:P], y[P:], window, dt)
        mu = Y[:, :P]
        y = Y[-1]
        amp = mu.max(axis=0) - mu.min(axis=0)
        if np.all(amp < CYCLE_AMPLITUDE_FLOOR):
            return CycleResult("none", amp, final_state=y[:P].copy())
        a = int(np.argmax(amp))
        half = mu.shape[0] // 2
        amp1 = np.ptp(mu[:half, a])
        amp2 = np.ptp(mu[half:, a])
        tmax = _maxima(mu[:, a], dt)
        if tmax.size >= 3:
            periods = np.diff(tmax)
            period = float(periods.mean())
            jitter = float(periods.std() / period)
            if jitter < CYCLE_JITTER_BOUND and amp2 > 0.98 * amp1:
                return CycleResult(
                    "cycle", amp, period, jitter, int(tmax.size), y[:P].copy(),
                    orbit_min=mu.min(axis=0), orbit_max=mu.max(axis=0),
                )
        if amp2 < 0.98 * amp1:
            # still decaying; integrate on and look again
            window *= 2
            continue
        if tmax.size < 3:
            window *= 2
            continue
        break
    flags = ("long_period",) if tmax.size < 3 else ("irregular",)
    return CycleResult("unresolved", amp, None, None, int(tmax.size), y[:P].copy(), flags)


# }}}


# {{{ attractor census


LABELS = ("low_fp", "high_fp", "oscillation", "bistable_fp", "fp_plus_cycle", "other", "unresolved")


@dataclass
class CellAttractors:
    stable_fps: list[np.ndarray]
    cycles: list[CycleResult]
    unresolved: bool


def _same_cycle(a: CycleResult, b: CycleResult) -> bool:
    tol = 0.02 * np.max(b.amplitude) + 1e-3
    return (
        abs(a.period - b.period) < 0.02 * b.period
        and np.max(np.abs(a.orbit_min - b.orbit_min)) < tol
        and np.max(np.abs(a.orbit_max - b.orbit_max)) < tol
    )


def _default_init_set(spec: ModelSpec) -> list[np.ndarray]:
    axis = np.linspace(-6.0, 6.0, 4)
    return [np.array(p) for p in product(axis, repeat=spec.n_pop)]


def cell_attractors(
    spec: ModelSpec,
    init_set: Sequence[np.ndarray] | None = None,
    t_transient: float = 200.0,
    t_measure: float = 150.0,
) -> CellAttractors:
    """Stable equilibria and distinct limit cycles reached from ``init_set``."""
    stable = [r for r in find_equilibria(spec) if r.stability == "stable"]
    fps = [r.mu_star for r in stable]
    cycles: list[CycleResult] = []
    unresolved = False
    for x0 in init_set if init_set is not None else _default_init_set(spec):
        res = characterize_cycle(spec, np.asarray(x0, float), t_transient, t_measure)
        if res.kind == "none":
            continue
        if res.kind == "unresolved":
            unresolved = True
            continue
        if not any(_same_cycle(res, c) for c in cycles):
            cycles.append(res)
    return CellAttractors(fps, cycles, unresolved)


def attractor_label(spec: ModelSpec, cell: CellAttractors) -> str:
    """Zone label from the stable attractors of one cell.

    A single fixed point is ``high_fp`` when the population-averaged rate
    there exceeds 1/2.
    """
    n_fp, n_cyc = len(cell.stable_fps), len(cell.cycles)
    if cell.unresolved and n_cyc == 0:
        return "unresolved"
    if n_cyc == 0:
        if n_fp == 1:
            mf = MeanField(spec)
            rate = ndtr(mf.ge * cell.stable_fps[0] + mf.ce)
            return "high_fp" if float(np.dot(spec.fraction, rate)) > 0.5 else "low_fp"
        if n_fp == 2:
            return "bistable_fp"
        return "other" if n_fp > 2 else "unresolved"
    if n_cyc == 1:
        if n_fp == 0:
            return "oscillation"
        if n_fp == 1:
            return "fp_plus_cycle"
    return "other"


def _label_at(spec, names, values, init_set, t_transient, t_measure) -> str:
    s = spec
    for n, v in zip(names, values):
        s = s.with_parameter(n, float(v))
    return attractor_label(s, cell_attractors(s, init_set, t_transient, t_measure))


def attractor_census(
    spec: ModelSpec,
    p1: str,
    values1: Sequence[float],
    p2: str | None = None,
    values2: Sequence[float] | None = None,
    init_set: Sequence[np.ndarray] | None = None,
    refine: bool = True,
    t_transient: float = 200.0,
    t_measure: float = 150.0,
) -> SweepResult:
    """Label every grid cell by its set of stable attractors.

    Neighbouring cells with different labels are bisected twice along their
    shared axis, locating each transition to a quarter of the grid spacing.
    """
    v1 = np.asarray(values1, dtype=float)
    names = [p1] + ([p2] if p2 is not None else [])
    v2 = np.asarray(values2, dtype=float) if p2 is not None else np.array([np.nan])
    labels = np.empty((v1.size, v2.size), dtype=object)
    for i, a in enumerate(v1):
        for j, b in enumerate(v2):
            vals = [a] if p2 is None else [a, b]
            labels[i, j] = _label_at(spec, names, vals, init_set, t_transient, t_measure)
    boundaries = []
    if refine:
        for axis in range(len(names)):
            for i, j in product(range(v1.size), range(v2.size)):
                ni, nj = (i + 1, j) if axis == 0 else (i, j + 1)
                if ni >= v1.size or nj >= v2.size or labels[i, j] == labels[ni, nj]:
                    continue
                lo = np.array([v1[i], v2[j]])
                hi = np.array([v1[ni], v2[nj]])
                lab_lo, lab_hi = labels[i, j], labels[ni, nj]
                for _ in range(2):
                    mid = 0.5 * (lo + hi)
                    lab = _label_at(spec, names, mid[: len(names)], init_set, t_transient, t_measure)
                    if lab == lab_lo:
                        lo = mid
                    elif lab == lab_hi:
                        hi = mid
                    else:
                        break
                loc = 0.5 * (lo + hi)
                boundaries.append(
                    {
                        "axis": names[axis],
                        "location": {n: float(loc[k]) for k, n in enumerate(names)},
                        "half_width": float(np.max(np.abs(hi - lo)) / 2),
                        "from": lab_lo,
                        "to": lab_hi,
                    }
                )
    axes = [{"name": p1, "values": v1.tolist()}]
    if p2 is not None:
        axes.append({"name": p2, "values": v2.tolist()})
    meta = {
        "cycle_amplitude_floor": CYCLE_AMPLITUDE_FLOOR,
        "cycle_jitter_bound": CYCLE_JITTER_BOUND,
        "t_transient": t_transient,
        "t_measure": t_measure,
    }
    return SweepResult(axes, labels, boundaries, [], meta)


# }}}


# {{{ homoclinic onset estimates


def _cycle_family_connected(
    spec: ModelSpec, p1: str, lo: float, hi: float, n: int, dt: float = 0.01
) -> tuple[bool, float]:
    """Follow the cycle born at the Hopf point ``lo`` toward ``hi`` by warm-started simulation.

    Returns whether a cycle persists at every intermediate value, and the
    largest period seen.
    """
    values = np.linspace(lo, hi, n + 2)[1:-1]
    state = None
    max_period = 0.0
    for val in values:
        s = spec.with_parameter(p1, float(val))
        if state is None:
            fps = find_equilibria(s)
            eq = [r for r in fps if "near_hopf" in r.classification_flags or r.stability == "unstable"]
            base = eq[0].mu_star if eq else fps[0].mu_star
            state = base + 0.05
        res = characterize_cycle(s, state, t_transient=150.0, t_measure=200.0, dt=dt)
        # a slowly converging small cycle near a Hopf point is not a break;
        # landing on a fixed point or a diverging period is
        if res.kind == "none":
            return False, max_period
        if "long_period" in res.flags:
            return False, math.inf
        if res.period is not None:
            max_period = max(max_period, res.period)
        state = res.final_state
    return True, max_period


def homoclinic_onset(
    spec: ModelSpec,
    parameter: str,
    lo: float,
    hi: float,
    init: np.ndarray,
    tol: float = 0.005,
    period_cap: float = 300.0,
) -> BifurcationPoint:
    """Parameter value where a limit cycle appears with diverging period.

    ``lo`` must have no cycle and ``hi`` a cycle reachable from ``init``;
    bisection on cycle existence then brackets the homoclinic orbit.
    """
    def has_cycle(val):
        s = spec.with_parameter(parameter, val)
        res = characterize_cycle(s, init, t_transient=300.0, t_measure=400.0)
        return res.kind == "cycle" and res.period < period_cap, res

    ok_hi, res_hi = has_cycle(hi)
    if not ok_hi:
        raise SpecError(f"no cycle at {parameter}={hi} from the given initial condition")
    if has_cycle(lo)[0]:
        raise SpecError(f"already a cycle at {parameter}={lo}")
    period = res_hi.period
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, res = has_cycle(mid)
        if ok:
            hi, period = mid, res.period
        else:
            lo = mid
    return BifurcationPoint(
        "homoclinic_estimate", {parameter: 0.5 * (lo + hi)}, np.asarray(init, float),
        {"period_at_upper": period, "bracket": [lo, hi]}, HOMOCLINIC_TOLERANCE,
    )


def homoclinic_turning_estimate(
    spec: ModelSpec,
    p1: str,
    p2: str,
    p2_lo: float,
    p2_hi: float,
    p1_range: tuple[float, float],
    tol: float = 0.002,
    n_follow: int = 24,
) -> BifurcationPoint:
    """Turning point of the homoclinic locus between the BT point and the Hopf turning point.

    For ``p2`` in this band a one-parameter scan in ``p1`` has two Hopf
    points.  Below the homoclinic turning point their cycle families end on
    homoclinic orbits; above it they join into one family.  Bisection on
    ``p2`` locates the switch, detected by following the cycle from one Hopf
    point to the other.
    """
    def connected(level):
        s = spec.with_parameter(p2, level)
        res = continue_equilibria(s, p1, p1_range, step=0.05)
        hopfs = sorted(q.parameter_values[p1] for q in res.points if q.kind == "hopf")
        if len(hopfs) < 2:
            return True
        eps = 0.02 * (hopfs[1] - hopfs[0])
        ok, _ = _cycle_family_connected(s, p1, hopfs[0] + eps, hopfs[1] - eps, n_follow)
        return ok

    lo, hi = p2_lo, p2_hi
    if connected(lo) or not connected(hi):
        log.info("homoclinic turning bracket [%s, %s] is not a sign change", lo, hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if connected(mid):
            hi = mid
        else:
            lo = mid
    return BifurcationPoint(
        "homoclinic_estimate", {p2: 0.5 * (lo + hi)}, np.array([]),
        {"meaning": "turning point of the homoclinic locus", "bracket": [lo, hi]}, HOMOCLINIC_TOLERANCE,
    )


# }}}


# {{{ phase portrait


@dataclass
class PhasePortrait:
    box: tuple[tuple[float, float], tuple[float, float]]
    nullclines: list[list[np.ndarray]]
    equilibria: list[EquilibriumRecord]
    manifolds: list[dict]


def _flow(spec: ModelSpec, x0: np.ndarray, t_end: float, box, backward: bool) -> np.ndarray:
    from scipy.integrate import solve_ivp

    mf = MeanField(spec)
    sign = -1.0 if backward else 1.0
    (x0lo, x0hi), (x1lo, x1hi) = box
    wx, wy = x0hi - x0lo, x1hi - x1lo

    def leave(t, y):
        return min(y[0] - (x0lo - wx), (x0hi + wx) - y[0], y[1] - (x1lo - wy), (x1hi + wy) - y[1])

    leave.terminal = True
    sol = solve_ivp(lambda t, y: sign * mf.rhs(y), (0, t_end), x0, events=leave,
                    rtol=1e-9, atol=1e-11, max_step=0.05)
    return sol.y.T


def phase_portrait(
    spec: ModelSpec,
    box: tuple[tuple[float, float], tuple[float, float]],
    resolution: int = 200,
    eps: float = 1e-4,
    t_end: float = 100.0,
) -> PhasePortrait:
    """Nullclines, equilibria and saddle manifolds of a two-population model."""
    import contourpy

    if spec.n_pop != 2:
        raise SpecError("phase portraits need exactly two populations")
    mf = MeanField(spec)
    (a, b), (c, d) = box
    xs = np.linspace(a, b, resolution)
    ys = np.linspace(c, d, resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    F = np.array([mf.rhs(p) for p in pts]).reshape(resolution, resolution, 2)
    nullclines = []
    for k in range(2):
        gen = contourpy.contour_generator(X, Y, F[:, :, k])
        nullclines.append([np.asarray(line) for line in gen.lines(0.0)])
    seeds = [np.array(p) for p in product(np.linspace(a, b, 7), np.linspace(c, d, 7))]
    eqs = [r for r in find_equilibria(spec, seeds=seeds) if a <= r.mu_star[0] <= b and c <= r.mu_star[1] <= d]
    manifolds = []
    for r in eqs:
        if r.stability != "saddle":
            continue
        ev, vec = np.linalg.eig(r.jacobian)
        for k in range(2):
            kind = "unstable" if ev[k].real > 0 else "stable"
            u = vec[:, k].real
            for sgn in (1.0, -1.0):
                path = _flow(spec, r.mu_star + sgn * eps * u, t_end, box, backward=(kind == "stable"))
                manifolds.append({"saddle": r.mu_star.tolist(), "kind": kind, "path": path})
    return PhasePortrait(box, nullclines, eqs, manifolds)


# }}}
