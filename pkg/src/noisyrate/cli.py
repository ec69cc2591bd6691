"""Command-line front end.

Every subcommand reads a JSON recipe (see :mod:`noisyrate.recipe`), applies
``--override`` assignments and explicit flags on top of it, runs, and writes
into ``--out``: CSV/JSON data with metadata headers, a gnuplot script per
plot, and ``manifest.json`` echoing the resolved recipe, seed, outputs,
timings and any failed steps.

Exit status: 0 when every requested analysis completed, 1 when some failed
(listed on stderr), 2 for an invalid configuration, 3 when a run was refused
by the memory cap.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, IntegrationDivergedError, IntegrationError, MemoryBudgetError, SpecError
from .io import atomic_write_text, fmt, write_csv, write_json
from .model import MomentState, ModelSpec
from .recipe import ExperimentRecipe, axis_values

log = logging.getLogger("noisyrate")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_MEMORY = 0, 1, 2, 3


class Context:
    """Per-invocation state: the resolved recipe, output directory and bookkeeping."""

    def __init__(self, command: str, recipe: ExperimentRecipe, out: Path, argv: list[str]):
        self.command = command
        self.recipe = recipe
        self.out = out
        self.argv = argv
        self.outputs: list[str] = []
        self.failures: list[dict] = []
        self.timings: dict[str, float] = {}
        self.extra: dict = {}

    @property
    def seed(self) -> int:
        return int(self.recipe.block("simulation").get("seed", 0))

    def meta(self, **more) -> dict:
        m = {"command": self.command, "recipe": self.recipe.name, "seed": self.seed,
             "parameters": self.recipe.resolved()}
        m.update(more)
        return m

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, path: Path) -> None:
        self.outputs.append(str(Path(path).relative_to(self.out)))

    def step(self, name: str, fn, *args, **kw):
        """Run one analysis step, recording a failure instead of aborting."""
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except MemoryBudgetError:
            raise
        except (SpecError, DomainError, IntegrationError, IntegrationDivergedError, ValueError, RuntimeError) as exc:
            self.failures.append({"step": name, "error": f"{type(exc).__name__}: {exc}"})
            log.error("step %s failed: %s", name, exc)
            return None
        finally:
            self.timings[name] = time.perf_counter() - t0

    def manifest(self, wall: float) -> Path:
        doc = {
            "tool": f"noisyrate {__version__}",
            "command": self.command,
            "argv": self.argv,
            "recipe": self.recipe.resolved(),
            "seed": self.seed,
            "wall_time": wall,
            "step_times": self.timings,
            "outputs": sorted(self.outputs),
            "failures": self.failures,
            **self.extra,
        }
        return write_json(self.path("manifest.json"), doc)


# {{{ gnuplot


def gnuplot_script(path: Path, title: str, xlabel: str, ylabel: str, plots: list[str], extra: str = "") -> Path:
    """A gnuplot script that renders ``plots`` (``plot`` clauses) into a PNG next to it."""
    png = path.with_suffix(".png").name
    text = (
        f"# generated by noisyrate {__version__}\n"
        "set datafile separator ','\n"
        "set datafile commentschars '#'\n"
        "set key autotitle columnhead\n"
        f"set terminal pngcairo size 900,600\nset output '{png}'\n"
        f"set title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
        f"{extra}"
        "plot " + ", \\\n     ".join(plots) + "\n"
    )
    return atomic_write_text(path, text)


def _pop_filter(col: int, a: int) -> str:
    return f"(column(2)=={a} ? column({col}) : 1/0)"


# }}}


# {{{ helpers


def _scan_specs(recipe: ExperimentRecipe, spec: ModelSpec) -> list[tuple[str, ModelSpec, dict]]:
    """The base model, or one variant per value of ``scan.parameter``."""
    scan = recipe.block("scan")
    if not scan:
        return [("", spec, {})]
    name = scan.get("parameter")
    if not name:
        raise SpecError("scan.parameter is required")
    out = []
    for val in axis_values(scan):
        out.append((f"_{name}{float(val):g}", spec.with_parameter(name, float(val)), {name: float(val)}))
    return out


def _initial_state(recipe: ExperimentRecipe, spec: ModelSpec):
    from .network import InitialLaw

    law = recipe.initial_law(spec.n_pop)
    return law, MomentState(0.0, law.mean.copy(), law.variance.copy())


def _write_final_state(run, path: Path, meta: dict) -> Path:
    V = run.final.voltages.reshape(-1, run.sim.n_total)
    pop = run.population_of
    rows = ((r, i, int(pop[i]), V[r, i]) for r in range(V.shape[0]) for i in range(V.shape[1]))
    return write_csv(path, ["realization", "neuron", "population", "V"], rows, meta)


# }}}


# {{{ simulate-net


def cmd_simulate_net(ctx: Context) -> None:
    from .meanfield import integrate, write_moment_csv
    from .network import run_ensemble, write_stats_csv, write_trajectory_csv

    r = ctx.recipe
    base = r.model()
    sim = r.sim_config()
    law, m0 = _initial_state(r, base)
    with_mf = bool(r.doc.get("ode"))
    throughputs = []
    for suffix, spec, point in _scan_specs(r, base):
        meta = ctx.meta(scan_point=point, initial=law.to_dict(), simulation=sim.to_dict())
        run = ctx.step(f"network{suffix}", run_ensemble, spec, sim, law)
        if run is None:
            continue
        throughputs.append({"point": point, "wall_time": run.wall_time, "neuron_steps_per_s": run.throughput()})
        if sim.record_mode == "population_stats":
            p = write_stats_csv(run, ctx.path(f"stats{suffix}.csv"), meta)
        elif sim.record_mode == "full_trajectories":
            p = write_trajectory_csv(run, ctx.path(f"trajectories{suffix}.csv"), meta)
        else:
            p = _write_final_state(run, ctx.path(f"final{suffix}.csv"), meta)
        ctx.wrote(p)
        plots = []
        if sim.record_mode == "population_stats":
            plots = [f"'{p.name}' using 1:{_pop_filter(3, a)} with lines title 'network pop {a + 1}'"
                     for a in range(spec.n_pop)]
        if with_mf:
            cfg = r.ode_config(default_t_end=sim.t_end)
            traj = ctx.step(f"meanfield{suffix}", integrate, spec, m0, cfg)
            if traj is not None:
                q = write_moment_csv(traj, ctx.path(f"moments{suffix}.csv"), meta)
                ctx.wrote(q)
                plots += [f"'{q.name}' using 1:{_pop_filter(3, a)} with lines dt 2 title 'mean field pop {a + 1}'"
                          for a in range(spec.n_pop)]
        if plots:
            ctx.wrote(gnuplot_script(ctx.path(f"mean{suffix}.gp"), f"population means {point or ''}", "t", "mean V", plots))
    ctx.extra["throughput"] = throughputs


# }}}


# {{{ simulate-mf


def cmd_simulate_mf(ctx: Context) -> None:
    from .meanfield import integrate, write_moment_csv

    r = ctx.recipe
    base = r.model()
    cfg = r.ode_config(default_t_end=r.block("simulation").get("t_end"))
    law, m0 = _initial_state(r, base)
    for suffix, spec, point in _scan_specs(r, base):
        traj = ctx.step(f"meanfield{suffix}", integrate, spec, m0, cfg)
        if traj is None:
            continue
        meta = ctx.meta(scan_point=point, initial=law.to_dict(), ode=cfg.to_dict())
        q = write_moment_csv(traj, ctx.path(f"moments{suffix}.csv"), meta)
        ctx.wrote(q)
        ctx.wrote(gnuplot_script(
            ctx.path(f"moments{suffix}.gp"), f"mean-field moments {point or ''}", "t", "",
            [f"'{q.name}' using 1:{_pop_filter(c, a)} with lines title '{nm} pop {a + 1}'"
             for a in range(spec.n_pop) for c, nm in ((3, "mu"), (4, "v"))],
        ))


# }}}


# {{{ sweep

_LABEL_CODES = ("low_fp", "high_fp", "bistable_fp", "oscillation", "fp_plus_cycle", "unresolved")


def _label_palette() -> str:
    cases = " : ".join(f'(strcol(3) eq "{lab}") ? {k}' for k, lab in enumerate(_LABEL_CODES))
    return f"code(x) = {cases} : {len(_LABEL_CODES)}\n"


def _sweep_census(ctx: Context, spec: ModelSpec, cfg: dict, points: list) -> None:
    from .bifurcation import attractor_census

    p1 = cfg["p1"]
    p2 = cfg.get("p2")
    init_set = cfg.get("init_set")
    res = attractor_census(
        spec, p1["name"], axis_values(p1),
        p2["name"] if p2 else None, axis_values(p2) if p2 else None,
        init_set=[np.asarray(x, float) for x in init_set] if init_set else None,
        refine=cfg.get("refine", True),
        t_transient=cfg.get("t_transient", 200.0), t_measure=cfg.get("t_measure", 150.0),
    )
    res.points = list(points)
    meta = ctx.meta()
    res.write(ctx.path("census.csv"), ctx.path("census.json"), meta)
    ctx.wrote(ctx.path("census.csv"))
    ctx.wrote(ctx.path("census.json"))
    if p2:
        plot = ["'census.csv' using 1:2:(code(0)) with image title 'attractor zones'"]
        if points:
            rows = [(p.kind, p.parameter_values[p1["name"]], p.parameter_values[p2["name"]]) for p in points
                    if p1["name"] in p.parameter_values and p2["name"] in p.parameter_values]
            q = write_csv(ctx.path("codim2_points.csv"), ["kind", "p1", "p2"], rows, meta)
            ctx.wrote(q)
            plot.append("'codim2_points.csv' using 2:3:1 with labels point pt 7 offset 1,1 notitle")
        ylabel = p2["name"]
    else:
        plot = ["'census.csv' using 1:(code(0)) with steps title 'attractor zone code'"]
        ylabel = "zone code " + ", ".join(f"{k}={lab}" for k, lab in enumerate(_LABEL_CODES))
    ctx.wrote(gnuplot_script(ctx.path("census.gp"), f"attractor census ({ctx.recipe.name})", p1["name"], ylabel,
                             plot, _label_palette()))


def _sweep_continuation(ctx: Context, spec: ModelSpec, cfg: dict) -> None:
    from .bifurcation import continue_equilibria, write_branch_csv

    name = cfg["parameter"]
    res = continue_equilibria(spec, name, tuple(cfg["range"]), step=cfg.get("step", 0.02))
    meta = ctx.meta()
    p = write_branch_csv(res, ctx.path(f"branch_{name}.csv"), meta)
    ctx.wrote(p)
    ctx.wrote(write_json(ctx.path(f"branch_{name}_points.json"), {"points": [q.to_dict() for q in res.points]}, meta))
    plots = [f"'{p.name}' using 1:(strcol({2 + spec.n_pop}) eq 'stable' ? column({2 + a}) : 1/0) with points pt 7 ps 0.3 title 'mu{a + 1} stable'"
             for a in range(spec.n_pop)]
    plots += [f"'{p.name}' using 1:(strcol({2 + spec.n_pop}) ne 'stable' ? column({2 + a}) : 1/0) with points pt 6 ps 0.3 title 'mu{a + 1} unstable'"
              for a in range(spec.n_pop)]
    ctx.wrote(gnuplot_script(ctx.path(f"branch_{name}.gp"), f"equilibria vs {name}", name, "mu*", plots))


def _sweep_codim2(ctx: Context, spec: ModelSpec, cfg: dict) -> list:
    from .bifurcation import find_codim2, homoclinic_turning_estimate

    p1, p2 = cfg["p1"], cfg["p2"]
    box = tuple(tuple(b) for b in cfg["box"])
    res = find_codim2(spec, p1, p2, box, n_scan=cfg.get("n_scan", 12), step=cfg.get("step", 0.02))
    points = list(res.points)
    hom = cfg.get("homoclinic_turning")
    if hom:
        est = ctx.step("homoclinic_turning", homoclinic_turning_estimate, spec, p1, p2,
                       hom["p2_range"][0], hom["p2_range"][1], tuple(box[0]))
        if est is not None:
            points.append(est)
    meta = ctx.meta()
    ctx.wrote(write_json(ctx.path("codim2.json"), {"points": [q.to_dict() for q in points]}, meta))
    for kind, curves in (("fold", res.fold_curves), ("hopf", res.hopf_curves)):
        rows = ((c, x[-2], x[-1]) for c, cur in enumerate(curves) for x in cur)
        ctx.wrote(write_csv(ctx.path(f"{kind}_curves.csv"), ["curve", p1, p2], rows, meta))
    ctx.wrote(gnuplot_script(
        ctx.path("codim2.gp"), "fold and Hopf loci", p1, p2,
        ["'fold_curves.csv' using 2:3 with points pt 7 ps 0.2 title 'saddle-node'",
         "'hopf_curves.csv' using 2:3 with points pt 7 ps 0.2 title 'Hopf'"],
    ))
    return points


def _sweep_homoclinic(ctx: Context, spec: ModelSpec, cfg: dict) -> None:
    from .bifurcation import homoclinic_onset

    init = cfg.get("init")
    if init is None:
        init = ctx.recipe.initial_law(spec.n_pop).mean
    pt = homoclinic_onset(spec, cfg["parameter"], cfg["lo"], cfg["hi"], np.asarray(init, float),
                          tol=cfg.get("tol", 0.005))
    ctx.wrote(write_json(ctx.path("homoclinic_onset.json"), pt.to_dict(), ctx.meta()))


def cmd_sweep(ctx: Context) -> None:
    spec = ctx.recipe.model()
    cfg = ctx.recipe.block("sweep")
    known = {"census", "continuation", "codim2", "homoclinic"}
    if not cfg or not set(cfg) & known:
        raise SpecError(f"sweep block needs at least one of {sorted(known)}")
    if set(cfg) - known:
        raise SpecError(f"unknown sweep analyses: {sorted(set(cfg) - known)}")
    conts = cfg.get("continuation", [])
    for c in conts if isinstance(conts, list) else [conts]:
        ctx.step(f"continuation_{c.get('parameter')}", _sweep_continuation, ctx, spec, c)
    points = []
    if "codim2" in cfg:
        points = ctx.step("codim2", _sweep_codim2, ctx, spec, cfg["codim2"]) or []
    if "homoclinic" in cfg:
        ctx.step("homoclinic_onset", _sweep_homoclinic, ctx, spec, cfg["homoclinic"])
    if "census" in cfg:
        ctx.step("census", _sweep_census, ctx, spec, cfg["census"], points)


# }}}


# {{{ converge


def cmd_converge(ctx: Context) -> None:
    from .network import SimConfig, run_coupled
    from .stats import convergence_rate

    r = ctx.recipe
    spec = r.model()
    base = r.sim_config()
    law, _ = _initial_state(r, spec)
    n_list = r.block("converge").get("n_list")
    if not n_list:
        raise SpecError("converge.n_list must list at least one network size")
    rows = []
    for n in n_list:
        sim = SimConfig(**{**base.to_dict(), "n_total": int(n), "record_mode": "final_state"})
        run = ctx.step(f"coupled_N{n}", run_coupled, spec, sim, law)
        if run is None:
            continue
        sup = run.sup_discrepancy
        err = float(sup.std(ddof=1) / math.sqrt(sup.size)) if sup.size > 1 else float("nan")
        rows.append((int(n), run.mean_sup, err, run.wall_time))
    meta = ctx.meta()
    p = write_csv(ctx.path("convergence.csv"), ["N", "mean_sup", "stderr", "wall_time"], rows, meta)
    ctx.wrote(p)
    report = {"rows": [dict(zip(("N", "mean_sup", "stderr", "wall_time"), x)) for x in rows]}
    if len({x[0] for x in rows}) >= 3:
        fit = convergence_rate([(x[0], x[1]) for x in rows])
        report["fit"] = fit.to_dict()
    ctx.wrote(write_json(ctx.path("convergence.json"), report, meta))
    ctx.wrote(gnuplot_script(
        ctx.path("convergence.gp"), "coupling discrepancy", "N", "E sup |V - Vbar|",
        ["'convergence.csv' using 1:2:3 with yerrorlines title 'network vs mean field'"],
        "set logscale xy\n",
    ))


# }}}


# {{{ spectrum


def _signal_spectrum(x: np.ndarray, dt: float, window: str, min_bin: int, threshold: float) -> dict:
    from .stats import power_spectrum

    s = power_spectrum(x, dt, window)
    k, f = s.peak()
    return {"spectrum": s, "peak_index": k, "peak_freq": f, "coherence": s.coherence(),
            "resonance": s.has_resonance(min_bin, threshold), "std": float(np.std(x))}


def spectrum_point(spec: ModelSpec, sim, law, cfg: dict) -> dict:
    """Network and mean-field spectra of one population's mean activity at one parameter value.

    The mean field is stepped with the Euler recursion at the network's own
    time step (``spectrum.mf_method``), so both sides carry the same
    discretization bias in frequency.
    """
    from .bifurcation import CYCLE_AMPLITUDE_FLOOR
    from .meanfield import OdeConfig, integrate
    from .network import empirical_stats, run_ensemble

    a = int(cfg.get("population", 0))
    t_discard = float(cfg.get("t_discard", 50.0))
    window = cfg.get("window", "hann")
    min_bin = int(cfg.get("min_bin", 3))
    threshold = float(cfg.get("coherence_threshold", 0.8))
    run = run_ensemble(spec, sim, law)
    st = empirical_stats(run, pool=False)
    keep = run.times >= t_discard - 1e-9
    ts = run.times[keep]
    dts = sim.dt * sim.record_every
    net = _signal_spectrum(st.mean[keep, 0, a], dts, window, min_bin, threshold)
    traj = integrate(spec, MomentState(0.0, law.mean, law.variance),
                     OdeConfig(t_end=sim.t_end, method=cfg.get("mf_method", "euler_fixed"), dt=sim.dt))
    idx = np.rint(ts / sim.dt).astype(int)
    y = traj.mean[idx, a]
    mf = _signal_spectrum(y, dts, window, min_bin, threshold)
    # a deterministic trace oscillates if its swing persists across the window
    half = y.size // 2
    early, late = np.ptp(y[:half]), np.ptp(y[half:])
    net["oscillating"] = bool(net["resonance"])
    mf["oscillating"] = bool(late > CYCLE_AMPLITUDE_FLOOR and late > 0.9 * early and mf["peak_index"] >= min_bin)
    return {"network": net, "meanfield": mf, "wall_time": run.wall_time, "bin_width": net["spectrum"].bin_width}


def cmd_spectrum(ctx: Context) -> None:
    from .network import SimConfig
    from .stats import write_spectrum_csv

    r = ctx.recipe
    base = r.model()
    cfg = r.block("spectrum")
    lambdas = cfg.get("lambdas")
    if not lambdas:
        raise SpecError("spectrum.lambdas must list at least one value")
    name = cfg.get("parameter", "noise")
    sim0 = r.sim_config()
    sim = SimConfig(**{**sim0.to_dict(), "n_realizations": 1, "record_mode": "population_stats"})
    law, _ = _initial_state(r, base)
    rows = []
    for lam in lambdas:
        spec = base.with_parameter(name, float(lam))
        tag = f"_{name}{float(lam):g}"
        res = ctx.step(f"spectrum{tag}", spectrum_point, spec, sim, law, cfg)
        if res is None:
            continue
        meta = ctx.meta(scan_point={name: float(lam)})
        for side in ("network", "meanfield"):
            p = write_spectrum_csv(res[side]["spectrum"], ctx.path(f"spectrum_{side}{tag}.csv"), meta)
            ctx.wrote(p)
        n, m = res["network"], res["meanfield"]
        rows.append((float(lam), n["peak_freq"], int(n["oscillating"]), n["coherence"], n["std"],
                     m["peak_freq"], int(m["oscillating"]), abs(n["peak_index"] - m["peak_index"]), res["bin_width"]))
        ctx.wrote(gnuplot_script(
            ctx.path(f"spectrum{tag}.gp"), f"{name} = {fmt(lam)}", "frequency", "power",
            [f"'spectrum_network{tag}.csv' using 1:2 with lines title 'network'",
             f"'spectrum_meanfield{tag}.csv' using 1:2 with lines dt 2 title 'mean field'"],
            "set logscale y\nset xrange [0:2]\n",
        ))
    header = [name, "net_peak_freq", "net_oscillating", "net_coherence", "net_std",
              "mf_peak_freq", "mf_oscillating", "peak_bin_gap", "bin_width"]
    p = write_csv(ctx.path("spectrum_summary.csv"), header, rows, ctx.meta())
    ctx.wrote(p)
    ctx.wrote(gnuplot_script(
        ctx.path("spectrum_summary.gp"), "dominant frequency", name, "frequency",
        ["'spectrum_summary.csv' using 1:(column(3) ? column(2) : 1/0) with points pt 7 title 'network'",
         "'spectrum_summary.csv' using 1:(column(7) ? column(6) : 1/0) with points pt 6 ps 2 title 'mean field'"],
    ))


# }}}


# {{{ validate


def cmd_validate(ctx: Context) -> None:
    from .meanfield import OdeConfig, gaussian_law_at, integrate
    from .network import SimConfig, run_ensemble
    from .stats import independence_test, ks_gaussian_test

    r = ctx.recipe
    spec = r.model()
    cfg = r.block("validate")
    alpha = float(cfg.get("alpha", 0.05))
    sim0 = r.sim_config()
    law, m0 = _initial_state(r, spec)
    meta = ctx.meta()

    # Gaussianity of one network realization at the final time
    sim = SimConfig(**{**sim0.to_dict(), "n_realizations": 1, "record_mode": "final_state"})
    run = run_ensemble(spec, sim, law)
    traj = integrate(spec, m0, OdeConfig(t_end=sim.t_end, dt=sim.dt))
    mu, v = gaussian_law_at(traj, sim.t_end)
    V = run.final.voltages.reshape(-1)
    bins = int(cfg.get("histogram_bins", 40))
    for a in range(spec.n_pop):
        x = V[run.offsets[a] : run.offsets[a + 1]]
        rep = ctx.step(f"ks_pop{a + 1}", ks_gaussian_test, x, float(mu[a]), float(v[a]), alpha)
        if rep is None:
            continue
        ctx.wrote(rep.write(ctx.path(f"ks_pop{a + 1}.json"), {**meta, "mf_mean": mu[a], "mf_variance": v[a]}))
        dens, edges = np.histogram(x, bins=bins, density=True)
        c = 0.5 * (edges[1:] + edges[:-1])
        g = np.exp(-((c - mu[a]) ** 2) / (2 * v[a])) / math.sqrt(2 * math.pi * v[a])
        q = write_csv(ctx.path(f"histogram_pop{a + 1}.csv"), ["V", "density", "gaussian"], zip(c, dens, g), meta)
        ctx.wrote(q)
        ctx.wrote(gnuplot_script(
            ctx.path(f"histogram_pop{a + 1}.gp"), f"population {a + 1} at t = {fmt(sim.t_end)}", "V", "density",
            [f"'{q.name}' using 1:2 with boxes title 'network'", f"'{q.name}' using 1:3 with lines title 'mean field'"],
            "set style fill transparent solid 0.4\n",
        ))

    # independence of neuron pairs across realizations
    R = int(cfg.get("n_realizations", 1000))
    simR = SimConfig(**{**sim0.to_dict(), "n_realizations": R, "record_mode": "final_state"})
    runR = run_ensemble(spec, simR, law)
    VR = runR.final.voltages
    o = runR.offsets
    pairs = {"within_pop1": (o[0], o[0] + 1)}
    if spec.n_pop > 1:
        pairs["within_pop2"] = (o[1], o[1] + 1)
        pairs["across_pops"] = (o[0], o[1])
    for label, (i, j) in pairs.items():
        rep = ctx.step(f"pearson_{label}", independence_test, VR[:, i], VR[:, j], alpha)
        if rep is None:
            continue
        ctx.wrote(rep.write(ctx.path(f"pearson_{label}.json"), {**meta, "neurons": [int(i), int(j)], "n_realizations": R}))
        rows = zip(VR[:, i], VR[:, j])
        q = write_csv(ctx.path(f"pairs_{label}.csv"), ["V_i", "V_j"], rows, meta)
        ctx.wrote(q)
        ctx.wrote(gnuplot_script(ctx.path(f"pairs_{label}.gp"), f"neurons {i} and {j}", "V_i", "V_j",
                                 [f"'{q.name}' using 1:2 with points pt 7 ps 0.3 notitle"]))


# }}}


# {{{ bench


def cmd_bench(ctx: Context) -> None:
    from .network import SimConfig, run_ensemble

    r = ctx.recipe
    spec = r.model()
    sim0 = r.sim_config()
    law, _ = _initial_state(r, spec)
    n_list = r.block("bench").get("n_list") or [sim0.n_total]
    repeats = int(r.block("bench").get("repeats", 1))
    # compile outside the timed region
    run_ensemble(spec, SimConfig(**{**sim0.to_dict(), "n_total": 16, "t_end": 10 * sim0.dt,
                                    "n_realizations": 1, "record_mode": "final_state"}), law)
    rows = []
    prev = None
    for n in n_list:
        sim = SimConfig(**{**sim0.to_dict(), "n_total": int(n), "n_realizations": 1, "record_mode": "final_state"})
        walls = []
        for _ in range(repeats):
            run = ctx.step(f"bench_N{n}", run_ensemble, spec, sim, law)
            if run is not None:
                walls.append(run.wall_time)
        if not walls:
            continue
        w = min(walls)
        ratio = w / prev[1] if prev else float("nan")
        rows.append((int(n), w, n * sim.n_steps / w, ratio))
        prev = (int(n), w)
    p = write_csv(ctx.path("bench.csv"), ["N", "wall_time", "neuron_steps_per_s", "ratio_to_previous"], rows, ctx.meta())
    ctx.wrote(p)
    ctx.wrote(gnuplot_script(ctx.path("bench.gp"), "simulation wall time", "N", "seconds",
                             ["'bench.csv' using 1:2 with linespoints title 'wall time'"], "set logscale xy\n"))


# }}}


COMMANDS = {
    "simulate-net": cmd_simulate_net,
    "simulate-mf": cmd_simulate_mf,
    "sweep": cmd_sweep,
    "converge": cmd_converge,
    "spectrum": cmd_spectrum,
    "validate": cmd_validate,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisyrate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"noisyrate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="recipe JSON path or packaged recipe name")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads; affects speed only")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted recipe path or param.NAME; repeatable")
        p.add_argument("--n", type=int, help="network size (simulation.n_total)")
        p.add_argument("--t", type=float, help="horizon (simulation.t_end and ode.t_end)")
        p.add_argument("--dt", type=float, help="time step (simulation.dt)")
        p.add_argument("--realizations", type=int, help="simulation.n_realizations")
        if name in ("converge", "bench"):
            p.add_argument("--n-list", help="comma-separated network sizes")
        if name == "spectrum":
            p.add_argument("--lambdas", help="comma-separated noise values")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _flag_overrides(args) -> list[str]:
    ov = []
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")
        ov.append(f"simulation.seed={args.seed}")
    if args.n is not None:
        ov.append(f"simulation.n_total={args.n}")
    if args.t is not None:
        ov.append(f"simulation.t_end={args.t}")
    if args.dt is not None:
        ov.append(f"simulation.dt={args.dt}")
    if args.realizations is not None:
        ov.append(f"simulation.n_realizations={args.realizations}")
    if getattr(args, "n_list", None) is not None:
        vals = [int(x) for x in args.n_list.split(",") if x.strip()]
        ov.append(f"{args.command.replace('-', '_')}.n_list={vals}")
    if getattr(args, "lambdas", None) is not None:
        vals = [float(x) for x in args.lambdas.split(",") if x.strip()]
        ov.append(f"spectrum.lambdas={vals}")
    return ov


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        recipe = ExperimentRecipe.load(args.config, args.override + _flag_overrides(args))
        if args.t is not None and "ode" in recipe.doc:
            recipe.doc["ode"]["t_end"] = args.t
        recipe.model()  # validate early
        if "simulation" in recipe.doc:
            recipe.sim_config()
    except (SpecError, DomainError, ValueError, TypeError) as exc:
        print(f"noisyrate: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None:
        import numba

        if args.threads < 1:
            print("noisyrate: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    out = recipe.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(args.command, recipe, out, argv)
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](ctx)
    except MemoryBudgetError as exc:
        print(f"noisyrate: {exc}", file=sys.stderr)
        ctx.failures.append({"step": args.command, "error": str(exc)})
        ctx.manifest(time.perf_counter() - t0)
        return EXIT_MEMORY
    except (SpecError, DomainError, TypeError, KeyError) as exc:
        print(f"noisyrate: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ctx.wrote(ctx.manifest(time.perf_counter() - t0))
    if ctx.failures:
        print(f"noisyrate: {len(ctx.failures)} step(s) failed:", file=sys.stderr)
        for f in ctx.failures:
            print(f"  {f['step']}: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
