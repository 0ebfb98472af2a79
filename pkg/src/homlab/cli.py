"""Command-line entry point: ``homlab <experiment> [--config FILE] [--key value ...]``.

Every experiment writes its data tables, ``manifest.json`` (deterministic,
checksummed), ``timing.json`` (wall time, kept out of the checksum) and a
``summary.txt``. Exit status: 0 when all checks pass, 1 naming the first
failing check, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .core import ConfigurationError, HomlabError, PeriodicProfile, UniformGrid, write_csv


class ConfigError(ConfigurationError):
    """Bad configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{message}: {key!r}")
        self.key = key


def workers() -> int:
    try:
        return max(1, int(os.environ.get("HOMLAB_WORKERS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items) -> list:
    """Ordered map, fanned out to ``HOMLAB_WORKERS`` processes when > 1."""
    items = list(items)
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- results -----------------------------------------------------------------


@dataclass
class Result:
    tables: dict = field(default_factory=dict)  # name -> (header, columns)
    documents: dict = field(default_factory=dict)  # name -> json-able object
    checks: list = field(default_factory=list)  # (name, passed)
    summary: list = field(default_factory=list)

    def check(self, name: str, passed) -> None:
        self.checks.append((name, bool(passed)))


def _profile(cfg) -> PeriodicProfile:
    if not isinstance(cfg, dict):
        raise ConfigError("profile", "profile must be a mapping")
    try:
        return PeriodicProfile.from_dict(cfg)
    except KeyError as exc:
        raise ConfigError(f"profile.{exc.args[0]}", "missing profile key") from None
    except ConfigurationError as exc:
        raise ConfigError("profile", str(exc)) from None


LAMINATE = {"type": "piecewise", "breakpoints": [0.0, 0.5], "values": [1.0, 2.0]}


# -- experiments ---------------------------------------------------------------


def run_homog1d(cfg, seed) -> Result:
    from .classical import effective_coefficient_1d, epsilon_convergence_study

    prof = _profile(cfg["profile"])
    grid = UniformGrid(0.0, 1.0, int(cfg["n"]))
    study = epsilon_convergence_study(prof, float(cfg["source"]), cfg["epsilons"], grid)
    res = Result()
    res.tables["convergence"] = (["epsilon", "l2_error"], [study.epsilons, study.errors])
    abar = effective_coefficient_1d(prof)
    res.documents["effective"] = {"abar": abar, "order": study.order}
    res.check("order_at_least_0.9", study.order >= 0.9)
    res.summary.append(f"abar = {abar!r}, fitted order = {study.order:.4f}")
    return res


def run_cell(cfg, seed) -> Result:
    from .classical import cell_problem_converged, homogenization_bounds, laminate_coefficient

    prof = _profile(cfg["profile"])
    dim = int(cfg["dim"])
    if dim == 1:
        A = prof
    elif dim == 2:
        A = laminate_coefficient(prof)
    else:
        raise ConfigError("dim", "dimension must be 1 or 2")
    _, tensor, n = cell_problem_converged(A, dim, int(cfg["n0"]), float(cfg["tol"]), int(cfg["max_n"]))
    lo, hi = homogenization_bounds(A, dim, n)
    M = tensor.matrix
    res = Result()
    res.tables["effective_tensor"] = (["row"] + [f"col{j}" for j in range(dim)],
                                      [np.arange(dim)] + [M[:, j] for j in range(dim)])
    ev = np.linalg.eigvalsh(M)
    res.documents["cell"] = {"n": n, "bounds": [lo, hi], "eigenvalues": ev.tolist()}
    res.check("symmetric", np.abs(M - M.T).max() <= 1e-12)
    res.check("within_bounds", ev.min() >= lo - 1e-8 and ev.max() <= hi + 1e-8)
    res.summary.append(f"Abar eigenvalues {ev.tolist()} at n = {n}")
    return res


def run_tartar(cfg, seed) -> Result:
    from .core import AtomicMeasure
    from .memory import localized_system_solve, memory_equation_from_measure, weak_limit_solution

    try:
        meas = AtomicMeasure.from_pairs([tuple(p) for p in cfg["atoms"]])
    except (TypeError, ValueError) as exc:
        raise ConfigError("atoms", f"invalid atoms ({exc})") from None
    T, dt = float(cfg["T"]), float(cfg["dt"])
    eq = memory_equation_from_measure(meas, T, dt)
    u = eq.solve(1.0, T, dt)
    t = dt * np.arange(u.size)
    ref = weak_limit_solution(meas, 1.0, t)
    res = Result()
    cols = [t, u, ref]
    header = ["t", "volterra", "weak_limit"]
    if eq.kernel.n_modes:
        uloc, _ = localized_system_solve(1.0, T, dt, eq)
        cols.append(uloc)
        header.append("localized")
    res.tables["trajectory"] = (header, cols)
    err = float(np.abs(u - ref).max())
    res.documents["memory_equation"] = {
        "b": eq.b, "rates": np.real(eq.rates).tolist(), "weights": np.real(eq.weights).tolist(),
        "max_error": err}
    res.check("volterra_reproduces_weak_limit", err <= 5 * dt ** 2 * max(1.0, np.abs(ref).max()) + 1e-12)
    res.check("mode_count", eq.kernel.n_modes == meas.merged().values.size - 1)
    res.summary.append(f"b = {eq.b!r}, max error = {err:.3e}")
    return res


def run_symbol(cfg, seed) -> Result:
    from .symbol import correction_term, homogenized_symbol, nonpolynomiality_certificate, symbol_series

    prof = _profile(cfg["profile"])
    k = np.linspace(0.0, float(cfg["k_max"]), int(cfg["n_k"]))
    table = homogenized_symbol(prof, k, int(cfg["J"]))
    series = np.array([symbol_series(prof, kk, int(cfg["J"])) for kk in k])
    corr = correction_term(prof, k)
    cert = nonpolynomiality_certificate(table, int(cfg["degree"]))
    res = Result()
    res.tables["symbol"] = (["k", "bbar", "series", "series_bound", "correction"],
                            [k, table.values, series[:, 0], series[:, 1], corr])
    res.tables["fit_residuals"] = (["degree", "residual", "relative_residual"],
                                   [cert.degrees, cert.residuals, cert.relative_residuals])
    res.documents["certificate"] = {"certified": cert.certified, "floor": cert.floor, "note": cert.note}
    res.check("resolvent_bounds", table.bounds_ok())
    res.check("series_within_bound", np.all(np.abs(series[:, 0] - table.values) <= series[:, 1] + 1e-12))
    res.summary.append(f"nonpolynomiality certified: {cert.certified} ({cert.note})")
    return res


def run_bloch(cfg, seed) -> Result:
    from .bloch import bloch_bands, kernel_from_dispersion, zone_grid

    prof = _profile(cfg["profile"])
    spec = bloch_bands(prof, zone_grid(int(cfg["n_k"])), int(cfg["n_modes"]), int(cfg["n_cell"]))
    kcut = cfg["k_cut"]
    ker = kernel_from_dispersion(spec, k_cut=None if kcut is None else float(kcut))
    res = Result()
    res.tables["bands"] = (["k"] + [f"lambda{m}" for m in range(spec.eigenvalues.shape[1])],
                           [spec.k] + list(spec.eigenvalues.T))
    res.tables["kernel"] = (["s", "gamma"], [ker.s, ker.gamma])
    res.documents["kernel"] = {"amplitude": ker.amplitude, "k_edge": ker.k_edge, "k_cut": ker.k_cut,
                               "integral": ker.integral, "dispersion_residual": ker.residual,
                               "small_k_slope": spec.small_k_slope()}
    res.check("lambda0_zero_at_origin", abs(spec.lambda0[0]) <= 1e-10)
    res.check("bands_ordered", np.all(np.diff(spec.eigenvalues, axis=1) >= 0))
    res.check("kernel_unit_mass", abs(ker.integral - 1) <= 1e-10)
    res.check("kernel_even", np.array_equal(ker.gamma, ker.gamma[::-1]))
    res.summary.append(f"small-k slope {spec.small_k_slope():.6f}, kernel residual {ker.residual:.3e}")
    return res


def run_wave_compare(cfg, seed) -> Result:
    from .bloch import gaussian_pulse, model_comparison

    prof = _profile(cfg["profile"])
    table = model_comparison(prof, float(cfg["epsilon"]), gaussian_pulse(float(cfg["pulse_width"])),
                             [float(t) for t in cfg["times"]], float(cfg["length"]),
                             int(cfg["nodes_per_period"]), cfg["sweep_epsilons"],
                             float(cfg["sweep_time"]))
    res = Result()
    res.tables["errors"] = (["t", "local_error", "nonlocal_error", "fine_norm"],
                            [table.times, table.local_errors, table.nonlocal_errors, table.fine_norms])
    if table.epsilons is not None:
        res.tables["sweep"] = (["epsilon", "nonlocal_error"], [table.epsilons, table.sweep_errors])
    res.documents["comparison"] = {"sweep_order": table.sweep_order, "norm": "L2 on the periodic domain"}
    ratio = table.nonlocal_errors[-1] / table.local_errors[-1]
    res.check("nonlocal_beats_local_at_final_time", ratio <= 0.5)
    if table.epsilons is not None:
        res.check("sweep_order_at_least_0.8", table.sweep_order >= 0.8)
    res.summary.append(f"final error ratio nonlocal/local = {ratio:.3f}, sweep order = {table.sweep_order:.3f}")
    return res


def _schur_trial(args):
    from .schur_lod import decompose, equivalence_check, random_instance

    seed, n, N = args
    L, Phi, f = random_instance(np.random.default_rng(seed), n, N)
    rep = equivalence_check(decompose(L, Phi), f)
    return rep.matrix_difference, rep.solution_difference, rep.exactness


def run_schur_lod(cfg, seed) -> Result:
    from .schur_lod import decay_profile, decompose, fd_operator_1d, hat_basis, schur_homogenize

    trials = int(cfg["trials"])
    seeds = np.random.SeedSequence(seed).generate_state(trials)
    rows = np.array(parallel_map(_schur_trial, [(int(s), int(cfg["n"]), int(cfg["N"])) for s in seeds]))
    res = Result()
    res.tables["equivalence"] = (["trial", "matrix_difference", "solution_difference", "exactness"],
                                 [np.arange(trials), rows[:, 0], rows[:, 1], rows[:, 2]])
    contrast = float(cfg["contrast"])
    prof = PeriodicProfile.two_valued(1.0, contrast)
    L, x = fd_operator_1d(prof, float(cfg["epsilon"]), int(cfg["fine_n"]))
    B, X = hat_basis(x, int(cfg["coarse_n"]))
    coarse = schur_homogenize(decompose(L, B), np.ones(x.size))
    dp = decay_profile(coarse, X)
    res.tables["decay"] = (["distance", "magnitude"], [dp.distances, dp.magnitudes])
    worst = float(rows.max())
    res.documents["decay_fit"] = {"slope": dp.slope, "correlation": dp.correlation,
                                  "asserted": contrast <= 1e2}
    res.check("equivalence_within_1e-10", worst <= 1e-10)
    if contrast <= 1e2:
        res.check("decay_slope_negative", dp.slope < 0)
    res.summary.append(f"max difference over {trials} trials = {worst:.3e}; decay slope {dp.slope:.3f}")
    return res


def _lattice_point(args):
    from .lattice import LatticeModel, coarse_grain, kernel_diagnostics

    K1, K2, N, M = args
    ker = coarse_grain(LatticeModel(K1, K2, N), M)
    return ker.n, ker.theta, kernel_diagnostics(ker).as_dict()


def run_lattice(cfg, seed) -> Result:
    from .lattice import LatticeModel, ModelError

    K1, K2, N = float(cfg["K1"]), float(cfg["K2"]), int(cfg["N"])
    try:
        LatticeModel(K1, K2, N)
    except ModelError as exc:
        raise ConfigError("K2", str(exc)) from None
    Ms = [int(m) for m in cfg["M"]]
    out = parallel_map(_lattice_point, [(K1, K2, N, M) for M in Ms])
    res = Result()
    diags = {}
    for M, (n, theta, d) in zip(Ms, out):
        res.tables[f"kernel_M{M}"] = (["n", "theta"], [n, theta])
        diags[str(M)] = d
        res.check(f"moment_identity_M{M}", d["moment_residual"] <= 1e-8)
        res.check(f"evenness_M{M}", d["evenness"] <= 1e-14)
        res.check(f"zero_sum_M{M}", d["zero_sum"] <= 1e-10)
    res.documents["diagnostics"] = diags
    res.summary.append("moment residuals " + ", ".join(f"M={m}: {diags[str(m)]['moment_residual']:.2e}" for m in Ms))
    return res


def run_mz(cfg, seed) -> Result:
    from .mori_zwanzig import (LinearSystem, MoriProjection, fluctuation_dissipation_check, localize_kernel,
                               master_property_trials, mori_reduce, random_skew_system, subspace_reduce)

    T, dt = float(cfg["T"]), float(cfg["dt"])
    trials = master_property_trials(int(cfg["trials"]), seed, int(cfg["n_max"]), T, dt)
    rng = np.random.default_rng(seed)
    fd = []
    for _ in range(int(cfg["skew_trials"])):
        system, proj = random_skew_system(rng, int(cfg["skew_n"]))
        fd.append(fluctuation_dissipation_check(mori_reduce(system, proj, T, dt), system))
    osc = LinearSystem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([1.0, 0.0]))
    red = subspace_reduce(osc, np.array([[1.0], [0.0]]), T, dt)
    u = red.solve()
    t = red.times
    osc_err = float(np.abs(u - np.cos(t)).max())
    tartar = subspace_reduce(LinearSystem(np.diag([-1.0, -2.0]), np.array([1.0, 1.0]) / np.sqrt(2)),
                             np.array([[1.0], [1.0]]), T, dt)
    loc = localize_kernel(tartar.kernel, int(cfg["modes"]), markov=tartar.G, u0=1.0)
    res = Result()
    res.tables["master_property"] = (["trial", "n", "k", "max_error", "scale"],
                                     [np.arange(len(trials)), [x.n for x in trials], [x.k for x in trials],
                                      [x.error for x in trials], [x.scale for x in trials]])
    res.tables["oscillator"] = (["t", "reduced", "exact"], [t, u, np.cos(t)])
    res.tables["tartar_kernel"] = (["t", "gamma"], [tartar.times, tartar.kernel.values])
    res.documents["residuals"] = {"fluctuation_dissipation": fd, "oscillator_error": osc_err,
                                  "localization_fit": loc.kernel_residual,
                                  "localization_trajectory": loc.trajectory_error}
    if cfg["generator_file"]:
        from .core import read_csv

        try:
            _, gen = read_csv(cfg["generator_file"])
        except OSError as exc:
            raise ConfigError("generator_file", f"cannot read generator ({exc})") from None
        obs = cfg["observable"]
        a = np.eye(gen.shape[0])[0] if obs is None else np.asarray(obs, float)
        if a.shape != (gen.shape[0],):
            raise ConfigError("observable", "observable length must match the generator size")
        user = mori_reduce(LinearSystem(gen), MoriProjection(a), T, dt)
        res.tables["generator_kernel"] = (["t", "gamma"], [user.times, user.kernel.values])
        res.documents["generator"] = {"G": user.G, "size": gen.shape[0]}
    res.check("master_property", all(x.passed(dt) for x in trials))
    res.check("fluctuation_dissipation", max(fd, default=0.0) <= 1e-8)
    res.check("oscillator_cos", osc_err <= 1e-4)
    res.check("localization_fit", loc.kernel_residual <= 1e-10)
    res.summary.append(f"oscillator error {osc_err:.3e}, FD residual {max(fd, default=0.0):.3e}")
    return res


def run_ac(cfg, seed) -> Result:
    from .ac import GaussianKernel, NonlocalDiffusionProblem, assemble_nonlocal, convergence_diagram
    from .core import DiscreteKernel, read_csv

    if cfg["kernel"] == "gaussian":
        kernel = GaussianKernel(float(cfg["std"]))
    elif cfg["kernel"] == "file":
        if not cfg["kernel_file"]:
            raise ConfigError("kernel_file", "kernel file required")
        _, data = read_csv(cfg["kernel_file"])
        from .ac import SampledKernel
        kernel = SampledKernel(DiscreteKernel(data[:, 0], data[:, 1]))
    else:
        raise ConfigError("kernel", "kernel must be 'gaussian' or 'file'")
    eps = [float(e) for e in cfg["epsilons"]]
    diag = convergence_diagram(kernel, eps, int(cfg["ratio"]), int(cfg["fine_ratio"]))
    rows = diag.rows()
    res = Result()
    res.tables["diagram"] = (["path", "epsilon", "h", "error"],
                             [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows]])
    quad = []
    for e in eps:
        system = assemble_nonlocal(NonlocalDiffusionProblem(kernel, e), e / int(cfg["ratio"]))
        r = np.abs(system.apply(system.x ** 2) - kernel.sigma2).max()
        quad.append(bool(r <= system.quadrature_tolerance))
    res.documents["verdict"] = diag.verdict
    res.check("quadratic_exactness", all(quad))
    res.check("ac_verdict", diag.verdict["pass"])
    res.summary.append(f"AC verdict: {diag.verdict['pass']} ({diag.verdict['convention']})")
    return res


@dataclass(frozen=True)
class Experiment:
    name: str
    tag: str
    runner: Callable
    defaults: dict


EXPERIMENTS = {e.name: e for e in [
    Experiment("ac", "asymptotic compatibility", run_ac,
               {"kernel": "gaussian", "std": 1.0, "kernel_file": None,
                "epsilons": [0.125, 0.0625, 0.03125, 0.015625], "ratio": 8, "fine_ratio": 32}),
    Experiment("bloch", "Bloch waves and dispersion", run_bloch,
               {"profile": LAMINATE, "n_k": 129, "n_modes": 3, "n_cell": 256, "k_cut": None}),
    Experiment("cell", "periodic homogenization", run_cell,
               {"profile": LAMINATE, "dim": 2, "n0": 8, "tol": 1e-6, "max_n": 64}),
    Experiment("homog1d", "periodic homogenization", run_homog1d,
               {"profile": LAMINATE, "source": 1.0, "n": 4097,
                "epsilons": [0.125, 0.0625, 0.03125, 0.015625, 0.0078125]}),
    Experiment("lattice", "lattice coarse-graining", run_lattice,
               {"K1": 1.0, "K2": 0.1, "N": 4096, "M": [2, 4, 8, 16]}),
    Experiment("mz", "Mori-Zwanzig reduction", run_mz,
               {"trials": 20, "n_max": 20, "T": 5.0, "dt": 1e-3, "skew_trials": 3, "skew_n": 6, "modes": 1,
                "generator_file": None, "observable": None}),
    Experiment("schur-lod", "numerical homogenization", run_schur_lod,
               {"trials": 100, "n": 64, "N": 8, "fine_n": 255, "coarse_n": 15,
                "epsilon": 0.0625, "contrast": 10.0}),
    Experiment("symbol", "nonlocal Fourier symbol", run_symbol,
               {"profile": {"type": "piecewise", "breakpoints": [0.0, 0.5], "values": [0.5, -0.5]},
                "k_max": 10.0, "n_k": 201, "J": 12, "degree": 6}),
    Experiment("tartar", "memory effects", run_tartar,
               {"atoms": [[0.5, 1.0], [0.5, 2.0]], "T": 5.0, "dt": 1e-3}),
    Experiment("wave-compare", "Bloch waves and dispersion", run_wave_compare,
               {"profile": LAMINATE, "epsilon": 0.1, "pulse_width": 0.3, "times": [1.0, 10.0, 100.0],
                "length": 20.0, "nodes_per_period": 32, "sweep_epsilons": [0.1, 0.05, 0.025],
                "sweep_time": 10.0}),
]}

RESERVED = {"output", "format", "seed"}


def list_experiments() -> list[tuple[str, str]]:
    return sorted((e.name, e.tag) for e in EXPERIMENTS.values())


# -- configuration -------------------------------------------------------------


def resolve_config(name: str, file_cfg: dict | None, overrides: dict) -> dict:
    """Merge defaults, file values and flag overrides; unknown keys are errors."""
    exp = EXPERIMENTS[name]
    cfg = copy.deepcopy(exp.defaults)
    cfg.update({"format": "csv", "seed": 0})
    for source in (file_cfg or {}), overrides:
        if not isinstance(source, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        for key, val in source.items():
            if key == "output":
                continue
            if key not in cfg:
                raise ConfigError(key, "unknown configuration key")
            cfg[key] = val
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format", "format must be csv or json")
    try:
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed", "seed must be an integer") from None
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def execute(name: str, cfg: dict, out: Path) -> tuple[int, Result]:
    exp = EXPERIMENTS[name]
    out.mkdir(parents=True, exist_ok=True)
    run_cfg = {k: v for k, v in cfg.items() if k not in RESERVED}
    start = time.perf_counter()
    res = exp.runner(run_cfg, cfg["seed"])
    wall = time.perf_counter() - start
    files = {}
    for tname, (header, cols) in res.tables.items():
        if cfg["format"] == "csv":
            path = out / f"{tname}.csv"
            write_csv(path, header, cols)
        else:
            path = out / f"{tname}.json"
            path.write_text(_dump({h: list(np.asarray(c).tolist()) for h, c in zip(header, cols)}))
        files[path.name] = _sha256(path)
    for dname, doc in res.documents.items():
        path = out / f"{dname}.json"
        path.write_text(_dump(doc))
        files[path.name] = _sha256(path)
    body = {"experiment": name, "tag": exp.tag, "version": __version__, "config": cfg,
            "seed": cfg["seed"], "checks": [{"name": n, "passed": p} for n, p in res.checks],
            "files": files}
    body["checksum"] = hashlib.sha256(_dump(body).encode()).hexdigest()
    (out / "manifest.json").write_text(_dump(body))
    (out / "timing.json").write_text(_dump({"wall_time_seconds": wall}))
    lines = [f"{name} [{exp.tag}]"] + res.summary
    lines += [f"{'PASS' if p else 'FAIL'} {n}" for n, p in res.checks]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    failed = [n for n, p in res.checks if not p]
    return (1 if failed else 0), res


# -- argument parsing --------------------------------------------------------------


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"homlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list experiments")
    for name, exp in sorted(EXPERIMENTS.items()):
        p = sub.add_parser(name, help=exp.tag)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--output", "-o", help="output directory (default: runs/<experiment>)")
        p.add_argument("--format", choices=["csv", "json"], default=None)
        p.add_argument("--seed", type=int, default=None)
        for key in exp.defaults:
            p.add_argument(_flag(key), dest=f"opt_{key}", default=None, metavar="VALUE",
                           help=f"override '{key}' (YAML value, default {exp.defaults[key]!r})")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        for name, tag in list_experiments():
            print(f"{name}\t{tag}")
        return 0
    overrides = {}
    for key, val in vars(args).items():
        if key.startswith("opt_") and val is not None:
            overrides[key[4:]] = yaml.safe_load(val)
    for key in ("format", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    file_cfg = None
    output = args.output
    try:
        if args.config:
            with open(args.config) as fh:
                file_cfg = yaml.safe_load(fh) or {}
            if isinstance(file_cfg, dict) and output is None and "output" in file_cfg:
                output = str(file_cfg["output"])
        cfg = resolve_config(args.command, file_cfg, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, yaml.YAMLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(output) if output else Path("runs") / args.command
    try:
        status, res = execute(args.command, cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, HomlabError, ValueError, TypeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    for line in res.summary:
        print(line)
    failed = [n for n, p in res.checks if not p]
    if failed:
        print(f"check failed: {failed[0]}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
