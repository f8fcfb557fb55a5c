"""Command-line front end.

Subcommands:
  hjb       precompute the finite-horizon feedback table and write it out
  simulate  run one method (uncontrolled | ic | fh | oc) on a preset
  sweep     run the optimal-control sweeping iteration (simulate --method oc
            plus per-iteration diagnostics)
  compare   run all four methods with a shared seed and check the cost
            hierarchy

Configuration is resolved preset defaults < JSON config file < flags; every
run writes a manifest.json with the fully resolved configuration and a
content hash, so a run can be reproduced bit-for-bit from its output
directory.  Costs in cost.json / summary.json are quoted in the benchmark
scale: the time integral of (|x - x_d|^2 + gamma |f|^2) against the
density, twice the minimized functional.  Unless --no-plot is given, the
report path also renders the figures next to the delimited output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .binary_control import (
    ControlSet,
    ICMode,
    TableFormatError,
    hjb_solve,
    load_feedback_table,
    save_feedback_table,
)
from .kinetic_mc import FeedbackController, InstantaneousController, mc_run
from .fokker_planck import fp_solve
from .model import (
    ConfigError,
    ControlField,
    CostBreakdown,
    DensityField,
    Grid1D,
    NumericalError,
    SimulationConfig,
    build_initial_density,
    cost_functional,
)
from .optimizer import SweepConfig, sweep
from .presets import (
    METHODS,
    PRESET_NAMES,
    benchmark_calibration,
    benchmark_cost,
    get_preset,
)

__all__ = ["main", "parse_config", "resolve_settings"]

# every key a config file or --set may carry: name -> (type, description)
CONFIG_KEYS = {
    "sigma": (float, "diffusion coefficient"),
    "gamma": (float, "control penalty weight"),
    "x_d": (float, "desired state"),
    "T": (float, "time horizon"),
    "dt": (float, "time step"),
    "L": (float, "domain half width"),
    "dx": (float, "cell width"),
    "seed": (int, "RNG seed"),
    "n_samples": (int, "Monte Carlo particle count"),
    "m_samples": (int, "nonlocal-integral sample count"),
    "preset": (str, "benchmark preset name"),
    "method": (str, "controller to run"),
    "adjoint_mode": (str, "nonlocal integrals: quadrature or mc"),
    "boundary": (str, "particle boundary policy: reflect or resample"),
    "ic_variant": (str, "instantaneous-control formula variant"),
    "ic_sign": (str, "kernel-term sign convention: plus or minus"),
    "u_max": (float, "half width of the admissible control box"),
    "n_u": (int, "control grid points per axis (odd)"),
    "hjb_drift": (str, "partner drift in the recursion: swap or copy"),
    "tol": (float, "sweep stopping tolerance"),
    "max_iter": (int, "sweep iteration cap"),
    "relaxation": (float, "sweep update damping in (0, 1]"),
    "literal_initial": (bool, "use the inverted bump profile for the "
                              "bivariate initial data"),
    "snapshots": (int, "number of stored time slices in CSV output"),
    "plot": (bool, "render figures alongside the delimited output"),
    "dump_particles": (bool, "also write ensemble.csv (t, particle_index, x)"),
    "dump_costate": (bool, "also write psi.csv (t, x_center, psi) for oc runs"),
}

_SIM_KEYS = ("sigma", "gamma", "x_d", "T", "dt", "L", "dx", "seed",
             "n_samples", "m_samples")


@dataclass
class RunSettings:
    """Everything a run needs beyond the scalar simulation config."""

    preset_name: str = "sznajd"
    method: str = "oc"
    adjoint_mode: str = "quadrature"
    boundary: str = "reflect"
    literal_initial: bool = False
    snapshots: int = 161
    plot: bool = True
    dump_particles: bool = False
    dump_costate: bool = False
    ic_mode: ICMode = None
    control_set: ControlSet = None
    hjb_drift: str = None
    sweep_cfg: SweepConfig = None
    overrides: dict = field(default_factory=dict)


def parse_config(path) -> dict:
    """Load and validate a JSON config file; errors name the offending key."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return _validate_keys(raw)


def _validate_keys(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        typ, _ = CONFIG_KEYS[key]
        try:
            if typ is bool and isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    value = True
                elif value.lower() in ("false", "0", "no"):
                    value = False
                else:
                    raise ValueError(value)
            out[key] = typ(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(
                f"config key {key!r} expects {typ.__name__}, got {value!r}"
            ) from exc
    return out


def resolve_settings(args) -> tuple[SimulationConfig, RunSettings, "object"]:
    """Merge preset defaults, config file and flags into one resolved run."""
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(parse_config(args.config))
    for key in ("preset", "method", "gamma", "seed", "adjoint_mode"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides.update(_validate_keys({key.strip(): value.strip()}))
    if getattr(args, "no_plot", False):
        overrides["plot"] = False

    name = overrides.pop("preset", "sznajd")
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    literal = bool(overrides.pop("literal_initial", False))
    preset = get_preset(name, literal_initial=literal)

    sim_kw = {k: overrides.pop(k) for k in list(overrides) if k in _SIM_KEYS}
    config = preset.config.with_overrides(**sim_kw)

    cal = benchmark_calibration(name, config.gamma)
    settings = RunSettings(preset_name=name, literal_initial=literal)
    settings.method = overrides.pop("method", "oc")
    if settings.method not in METHODS:
        raise ConfigError(f"unknown method {settings.method!r}; choose from {METHODS}")
    settings.adjoint_mode = overrides.pop("adjoint_mode", "quadrature")
    if settings.adjoint_mode not in ("quadrature", "mc"):
        raise ConfigError("adjoint_mode must be 'quadrature' or 'mc'")
    settings.boundary = overrides.pop("boundary", "reflect")
    settings.snapshots = int(overrides.pop("snapshots", 161))
    if settings.snapshots < 2:
        raise ConfigError("snapshots must be at least 2")
    settings.plot = bool(overrides.pop("plot", True))
    settings.dump_particles = bool(overrides.pop("dump_particles", False))
    settings.dump_costate = bool(overrides.pop("dump_costate", False))

    variant = overrides.pop("ic_variant", cal.ic_mode.variant)
    sign = overrides.pop("ic_sign", cal.ic_mode.sign)
    settings.ic_mode = ICMode(variant=variant, sign=sign)
    settings.control_set = ControlSet(
        u_max=float(overrides.pop("u_max", cal.control_set.u_max)),
        n_u=int(overrides.pop("n_u", cal.control_set.n_u)))
    settings.hjb_drift = overrides.pop("hjb_drift", cal.hjb_drift)
    settings.sweep_cfg = SweepConfig(
        tol=float(overrides.pop("tol", 1e-5)),
        max_iter=int(overrides.pop("max_iter", cal.max_iter)),
        relaxation=float(overrides.pop("relaxation", cal.relaxation)))
    settings.overrides = dict(overrides)
    if overrides:
        raise ConfigError(f"unused config keys: {sorted(overrides)}")
    return config, settings, preset


def _resolved_dict(config: SimulationConfig, settings: RunSettings) -> dict:
    return {
        "preset": settings.preset_name,
        "method": settings.method,
        "literal_initial": settings.literal_initial,
        "adjoint_mode": settings.adjoint_mode,
        "boundary": settings.boundary,
        "snapshots": settings.snapshots,
        "plot": settings.plot,
        "dump_particles": settings.dump_particles,
        "dump_costate": settings.dump_costate,
        "ic_variant": settings.ic_mode.variant,
        "ic_sign": settings.ic_mode.sign,
        "u_max": settings.control_set.u_max,
        "n_u": settings.control_set.n_u,
        "hjb_drift": settings.hjb_drift,
        "tol": settings.sweep_cfg.tol,
        "max_iter": settings.sweep_cfg.max_iter,
        "relaxation": settings.sweep_cfg.relaxation,
        **{k: getattr(config, k) for k in _SIM_KEYS},
    }


def write_manifest(out_dir, config, settings, outputs, wall_time) -> None:
    resolved = _resolved_dict(config, settings)
    blob = json.dumps(resolved, sort_keys=True).encode()
    manifest = {
        "resolved_config": resolved,
        "content_hash": hashlib.sha256(blob).hexdigest(),
        "outputs": [str(p) for p in outputs],
        "wall_time_s": wall_time,
        "package_version": _version(),
        "numpy_version": np.__version__,
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    outputs.append(path)


def _version() -> str:
    from . import __version__

    return __version__


def snapshot_instants(config: SimulationConfig, count: int) -> np.ndarray:
    steps = np.unique(np.round(np.linspace(0, config.n_steps, count)).astype(int))
    return steps * config.dt


def write_density_csv(path, density: DensityField) -> None:
    x = density.grid.centers
    with open(path, "w") as fh:
        fh.write("t,x_center,mu\n")
        for k, t in enumerate(density.times):
            for i in range(x.size):
                fh.write(f"{t:.17g},{x[i]:.17g},{density.values[k, i]:.17g}\n")


def write_control_csv(path, control: ControlField, times: np.ndarray) -> None:
    x = control.grid.centers
    with open(path, "w") as fh:
        fh.write("t,x_center,f\n")
        for t in times:
            m = min(int(round(t / control.dt)), control.n_steps - 1)
            for i in range(x.size):
                fh.write(f"{t:.17g},{x[i]:.17g},{control.values[m, i]:.17g}\n")


def write_applied_controls_csv(path, stats: np.ndarray, dt: float) -> None:
    with open(path, "w") as fh:
        fh.write("t,u_mean,u_rms,u_absmax\n")
        for m in range(stats.shape[0]):
            fh.write(f"{m * dt:.17g},{stats[m, 0]:.17g},"
                     f"{stats[m, 1]:.17g},{stats[m, 2]:.17g}\n")


def write_cost_json(path, cost: CostBreakdown) -> None:
    with open(path, "w") as fh:
        json.dump({"J": cost.J, "state_term": cost.state_term,
                   "control_term": cost.control_term}, fh, indent=2)


def write_ensemble_csv(path, ensembles, dt: float) -> None:
    with open(path, "w") as fh:
        fh.write("t,particle_index,x\n")
        for ens in ensembles:
            t = ens.step * dt
            for k in range(ens.n):
                fh.write(f"{t:.17g},{k},{ens.positions[k]:.17g}\n")


def write_costate_csv(path, psi, times: np.ndarray) -> None:
    x = psi.grid.centers
    with open(path, "w") as fh:
        fh.write("t,x_center,psi\n")
        for t in times:
            m = min(int(round(t / psi.dt)), psi.values.shape[0] - 1)
            for i in range(x.size):
                fh.write(f"{t:.17g},{x[i]:.17g},{psi.values[m, i]:.17g}\n")


def _subsample_density(density: DensityField, times: np.ndarray) -> DensityField:
    idx = [int(np.argmin(np.abs(density.times - t))) for t in times]
    return DensityField(grid=density.grid, times=density.times[idx],
                        values=density.values[idx])


def _run_method(method, preset, config, settings, table, diagnostics=None):
    """Dispatch one method; returns (density, control or None, stats or None,
    cost in benchmark scale, extra dict)."""
    grid = Grid1D.from_config(config)
    mu0 = build_initial_density(preset.initial, grid)
    snap = snapshot_instants(config, settings.snapshots)
    extra = {}
    if method == "uncontrolled":
        f = ControlField.zeros(grid, config.n_steps, config.dt)
        dens = fp_solve(mu0, f, preset.kernel, config)
        cost = cost_functional(dens, f, config)
        return _subsample_density(dens, snap), f, None, benchmark_cost(cost), extra
    if method == "oc":
        mu, f, psi, rep = sweep(mu0, None, config, preset.kernel,
                                settings.sweep_cfg,
                                adjoint_mode=settings.adjoint_mode,
                                diagnostics=diagnostics)
        extra["sweep"] = rep
        extra["psi"] = psi
        return (_subsample_density(mu, snap), f, None,
                benchmark_cost(rep.costs[-1]), extra)
    if method == "ic":
        controller = InstantaneousController(settings.ic_mode)
    else:
        if table is None:
            raise ConfigError(
                "finite-horizon run needs a feedback table; run the hjb "
                "precompute first or pass --table")
        controller = FeedbackController(table)
    res = mc_run(mu0, controller, preset.kernel, config, snapshot_times=snap,
                 boundary=settings.boundary)
    extra["ensembles"] = res.ensembles
    return res.density, None, res.control_stats, benchmark_cost(res.cost), extra


def _render_simulation_figures(out_dir, method, density, control, outputs):
    from . import report

    x = density.grid.centers
    outputs.append(report.save_heatmap(
        density.times, x, density.values, out_dir / "density.png", "mu",
        title=f"density, method={method}"))
    outputs.append(report.save_final_state(
        x, {method: density.values[-1]}, out_dir / "final_state.png",
        title="terminal density"))
    if control is not None:
        times = density.times
        idx = [min(int(round(t / control.dt)), control.n_steps - 1) for t in times]
        outputs.append(report.save_heatmap(
            times, x, control.values[idx], out_dir / "control.png", "f",
            title=f"control, method={method}"))


def cmd_hjb(args) -> int:
    config, settings, preset = resolve_settings(args)
    out_dir = _ensure_out(args)
    t0 = time.perf_counter()
    _, table = hjb_solve(config, preset.kernel, settings.control_set,
                         keep_value=False, second_drift=settings.hjb_drift)
    table_path = args.table or (out_dir / "feedback_table.mfch")
    save_feedback_table(table_path, table)
    outputs = [table_path]
    write_manifest(out_dir, config, settings, outputs, time.perf_counter() - t0)
    print(f"feedback table written to {table_path} "
          f"({table.n_slices()} slices, {table.grid.n_nodes}^2 nodes)")
    return 0


def cmd_simulate(args, method=None) -> int:
    config, settings, preset = resolve_settings(args)
    if method is not None:
        settings.method = method
    out_dir = _ensure_out(args)
    table = None
    if settings.method == "fh":
        if not args.table:
            raise ConfigError(
                "finite-horizon run needs a feedback table; run the hjb "
                "precompute first and pass --table")
        table = load_feedback_table(args.table)
    t0 = time.perf_counter()
    outputs = []
    diag = None
    if settings.method == "oc":
        diag_path = out_dir / "sweep_diagnostics.jsonl"
        diag = open(diag_path, "w")
        outputs.append(diag_path)
    try:
        density, control, stats, cost, extra = _run_method(
            settings.method, preset, config, settings, table, diagnostics=diag)
    finally:
        if diag is not None:
            diag.close()
    dens_path = out_dir / "density.csv"
    write_density_csv(dens_path, density)
    outputs.append(dens_path)
    if control is not None:
        ctrl_path = out_dir / "control.csv"
        write_control_csv(ctrl_path, control, density.times)
        outputs.append(ctrl_path)
    if stats is not None:
        stats_path = out_dir / "applied_controls.csv"
        write_applied_controls_csv(stats_path, stats, config.dt)
        outputs.append(stats_path)
    cost_path = out_dir / "cost.json"
    write_cost_json(cost_path, cost)
    outputs.append(cost_path)
    if settings.dump_particles and "ensembles" in extra:
        ens_path = out_dir / "ensemble.csv"
        write_ensemble_csv(ens_path, extra["ensembles"], config.dt)
        outputs.append(ens_path)
    if settings.dump_costate and "psi" in extra:
        psi_path = out_dir / "psi.csv"
        write_costate_csv(psi_path, extra["psi"], density.times)
        outputs.append(psi_path)
    if settings.plot:
        _render_simulation_figures(out_dir, settings.method, density, control,
                                   outputs)
    write_manifest(out_dir, config, settings, outputs, time.perf_counter() - t0)
    rep = extra.get("sweep")
    note = ""
    if rep is not None:
        note = (f" (sweep: {rep.iterations} iterations, "
                f"converged={rep.converged})")
        if not rep.converged:
            print(f"J = {cost.J:.6g}{note}")
            return 3
    print(f"J = {cost.J:.6g}{note}")
    return 0


def cmd_compare(args) -> int:
    config, settings, preset = resolve_settings(args)
    out_dir = _ensure_out(args)
    t0 = time.perf_counter()
    outputs = []
    if args.table:
        table = load_feedback_table(args.table)
    else:
        _, table = hjb_solve(config, preset.kernel, settings.control_set,
                             keep_value=False, second_drift=settings.hjb_drift)
        table_path = out_dir / "feedback_table.mfch"
        save_feedback_table(table_path, table)
        outputs.append(table_path)
    costs, errors, failures = {}, {}, {}
    finals = {}
    for method in ("uncontrolled", "ic", "fh", "oc"):
        try:
            density, _, _, cost, _ = _run_method(method, preset, config,
                                                 settings, table)
            costs[method] = cost.J
            errors[method] = cost.std_error
            finals[method] = density.values[-1]
        except (NumericalError, ConfigError) as exc:
            failures[method] = str(exc)
    ordering_ok = False
    if all(m in costs for m in ("ic", "fh", "oc")):
        slack_fh = 2.0 * (errors["fh"] ** 2 + errors["oc"] ** 2) ** 0.5
        slack_ic = 2.0 * (errors["ic"] ** 2 + errors["fh"] ** 2) ** 0.5
        ordering_ok = (costs["oc"] <= costs["fh"] + slack_fh
                       and costs["fh"] <= costs["ic"] + slack_ic)
    summary = {"J": costs, "std_error": errors, "ordering_ok": ordering_ok,
               "failures": failures}
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    outputs.append(summary_path)
    if settings.plot and finals:
        from . import report

        grid = Grid1D.from_config(config)
        outputs.append(report.save_final_state(
            grid.centers, finals, out_dir / "compare_final.png",
            title="terminal densities"))
        outputs.append(report.save_compare_chart(
            costs, out_dir / "compare_costs.png", title="cost by method"))
    write_manifest(out_dir, config, settings, outputs, time.perf_counter() - t0)
    for method in ("uncontrolled", "ic", "fh", "oc"):
        if method in costs:
            print(f"{method:>12}: J = {costs[method]:.6g}")
        else:
            print(f"{method:>12}: FAILED ({failures[method]})")
    print(f"ordering J_oc <= J_fh <= J_ic: {'ok' if ordering_ok else 'violated'}")
    return 0 if not failures else 3


def _ensure_out(args):
    from pathlib import Path

    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="Controllers for mean field opinion dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=PRESET_NAMES, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--table", default=None, help="feedback table file")
        p.add_argument("--adjoint-mode", dest="adjoint_mode",
                       choices=("quadrature", "mc"), default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering")

    p_hjb = sub.add_parser("hjb", help="precompute the feedback table")
    common(p_hjb)

    p_sim = sub.add_parser("simulate", help="run one method")
    common(p_sim)
    p_sim.add_argument("--method", choices=METHODS, default=None)

    p_sweep = sub.add_parser("sweep", help="run the optimal-control sweep")
    common(p_sweep)

    p_cmp = sub.add_parser("compare", help="run all methods and compare costs")
    common(p_cmp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "hjb":
            return cmd_hjb(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "sweep":
            args.method = "oc"
            return cmd_simulate(args, method="oc")
        return cmd_compare(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, TableFormatError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
