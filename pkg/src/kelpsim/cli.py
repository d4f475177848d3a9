"""Command-line entry point.

Subcommands: check, simulate, sweep, ibm, converge, analyze.  Every run
writes delimited tables with '#'-prefixed headers plus matplotlib figures
next to them (--no-plots suppresses the figures).

Flag precedence: command line > KELPSIM_* environment variables > config
file.  Documented variables: KELPSIM_CONFIG, KELPSIM_SEED, KELPSIM_OUT,
KELPSIM_PATHS, KELPSIM_THREADS.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import numpy as np

from . import __version__
from .analysis import Ensemble, histogram, run_ensemble, wilson_interval
from .config import (
    PRESET_NAMES,
    ScenarioConfig,
    apply_sweep_value,
    load_config,
    parse_config,
    preset,
    render_config,
)
from .convergence import meanfield_error, strong_error_curve
from .ibm import IbmConfig, IbmState
from .model import ParameterError, params_hash, validate_params
from .scheme import validate_dt, write_path_record
from .tables import write_table

LOW_MASS_FRACTION_OF_K = 0.1  # "low biomass" cut used in sweep summaries


class ValidationFailure(Exception):
    """Raised when a config or parameter check fails (exit code 1)."""


def _env(name: str, cast, fallback=None):
    raw = os.environ.get(f"KELPSIM_{name}")
    if raw is None or raw == "":
        return fallback
    return cast(raw)


def _resolve_config(args) -> ScenarioConfig:
    path = args.config or _env("CONFIG", str)
    if path and args.preset:
        raise ValidationFailure("--config and --preset are mutually exclusive")
    if args.preset:
        cfg = preset(args.preset)
    elif path:
        cfg = load_config(path)
    else:
        cfg = preset("default")
    seed = args.seed if args.seed is not None else _env("SEED", int)
    if seed is not None:
        cfg.master_seed = seed
    out = args.out or _env("OUT", str)
    if out:
        cfg.out_dir = out
    paths = args.paths if getattr(args, "paths", None) is not None else _env("PATHS", int)
    if paths is not None:
        cfg.n_paths = paths
    threads = (
        args.threads if getattr(args, "threads", None) is not None else _env("THREADS", int)
    )
    if threads is not None:
        cfg.threads = threads
    return cfg


def _check(cfg: ScenarioConfig, out=None) -> bool:
    out = out or sys.stdout
    report = validate_params(cfg.params)
    dt = cfg.horizon / cfg.n_steps
    ok_dt, slack = validate_dt(cfg.params, dt)
    ok_band = dt < 0.5
    out.write(report.format() + "\n")
    status = "PASS" if ok_dt else "FAIL"
    out.write(f"{status}  dt-positivity          dt={dt:.6g}, slack={slack:.6g}\n")
    status = "PASS" if ok_band else "FAIL"
    out.write(f"{status}  dt-clamp-band          dt={dt:.6g} < 0.5\n")
    for line in report.machine_lines():
        out.write(line + "\n")
    out.write(f"check.dt-positivity={'pass' if ok_dt else 'fail'} check.dt-positivity.slack={slack!r}\n")
    out.write(f"check.dt-clamp-band={'pass' if ok_band else 'fail'}\n")
    out.write(f"params_hash={params_hash(cfg.params)}\n")
    return report.passed and ok_dt and ok_band


def cmd_check(args) -> int:
    cfg = _resolve_config(args)
    return 0 if _check(cfg) else 1


# ---------------------------------------------------------------------------
# statistics writers (shared by simulate and analyze so a stored ensemble
# reproduces the in-run files byte for byte)


def _quantiles(x, q):
    return np.quantile(x, q, axis=0)


def write_statistics(out_dir: str, meta: dict, report_times, states) -> dict:
    """summary.txt, density_total.txt, extinction.txt from snapshot arrays.
    Returns the density columns (reused by the figure renderers)."""
    os.makedirs(out_dir, exist_ok=True)
    M = states.shape[0]
    total = states[:, :, 0] + states[:, :, 1]
    cols: dict[str, np.ndarray] = {"t": report_times}
    for i, tag in enumerate(("J", "A", "E", "P")):
        comp = states[:, :, i]
        cols[f"mean_{tag}"] = comp.mean(axis=0)
        cols[f"se_{tag}"] = comp.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(len(report_times))
        p10, p50, p90 = _quantiles(comp, [0.1, 0.5, 0.9])
        cols[f"p10_{tag}"], cols[f"p50_{tag}"], cols[f"p90_{tag}"] = p10, p50, p90
    cols["mean_total"] = total.mean(axis=0)
    cols["se_total"] = total.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(len(report_times))
    p10, p50, p90 = _quantiles(total, [0.1, 0.5, 0.9])
    cols["p10_total"], cols["p50_total"], cols["p90_total"] = p10, p50, p90
    threshold = float(meta["extinction_threshold"])
    cols["extinct_frac"] = (total < threshold).mean(axis=0)
    write_table(os.path.join(out_dir, "summary.txt"), meta, cols)

    hi = float(total.max()) * 1.0000001 + 1e-9
    edges = np.linspace(0.0, hi, 41)
    t_col, lo_col, hi_col, cnt_col, den_col = [], [], [], [], []
    for r, t in enumerate(report_times):
        h = histogram(total[:, r], bins=edges)
        t_col.append(np.full(40, t))
        lo_col.append(h.edges[:-1])
        hi_col.append(h.edges[1:])
        cnt_col.append(h.counts)
        den_col.append(h.density)
    density_cols = {
        "t": np.concatenate(t_col),
        "bin_lo": np.concatenate(lo_col),
        "bin_hi": np.concatenate(hi_col),
        "count": np.concatenate(cnt_col),
        "density": np.concatenate(den_col),
    }
    write_table(os.path.join(out_dir, "density_total.txt"), meta, density_cols)

    ext_cols = {"t": report_times}
    k = (total < threshold).sum(axis=0)
    ext_cols["n_extinct"] = k
    ext_cols["prob"] = k / M
    lohi = np.array([wilson_interval(int(ki), M) for ki in k])
    ext_cols["ci_lo"], ext_cols["ci_hi"] = lohi[:, 0], lohi[:, 1]
    hdr = dict(meta)
    hdr["threshold"] = threshold
    write_table(os.path.join(out_dir, "extinction.txt"), hdr, ext_cols)
    return density_cols


def _ensemble_meta(cfg: ScenarioConfig, ens: Ensemble) -> dict:
    return {
        "params_hash": ens.params_hash,
        "master_seed": ens.master_seed,
        "n_paths": ens.n_paths,
        "dt": ens.grid.dt,
        "horizon": ens.grid.horizon,
        "burn_in_years": cfg.burn_in,
        "extinction_threshold": ens.extinction_threshold,
        "carrying_capacity": cfg.params.eco.carrying_capacity,
        "scheme_tag": "exponential",
    }


def _run_point(cfg: ScenarioConfig, run_dir: str, plots: bool) -> float:
    """Simulate one scenario point, write all artifacts, and return the
    fraction of paths ending below the low-biomass cut."""
    os.makedirs(run_dir, exist_ok=True)
    grid = cfg.grid()
    ens = run_ensemble(
        cfg.params,
        cfg.x0,
        grid,
        cfg.n_paths,
        cfg.master_seed,
        schedule=cfg.schedule(),
        report_every=cfg.report_every,
        record_paths=cfg.record_paths,
        threads=cfg.threads,
        extinction_threshold=cfg.effective_threshold(),
    )
    meta = _ensemble_meta(cfg, ens)

    with open(os.path.join(run_dir, "config.ini"), "w") as f:
        f.write(render_config(cfg))
    np.savez_compressed(
        os.path.join(run_dir, "ensemble.npz"),
        report_times=ens.report_times,
        states=ens.states,
        final_states=ens.final_states,
        min_biomass=ens.min_biomass,
        meta=json.dumps(meta),
    )
    density = write_statistics(run_dir, meta, ens.report_times, ens.states)

    if cfg.record_paths > 0:
        paths_dir = os.path.join(run_dir, "paths")
        os.makedirs(paths_dir, exist_ok=True)
        for rec in ens.records:
            write_path_record(
                rec, os.path.join(paths_dir, f"path_{rec.seed.trajectory_index:05d}.txt")
            )

    low_cut = LOW_MASS_FRACTION_OF_K * cfg.params.eco.carrying_capacity
    final_total = ens.final_states[:, 0] + ens.final_states[:, 1]
    low_frac = float((final_total < low_cut).mean())
    with open(os.path.join(run_dir, "manifest.txt"), "w") as f:
        for k, v in meta.items():
            f.write(f"{k}={v}\n")
        f.write(f"kelpsim_version={__version__}\n")
        f.write(f"low_mass_cut={low_cut!r}\n")
        f.write(f"low_mass_fraction={low_frac!r}\n")
        f.write(f"record_paths={len(ens.records)}\n")
        f.write(f"dropped_jumps={int(ens.dropped_jumps.sum())}\n")

    if plots:
        from . import report as report_mod
        from .tables import read_table

        _, summary = read_table(os.path.join(run_dir, "summary.txt"))
        report_mod.render_ensemble_figures(run_dir, summary, density, ens.records)
    return low_frac


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    if not _check(cfg, out=sys.stderr):
        raise ValidationFailure("configuration failed validation; see report above")
    run_dir = cfg.out_dir
    _run_point(cfg, run_dir, plots=not args.no_plots)
    print(f"wrote {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if not cfg.sweep_parameter:
        raise ValidationFailure("config has no [sweep] section")
    if not _check(cfg, out=sys.stderr):
        raise ValidationFailure("configuration failed validation; see report above")
    base = cfg.out_dir
    os.makedirs(base, exist_ok=True)
    rows = []
    points = []
    for value in cfg.sweep_values:
        swept = apply_sweep_value(cfg, cfg.sweep_parameter, value)
        swept.out_dir = base
        key = cfg.sweep_parameter.split(".")[-1]
        run_dir = os.path.join(base, f"point_{key}={value:g}")
        low_frac = _run_point(swept, run_dir, plots=not args.no_plots)
        rows.append((value, low_frac, params_hash(swept.params)))
        if not args.no_plots:
            from .tables import read_table

            _, density = read_table(os.path.join(run_dir, "density_total.txt"))
            points.append((value, density, low_frac))
    write_table(
        os.path.join(base, "sweep_summary.txt"),
        {
            "parameter": cfg.sweep_parameter,
            "master_seed": cfg.master_seed,
            "n_paths": cfg.n_paths,
            "low_mass_cut": LOW_MASS_FRACTION_OF_K * cfg.params.eco.carrying_capacity,
        },
        {
            "value": [r[0] for r in rows],
            "low_mass_fraction": [r[1] for r in rows],
            "params_hash": [r[2] for r in rows],
        },
    )
    if not args.no_plots:
        from . import report as report_mod

        report_mod.render_sweep_figure(base, cfg.sweep_parameter, points)
    print(f"wrote {base}")
    return 0


def cmd_converge(args) -> int:
    cfg = _resolve_config(args)
    n_paths = (
        cfg.n_paths
        if (args.paths is not None or _env("PATHS", int) is not None)
        else args.m
    )
    res = strong_error_curve(
        cfg.params,
        cfg.x0,
        args.horizon,
        args.base_steps,
        args.levels,
        n_paths,
        cfg.master_seed,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    header = {
        "params_hash": params_hash(cfg.params),
        "master_seed": cfg.master_seed,
        "n_paths": res.n_paths,
        "reference_dt": res.reference_dt,
        "dropped_jumps": res.dropped_jumps,
        "order_sup_J": res.orders_sup[0],
        "order_sup_A": res.orders_sup[1],
        "order_sup_E": res.orders_sup[2],
        "order_terminal_J": res.orders_terminal[0],
        "order_terminal_A": res.orders_terminal[1],
        "order_terminal_E": res.orders_terminal[2],
    }
    write_table(
        os.path.join(cfg.out_dir, "error_table.txt"),
        header,
        {
            "level": np.arange(len(res.dts)),
            "dt": res.dts,
            "errJ": res.sup_errors[:, 0],
            "seJ": res.sup_ses[:, 0],
            "errA": res.sup_errors[:, 1],
            "seA": res.sup_ses[:, 1],
            "errE": res.sup_errors[:, 2],
            "seE": res.sup_ses[:, 2],
            "errJ_T": res.terminal_errors[:, 0],
            "errA_T": res.terminal_errors[:, 1],
            "errE_T": res.terminal_errors[:, 2],
        },
    )
    if not args.no_plots:
        from . import report as report_mod

        report_mod.render_strong_error_figure(cfg.out_dir, res)
    print(f"wrote {cfg.out_dir}/error_table.txt")
    return 0


def cmd_ibm(args) -> int:
    cfg = _resolve_config(args)
    n_values = [int(v) for v in args.n_list.split(",")]
    ibm_cfg = IbmConfig(
        n=n_values[0], gamma=args.gamma, params=cfg.params, time_rescale=True
    )
    x0 = IbmState(j=args.j0, a=args.a0, e=args.e0)
    res = meanfield_error(
        ibm_cfg,
        x0,
        n_values,
        args.replicas,
        args.horizon,
        cfg.master_seed,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_table(
        os.path.join(cfg.out_dir, "distance_table.txt"),
        {
            "params_hash": params_hash(cfg.params),
            "master_seed": cfg.master_seed,
            "replicas": args.replicas,
            "gamma": args.gamma,
            "horizon": args.horizon,
            "mutation_clamped": res.clamped,
        },
        {
            "n": res.n_values,
            "dist_j": res.mean_gaps[:, 0],
            "se_j": res.mean_gap_ses[:, 0],
            "dist_a": res.mean_gaps[:, 1],
            "se_a": res.mean_gap_ses[:, 1],
            "dist_e": res.mean_gaps[:, 2],
            "se_e": res.mean_gap_ses[:, 2],
            "vdist_j": res.var_gaps[:, 0],
            "vdist_a": res.var_gaps[:, 1],
            "vdist_e": res.var_gaps[:, 2],
            "mean_events": res.event_means,
        },
    )
    if args.sample_paths > 0:
        from .ibm import simulate_ibm, write_ibm_path
        from .noise import SeedSpec

        for n in n_values:
            cfg_n = IbmConfig(n=n, gamma=args.gamma, params=cfg.params, time_rescale=True)
            for i in range(args.sample_paths):
                path = simulate_ibm(
                    cfg_n, x0, args.horizon, SeedSpec(cfg.master_seed, i), log_events=True
                )
                write_ibm_path(
                    path,
                    cfg_n,
                    SeedSpec(cfg.master_seed, i),
                    os.path.join(cfg.out_dir, f"ibm_path_n{n}_r{i}.txt"),
                )
    if not args.no_plots:
        from . import report as report_mod

        report_mod.render_meanfield_figure(cfg.out_dir, res)
    print(f"wrote {cfg.out_dir}/distance_table.txt")
    return 0


def cmd_analyze(args) -> int:
    run_dir = args.run_dir
    bundle = np.load(os.path.join(run_dir, "ensemble.npz"), allow_pickle=False)
    meta = json.loads(str(bundle["meta"]))
    out_dir = args.out or os.path.join(run_dir, "reanalysis")
    density = write_statistics(out_dir, meta, bundle["report_times"], bundle["states"])
    if not args.no_plots:
        from . import report as report_mod
        from .tables import read_table

        _, summary = read_table(os.path.join(out_dir, "summary.txt"))
        report_mod.render_ensemble_figures(out_dir, summary, density)
    print(f"wrote {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def _add_common(sp, with_paths=True):
    sp.add_argument("--config", help="scenario config file (INI)")
    sp.add_argument("--preset", choices=PRESET_NAMES, help="built-in scenario")
    sp.add_argument("--seed", type=int, help="master seed override")
    sp.add_argument("--out", help="output directory override")
    if with_paths:
        sp.add_argument("--paths", type=int, help="ensemble size override")
    sp.add_argument("--threads", type=int, help="worker count (0 = auto)")
    sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kelpsim",
        description="coupled kelp / harvester-compliance / price simulator",
    )
    ap.add_argument("--version", action="version", version=f"kelpsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="validate a configuration")
    _add_common(sp, with_paths=False)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("simulate", help="run one ensemble and write reports")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run every sweep point of the config")
    _add_common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("converge", help="coupled strong-error study")
    _add_common(sp)
    sp.add_argument("--horizon", type=float, default=2.0)
    sp.add_argument("--base-steps", type=int, default=16)
    sp.add_argument("--levels", type=int, default=4)
    sp.add_argument("--m", type=int, default=2000, help="coupled paths")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("ibm", help="agent-based chain vs mean-field limit")
    _add_common(sp, with_paths=False)
    sp.add_argument("--n-list", default="50,200,800")
    sp.add_argument("--replicas", type=int, default=2000)
    sp.add_argument("--horizon", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--j0", type=float, default=0.5)
    sp.add_argument("--a0", type=float, default=0.3)
    sp.add_argument("--e0", type=float, default=0.5)
    sp.add_argument(
        "--sample-paths", type=int, default=0, help="replica trajectories to persist per n"
    )
    sp.set_defaults(func=cmd_ibm)

    sp = sub.add_parser("analyze", help="recompute statistics from a stored run")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--out", help="output directory (default: <run>/reanalysis)")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, ParameterError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
