"""Command-line entry points: simulate, equilibrium, ode, check, scan, sweep.

Exit codes are a stable contract: 0 on success, 2 for configuration or
usage errors, 3 for runtime failures (solver breakdown, failed invariant).
Every output file starts with provenance headers including the config hash;
reruns with identical inputs produce bit-identical files (no timestamps,
fixed float formatting).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import diagnostics as diag
from .config import (
    ScenarioConfig,
    build_initial_condition,
    load_scenario,
)
from .equilibrium import (
    constant_a_equilibrium,
    integrate_homogeneous_ode,
    solve_equilibrium,
)
from .errors import (
    ConfigError,
    DiagnosticsError,
    ParameterError,
    PolarsimError,
    SolverError,
)
from .grid import Grid, second_eigenvalue
from .kinetics import Model4Params, model_name
from .linearization import scan_degeneracy
from .solver import run, write_snapshot

__all__ = ["main"]

FMT = "%.17g"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fmt(x: float) -> str:
    return FMT % x


# -- shared argument groups --------------------------------------------


def _add_model4_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--D", type=float, default=4.0, help="diffusivity of the fast species (default 4)")
    sp.add_argument("--tau", type=float, default=1.0, help="time-scale ratio (default 1)")
    sp.add_argument("--b", type=float, default=1.0, help="activation scale (default 1)")
    sp.add_argument("--gamma", type=float, default=1.0, help="Hill gain (default 1)")
    sp.add_argument("--k", type=float, default=1.0, help="Hill half-saturation (default 1)")
    sp.add_argument("--k0", type=float, default=0.1, help="basal activation (default 0.1)")
    sp.add_argument("--delta", type=float, default=1.0, help="deactivation rate (default 1)")
    sp.add_argument("--m", type=float, default=2.0, help="Hill exponent (default 2)")
    sp.add_argument("--lam", type=float, default=1.0, help="conserved mass (default 1)")


def _params_from_args(args: argparse.Namespace) -> Model4Params:
    return Model4Params(
        D=args.D,
        tau=args.tau,
        b=args.b,
        gamma=args.gamma,
        k=args.k,
        k0=args.k0,
        delta=args.delta,
        m=args.m,
    )


def _add_mu2_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--length", type=float, default=1.0, help="interval length for mu_j (default 1)")
    sp.add_argument("--n", type=int, default=256, help="grid points for discrete mu_j (default 256)")
    sp.add_argument(
        "--mu2",
        choices=("continuum", "discrete"),
        default="continuum",
        help="use the continuum (j pi/L)^2 eigenvalues or their grid counterparts",
    )


# -- condition reporting -----------------------------------------------


def _condition_reports(
    p: Model4Params,
    lam: float,
    mu2: float,
    mu2_mode: str,
    c4: float,
    sigma: float | None,
) -> list[diag.ConditionReport]:
    return [
        diag.check_coupling_condition(p, mu2, mu2_mode),
        diag.check_contraction_condition(p, lam, mu2, c4, mu2_mode),
        diag.check_sigma_condition(p, lam, mu2, sigma, c4, mu2_mode),
    ]


def _condition_lines(reports: list[diag.ConditionReport]) -> list[str]:
    lines = ["# columns = name satisfied lhs rhs extras"]
    for r in reports:
        extras = [f"mu2={_fmt(r.mu2)}", f"mu2_mode={r.mu2_mode}"]
        if r.C4 is not None:
            extras.append(f"c4={_fmt(r.C4)}")
        if r.sigma is not None:
            extras.append(f"sigma={_fmt(r.sigma)}")
            extras.append(f"sigma_source={r.sigma_source}")
        if r.alt_lhs is not None:
            extras.append(f"alt_lhs={_fmt(r.alt_lhs)}")
            extras.append(f"alt_satisfied={'yes' if r.alt_satisfied else 'no'}")
        lines.append(
            f"{r.name} {'yes' if r.satisfied else 'no'} {_fmt(r.lhs)} {_fmt(r.rhs)} "
            + " ".join(extras)
        )
    return lines


# -- scenario execution (simulate + sweep worker) ----------------------


def run_scenario(scn: ScenarioConfig) -> tuple[int, dict]:
    """Execute one scenario, writing all outputs under scn.out_dir.

    Returns (exit code, summary metrics).  Solver failures preserve the
    partial diagnostics table and the last recorded state.
    """
    p = scn.params
    out = scn.out_dir
    out.mkdir(parents=True, exist_ok=True)
    u0, v0 = build_initial_condition(scn)

    meta = {
        "config": scn.config_hash,
        "model": model_name(p),
        "params": repr(p),
        "scheme": scn.solver.scheme,
        "stride": scn.solver.stride,
        "c4": _fmt(scn.c4),
        "sigma": "derived" if scn.sigma is None else _fmt(scn.sigma),
        "mu2_mode": scn.mu2_mode,
        "seed": "none" if scn.seed is None else str(scn.seed),
    }

    record_index = [0]

    def on_record(state, rec) -> None:
        idx = record_index[0]
        record_index[0] += 1
        if scn.snapshot_every > 0 and idx % scn.snapshot_every == 0:
            write_snapshot(out / f"state_{idx:05d}.txt", state, p, meta)

    metrics: dict = {"status": "ok"}
    try:
        result = run((u0, v0), p, scn.solver, on_record=on_record)
    except SolverError as exc:
        records = getattr(exc, "partial_records", [])
        history = getattr(exc, "partial_history", None)
        if records:
            diag.write_diagnostics_table(out / "diagnostics.txt", records, meta)
        if history is not None and len(history) > 0:
            write_snapshot(out / "last_state.txt", history.state(len(history) - 1), p, meta)
        metrics["status"] = f"failed: {exc}"
        _write_summary(out / "summary.txt", meta, [("status", metrics["status"])])
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, metrics

    records = result.records
    meta_run = dict(meta)
    meta_run["lam"] = _fmt(result.lam0)
    meta_run["dt"] = _fmt(result.dt)
    meta_run["n_steps"] = str(result.n_steps)
    diag.write_diagnostics_table(out / "diagnostics.txt", records, meta_run)
    write_snapshot(out / "final_state.txt", result.final_state, p, meta_run)

    pairs: list[tuple[str, str]] = [
        ("model", model_name(p)),
        ("lam", _fmt(result.lam0)),
        ("dt", _fmt(result.dt)),
        ("n_steps", str(result.n_steps)),
        ("n_records", str(len(records))),
    ]
    if result.equilibrium is not None:
        pairs.append(("u_star", _fmt(result.equilibrium.u_star)))
        pairs.append(("v_star", _fmt(result.equilibrium.v_star)))

    lam_drift = max(abs(r.lam - result.lam0) for r in records) / result.lam0
    final = records[-1]
    pairs.append(("mass_drift_rel_max", _fmt(lam_drift)))
    pairs.append(("u_dev_linf_final", _fmt(final.u_dev_linf)))
    pairs.append(("w_dev_l2_final", _fmt(final.w_dev_l2)))
    metrics["u_dev_linf_final"] = final.u_dev_linf
    metrics["mass_drift_rel_max"] = lam_drift

    rate_str = "n/a"
    metrics["decay_rate"] = math.nan
    try:
        est = diag.estimate_decay_rate(records, "u_dev_linf")
        rate_str = _fmt(est.rate)
        metrics["decay_rate"] = est.rate
        pairs.append(("decay_rate_u_dev_linf", rate_str))
        pairs.append(("decay_window_converged", "yes" if est.converged else "no"))
    except DiagnosticsError:
        pairs.append(("decay_rate_u_dev_linf", rate_str))

    exit_code = EXIT_OK
    try:
        om = diag.omega_limit_check(
            result.final_state, p, result.lam0, tol=1e-6, equilibrium=result.equilibrium
        )
        pairs.append(("mass_line_gap", _fmt(om.mass_gap)))
        pairs.append(("mass_line_check", "pass"))
        if not math.isnan(om.u_gap):
            pairs.append(("omega_u_gap", _fmt(om.u_gap)))
            pairs.append(("omega_v_gap", _fmt(om.v_gap)))
            pairs.append(("omega_converged", "yes" if om.converged else "no"))
    except DiagnosticsError as exc:
        pairs.append(("mass_line_check", f"FAIL: {exc}"))
        metrics["status"] = "failed: mass conservation"
        exit_code = EXIT_RUNTIME

    pairing = diag.deviation_pairing_integral(result.history, p, result.lam0)
    pairs.append(("pairing_integral_final", _fmt(pairing.running[-1])))
    pairs.append(("pairing_integral_sup", _fmt(pairing.sup)))
    vsup = diag.v_norm_sup(result.history, result.lam0)
    pairs.append(("v_norm_sup_from_t1", _fmt(vsup) if not math.isnan(vsup) else "n/a"))

    if isinstance(p, Model4Params):
        mu2 = second_eigenvalue(scn.grid, scn.mu2_mode)
        reports = _condition_reports(p, result.lam0, mu2, scn.mu2_mode, scn.c4, scn.sigma)
        lines = ["# polarsim conditions", f"# config = {scn.config_hash}"]
        lines += _condition_lines(reports)
        (out / "conditions.txt").write_text("\n".join(lines) + "\n")
        for r in reports:
            pairs.append((f"condition_{r.name}", "pass" if r.satisfied else "fail"))
    else:
        (out / "conditions.txt").write_text(
            "# polarsim conditions\n"
            f"# config = {scn.config_hash}\n"
            "# the sufficient conditions are defined for the Hill-kinetics model only\n"
        )

    pairs.append(("status", metrics["status"]))
    _write_summary(out / "summary.txt", meta, pairs)
    return exit_code, metrics


def _write_summary(path: Path, meta: dict, pairs: list[tuple[str, str]]) -> None:
    lines = ["# polarsim summary", f"# config = {meta['config']}"]
    for key, val in pairs:
        lines.append(f"{key} = {val}")
    path.write_text("\n".join(lines) + "\n")


# -- subcommands -------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    scn = load_scenario(
        args.config, out=args.out, seed=args.seed, c4=args.c4, sigma=args.sigma, mu2=args.mu2
    )
    code, metrics = run_scenario(scn)
    if code == EXIT_OK:
        print(f"completed; outputs in {scn.out_dir}")
        print(f"status = {metrics['status']}")
    return code


def cmd_equilibrium(args: argparse.Namespace) -> int:
    p = _params_from_args(args)
    trace: list = []
    eq = solve_equilibrium(p, args.lam, trace=trace)
    print(f"model = {model_name(p)}")
    print(f"lam = {_fmt(args.lam)}")
    print(f"u_star = {_fmt(eq.u_star)}")
    print(f"v_star = {_fmt(eq.v_star)}")
    print(f"residual = {_fmt(eq.residual)}")
    if p.gamma == 0.0:
        closed = constant_a_equilibrium(p.a0, p.tau, p.delta, args.lam)
        print(f"constant_a_u_star = {_fmt(closed)}")
        print(f"constant_a_gap = {_fmt(abs(closed - eq.u_star))}")
    print("# bisection trace: iter lo hi gap_mid")
    for it, lo, hi, gm in trace:
        print(f"{it} {_fmt(lo)} {_fmt(hi)} {_fmt(gm)}")
    return EXIT_OK


def cmd_ode(args: argparse.Namespace) -> int:
    p = _params_from_args(args)
    u0 = args.u0 if args.u0 is not None else 0.5 * args.lam
    traj = integrate_homogeneous_ode(p, args.lam, u0, args.t_end, args.dt)
    print(f"# model = {model_name(p)}")
    print(f"# lam = {_fmt(args.lam)}  U0 = {_fmt(u0)}  dt = {_fmt(traj.dt)}")
    print("# columns = t U V G")
    n = len(traj.t)
    stride = max(1, n // 200)
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    for i in idx:
        print(f"{_fmt(traj.t[i])} {_fmt(traj.U[i])} {_fmt(traj.V[i])} {_fmt(traj.G[i])}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    p = _params_from_args(args)
    g = Grid.interval(args.length, args.n)
    mu2 = second_eigenvalue(g, args.mu2)
    reports = _condition_reports(p, args.lam, mu2, args.mu2, args.c4, args.sigma)
    for line in _condition_lines(reports):
        print(line)
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    p = _params_from_args(args)
    g = Grid.interval(args.length, args.n)
    if args.mu2 == "continuum":
        from .grid import neumann_eigenvalue

        mu_j = neumann_eigenvalue(g, args.j)
    else:
        from .grid import discrete_neumann_eigenvalue

        mu_j = discrete_neumann_eigenvalue(g, args.j)
    reports = scan_degeneracy(
        p, args.lam, args.j, mu_j, args.param, args.lo, args.hi, args.samples
    )
    print(f"# scan param = {args.param}  j = {args.j}  mu_j = {_fmt(mu_j)} ({args.mu2})")
    print(f"# range = [{_fmt(args.lo)}, {_fmt(args.hi)}]  samples = {args.samples}")
    if not reports:
        print("no degeneracy points found")
        return EXIT_OK
    print("# columns = root residual bracket_lo bracket_hi")
    for r in reports:
        print(
            f"{_fmt(r.root)} {_fmt(r.residual_at_root)} "
            f"{_fmt(r.bracket[0])} {_fmt(r.bracket[1])}"
        )
    return EXIT_OK


def _sweep_worker(scn: ScenarioConfig) -> tuple[int, dict]:
    try:
        return run_scenario(scn)
    except PolarsimError as exc:
        return EXIT_RUNTIME, {"status": f"failed: {exc}"}


def cmd_sweep(args: argparse.Namespace) -> int:
    tokens = [tok.strip() for tok in args.values.split(",") if tok.strip()]
    if not tokens:
        raise ConfigError("--values must list at least one value")
    if len(set(tokens)) != len(tokens):
        raise ConfigError("--values contains duplicates")
    if "." not in args.param:
        raise ConfigError(f"--param must look like section.key, got {args.param!r}")
    section, key = args.param.split(".", 1)

    template = Path(args.config)
    if not template.exists():
        raise ConfigError(f"config file {template} does not exist")
    base_text = template.read_text()
    root = Path(args.out) if args.out is not None else Path("sweep_out")
    root.mkdir(parents=True, exist_ok=True)

    # materialize and validate every scenario before launching any run, so
    # structural config errors abort the sweep as a whole (exit 2)
    jobs: list[tuple[str, float, ScenarioConfig]] = []
    for tok in tokens:
        try:
            value = float(tok)
        except ValueError:
            raise ConfigError(f"sweep value {tok!r} is not a number") from None
        subdir = root / f"{section}.{key}={tok}"
        subdir.mkdir(parents=True, exist_ok=True)
        cfg_path = subdir / "scenario.cfg"
        cfg_path.write_text(_override_config_text(base_text, section, key, tok))
        scn = load_scenario(
            cfg_path, out=str(subdir), seed=args.seed, c4=args.c4, sigma=args.sigma, mu2=args.mu2
        )
        jobs.append((tok, value, scn))

    env_cap = os.environ.get("POLARSIM_THREADS", "").strip()
    workers = len(jobs)
    if env_cap:
        try:
            workers = max(1, min(workers, int(env_cap)))
        except ValueError:
            raise ConfigError(f"POLARSIM_THREADS = {env_cap!r} is not an integer") from None
    else:
        workers = max(1, min(workers, os.cpu_count() or 1))

    results: dict[str, tuple[int, dict]] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {tok: pool.submit(_sweep_worker, scn) for tok, _, scn in jobs}
        for tok, fut in futures.items():
            results[tok] = fut.result()

    lines = [
        "# polarsim sweep summary",
        f"# param = {section}.{key}",
        "# columns = value status decay_rate u_dev_linf_final",
    ]
    n_ok = 0
    for tok, value, _ in sorted(jobs, key=lambda job: job[1]):
        code, metrics = results[tok]
        status = "ok" if code == EXIT_OK else "failed"
        if code == EXIT_OK:
            n_ok += 1
        rate = metrics.get("decay_rate", math.nan)
        dev = metrics.get("u_dev_linf_final", math.nan)
        lines.append(f"{tok} {status} {_fmt(rate)} {_fmt(dev)}")
    (root / "sweep_summary.txt").write_text("\n".join(lines) + "\n")
    print(f"sweep finished: {n_ok}/{len(jobs)} runs succeeded; summary in {root}")
    return EXIT_OK if n_ok > 0 else EXIT_RUNTIME


def _override_config_text(text: str, section: str, key: str, value: str) -> str:
    """Return config text with [section] key set to value, appending if new."""
    import configparser
    import io

    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed template config: {exc}") from None
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, key, value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# -- parser ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarsim",
        description="Numerical laboratory for mass-conserved reaction-diffusion systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one configured scenario")
    sp.add_argument("--config", required=True, help="scenario file (INI format)")
    sp.add_argument("--out", help="output directory (overrides [output] dir)")
    sp.add_argument("--seed", type=int, help="override the random-IC seed")
    sp.add_argument("--c4", type=float, help="override the C4 constant")
    sp.add_argument("--sigma", type=float, help="override sigma (default: derived)")
    sp.add_argument("--mu2", choices=("continuum", "discrete"), help="override mu2 mode")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("equilibrium", help="solve the homogeneous balance equation")
    _add_model4_flags(sp)
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("ode", help="integrate the well-mixed reduction")
    _add_model4_flags(sp)
    sp.add_argument("--u0", type=float, default=None, help="initial U (default lam/2)")
    sp.add_argument("--t-end", dest="t_end", type=float, default=50.0)
    sp.add_argument("--dt", type=float, default=0.01)
    sp.set_defaults(func=cmd_ode)

    sp = sub.add_parser("check", help="evaluate the sufficient convergence conditions")
    _add_model4_flags(sp)
    _add_mu2_flags(sp)
    sp.add_argument("--c4", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, default=None)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("scan", help="scan a parameter for mode degeneracy")
    _add_model4_flags(sp)
    _add_mu2_flags(sp)
    sp.add_argument("--j", type=int, default=2, help="mode index (default 2)")
    sp.add_argument("--param", choices=("D", "lambda", "delta"), required=True)
    sp.add_argument("--lo", type=float, required=True)
    sp.add_argument("--hi", type=float, required=True)
    sp.add_argument("--samples", type=int, default=200)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("sweep", help="run a scenario across parameter values")
    sp.add_argument("--config", required=True, help="template scenario file")
    sp.add_argument("--param", required=True, help="section.key to vary, e.g. model.d")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--out", help="sweep root directory (default sweep_out)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--c4", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--mu2", choices=("continuum", "discrete"))
    sp.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolarsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
