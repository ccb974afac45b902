"""Command-line front end: one subcommand per experiment, CSV + manifest out.

Every subcommand writes a data file (CSV by default, JSON with --format json)
plus a JSON run manifest that records the full parameter set, tool version,
and wall time.  Runs with equal parameters and seeds are bit-identical.

Exit codes: 0 success, 1 numerical/runtime failure, 2 argument errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import LyapunovConfig, lyapunov_fundamental, lyapunov_map, lyapunov_reset, poincare_section
from .dynamics import IntegrationError, IntegratorConfig
from .levelstats import brody_fit, unfold
from .model import (
    CanonicalCoords,
    ClassicalState,
    EnergyShellSpec,
    ModelParams,
    canonical_to_zeta,
    solve_m_for_energy,
)
from .quantum import (
    ProtocolSpec,
    ResourceLimitError,
    build_basis,
    build_hamiltonian,
    coherent_state,
    diagonalize,
    evolve,
    husimi_grid,
    otoc_ed,
    parity_blocks,
    quadratic_response_protocol,
)
from .twa import TwaConfig, otoc_growth_fit, power_law_fit, twa_observable, twa_otoc
from . import output


def _parse_grid(text: str):
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except Exception:
        raise argparse.ArgumentTypeError(f"grid must look like 20x20, got {text!r}")


def _parse_window(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
        return lo, hi
    except Exception:
        raise argparse.ArgumentTypeError(f"window must look like 1.0,3.5, got {text!r}")


def _parse_state_spec(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"state must be rho0,theta_s,theta_m,m (m may be 'auto'), got {text!r}"
        )
    rho0, theta_s, theta_m = (float(v) for v in parts[:3])
    m = parts[3].strip()
    return rho0, theta_s, theta_m, (None if m == "auto" else float(m))


def _model(args) -> ModelParams:
    return ModelParams(gn=args.gn, q=args.q, r=args.r, n_atoms=args.n_atoms)


def _resolve_state(args, params: ModelParams):
    """--state with m='auto' solved on the --energy shell."""
    rho0, theta_s, theta_m, m = args.state
    if m is None:
        if args.energy is None:
            raise ValueError("--state with m=auto requires --energy")
        m = solve_m_for_energy(rho0, theta_s, theta_m, args.energy, params)
        if m is None:
            raise ValueError(
                f"point (rho0={rho0}, theta_s={theta_s}) is outside the "
                f"E={args.energy} shell"
            )
    coords = CanonicalCoords(rho0, theta_s, m, theta_m)
    return canonical_to_zeta(coords), coords


def _times(args) -> np.ndarray:
    return np.linspace(0.0, args.t_max, args.t_points)


def _params_dict(args, params, **extra) -> dict:
    payload = {
        "gn": params.gn,
        "q": params.q,
        "r": params.r,
        "n_atoms": params.n_atoms,
        "seed": getattr(args, "seed", None),
    }
    payload.update(extra)
    return {k: v for k, v in payload.items() if v is not None}


def _out_path(args, suffix: str) -> Path:
    return Path(str(args.out) + suffix)


def _emit(args, command: str, params: dict, columns, rows, extra_outputs=()):
    """Write the data file (+ manifest) and report what was written."""
    outputs = []
    if args.format == "json":
        data_path = _out_path(args, ".json")
        payload = {"columns": list(columns), "rows": [[_jsonable(v) for v in row] for row in rows]}
        output.write_json(data_path, command, params, payload)
    else:
        data_path = _out_path(args, ".csv")
        output.write_csv(data_path, command, params, columns, rows)
    outputs.append(str(data_path))
    outputs.extend(str(p) for p in extra_outputs)
    return data_path, outputs


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def _finish(args, command: str, params: dict, outputs, started: float) -> int:
    manifest = output.RunManifest.create(command, params, time.time() - started, outputs)
    manifest_path = _out_path(args, ".manifest.json")
    manifest.write(manifest_path)
    for path in list(outputs) + [str(manifest_path)]:
        print(path)
    return 0


def _cmd_poincare(args) -> int:
    started = time.time()
    params = _model(args)
    if args.state is not None:
        state, coords = _resolve_state(args, params)
        initials = [state]
        state_info = {"state": [coords.rho0, coords.theta_s, coords.theta_m, coords.m]}
    else:
        if args.energy is None:
            raise ValueError("poincare needs --state or --energy with --grid")
        shell = EnergyShellSpec(args.energy, args.grid)
        initials = []
        for rho0 in shell.rho0_values():
            for theta_s in shell.theta_s_values():
                m = solve_m_for_energy(rho0, theta_s, 0.0, args.energy, params)
                if m is not None:
                    initials.append(canonical_to_zeta(CanonicalCoords(rho0, theta_s, m, 0.0)))
        state_info = {"grid": list(args.grid), "n_initials": len(initials)}
    meta = _params_dict(
        args, params, energy=args.energy, t_max=args.t_max, direction=args.direction, **state_info
    )
    section = poincare_section(initials, args.t_max, params, direction=args.direction)
    _, outputs = _emit(args, "poincare", meta, ("traj_id", "rho0", "theta_s"), output.section_rows(section))
    return _finish(args, "poincare", meta, outputs, started)


def _cmd_lyapunov(args) -> int:
    started = time.time()
    params = _model(args)
    state, coords = _resolve_state(args, params)
    cfg = LyapunovConfig(t_total=args.t_max, t_min=args.t_min, seed=args.seed)
    runner = lyapunov_fundamental if args.method == "fundamental" else lyapunov_reset
    est = runner(state, cfg, params)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        t_max=args.t_max,
        t_min=args.t_min,
        method=est.method,
        state=[coords.rho0, coords.theta_s, coords.theta_m, coords.m],
    )
    _, outputs = _emit(
        args, "lyapunov", meta, ("method", "lambda", "stderr"), [(est.method, est.lam, est.std_error)]
    )
    return _finish(args, "lyapunov", meta, outputs, started)


def _cmd_lyapunov_map(args) -> int:
    started = time.time()
    params = _model(args)
    shell = EnergyShellSpec(args.energy, args.grid)
    cfg = LyapunovConfig(t_total=args.t_max, t_min=args.t_min, seed=args.seed)
    mp = lyapunov_map(shell, cfg, params, method=args.method)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        grid=list(args.grid),
        t_max=args.t_max,
        t_min=args.t_min,
        method=args.method,
    )
    extra = []
    if args.pgm:
        extra.append(output.write_pgm(_out_path(args, ".pgm"), mp.lam))
    _, outputs = _emit(
        args,
        "lyapunov-map",
        meta,
        ("i", "j", "rho0", "theta_s", "m", "lambda", "stderr"),
        output.map_rows(mp),
        extra,
    )
    return _finish(args, "lyapunov-map", meta, outputs, started)


def _cmd_spectrum(args) -> int:
    started = time.time()
    params = _model(args)
    basis = build_basis(params.n_atoms)
    eig = diagonalize(parity_blocks(build_hamiltonian(basis, params)), want_vectors=False)
    meta = _params_dict(args, params)
    _, outputs = _emit(args, "spectrum", meta, ("block", "index", "eigenvalue"), output.spectrum_rows(eig))
    return _finish(args, "spectrum", meta, outputs, started)


def _cmd_level_stats(args) -> int:
    started = time.time()
    params = _model(args)
    basis = build_basis(params.n_atoms)
    eig = diagonalize(parity_blocks(build_hamiltonian(basis, params)), want_vectors=False)
    ensemble = unfold([eig.evals_even, eig.evals_odd], args.poly_degree)
    fit = brody_fit(ensemble)
    meta = _params_dict(args, params, poly_degree=args.poly_degree)
    fit_path = output.write_json(
        _out_path(args, ".fit.json"),
        "level-stats",
        meta,
        {
            "b": fit.b,
            "alpha": fit.alpha,
            "stderr": fit.fit_stderr,
            "n_spacings": fit.n_spacings,
            "mean_spacing": ensemble.mean_spacing,
        },
    )
    _, outputs = _emit(
        args,
        "level-stats",
        meta,
        ("s", "density", "brody", "poisson", "wigner"),
        output.histogram_rows(ensemble.spacings, fit.b),
        [fit_path],
    )
    return _finish(args, "level-stats", meta, outputs, started)


def _cmd_husimi(args) -> int:
    started = time.time()
    params = _model(args)
    state, coords = _resolve_state(args, params)
    basis = build_basis(params.n_atoms)
    eig = diagonalize(parity_blocks(build_hamiltonian(basis, params)))
    psi = coherent_state(state, basis)
    if args.t_max > 0:
        psi = evolve(psi, eig, args.t_max)
    shell = EnergyShellSpec(args.energy if args.energy is not None else 0.0, args.grid)
    grid = husimi_grid(psi, shell, m_grid_size=args.m_grid)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        t=args.t_max,
        grid=list(args.grid),
        m_grid=args.m_grid,
        state=[coords.rho0, coords.theta_s, coords.theta_m, coords.m],
    )
    extra = []
    if args.pgm:
        extra.append(output.write_pgm(_out_path(args, ".pgm"), grid.values))
    _, outputs = _emit(
        args, "husimi", meta, ("i", "j", "rho0", "theta_s", "value"), output.husimi_rows(grid), extra
    )
    return _finish(args, "husimi", meta, outputs, started)


def _cmd_otoc_ed(args) -> int:
    started = time.time()
    params = _model(args)
    state, coords = _resolve_state(args, params)
    basis = build_basis(params.n_atoms)
    eig = diagonalize(parity_blocks(build_hamiltonian(basis, params)))
    psi = coherent_state(state, basis)
    series = otoc_ed(psi, args.v_op, args.w_op, _times(args), eig)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        t_max=args.t_max,
        t_points=args.t_points,
        v_op=args.v_op,
        w_op=args.w_op,
        state=[coords.rho0, coords.theta_s, coords.theta_m, coords.m],
    )
    extra = _maybe_growth_fit(args, series, meta, "otoc-ed")
    _, outputs = _emit(args, "otoc-ed", meta, ("t", "C"), output.series_rows(series), extra)
    return _finish(args, "otoc-ed", meta, outputs, started)


def _cmd_otoc_twa(args) -> int:
    started = time.time()
    params = _model(args)
    state, coords = _resolve_state(args, params)
    cfg = TwaConfig(n_samples=args.samples, seed=args.seed, derivative=args.method, d0=args.d0)
    series = twa_otoc(state, params.n_atoms, _times(args), cfg, params)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        t_max=args.t_max,
        t_points=args.t_points,
        samples=args.samples,
        method=args.method,
        d0=args.d0,
        state=[coords.rho0, coords.theta_s, coords.theta_m, coords.m],
    )
    extra = _maybe_growth_fit(args, series, meta, "otoc-twa")
    _, outputs = _emit(
        args, "otoc-twa", meta, ("t", "C", "bootstrap_err"), output.series_rows(series), extra
    )
    return _finish(args, "otoc-twa", meta, outputs, started)


def _maybe_growth_fit(args, series, meta, command):
    if getattr(args, "window", None) is None:
        return []
    fit = otoc_growth_fit(series, args.window)
    try:
        power = power_law_fit(series, args.window)
        power_payload = {"exponent": power.rate, "residual_rms": power.residual_rms}
    except ValueError:
        power_payload = None
    path = output.write_json(
        _out_path(args, ".fit.json"),
        command,
        meta,
        {
            "window": list(args.window),
            "growth_rate": fit.rate,
            "residual_rms": fit.residual_rms,
            "power_law": power_payload,
        },
    )
    return [path]


def _cmd_evolve_twa(args) -> int:
    started = time.time()
    params = _model(args)
    state, coords = _resolve_state(args, params)
    cfg = TwaConfig(n_samples=args.samples, seed=args.seed)
    series = twa_observable(state, params.n_atoms, args.observable, _times(args), cfg, params)
    meta = _params_dict(
        args,
        params,
        energy=args.energy,
        t_max=args.t_max,
        t_points=args.t_points,
        samples=args.samples,
        observable=args.observable,
        state=[coords.rho0, coords.theta_s, coords.theta_m, coords.m],
    )
    _, outputs = _emit(
        args,
        "evolve-twa",
        meta,
        ("t", "mean", "std", "mean_stderr"),
        output.observable_rows(series),
    )
    return _finish(args, "evolve-twa", meta, outputs, started)


def _cmd_protocol_qr(args) -> int:
    started = time.time()
    params = _model(args)
    basis = build_basis(params.n_atoms)
    eig = diagonalize(parity_blocks(build_hamiltonian(basis, params)))
    if args.fock is not None:
        n1, n0, nm1 = (int(v) for v in args.fock.split(","))
        psi = basis.fock_state(n1, n0, nm1)
        fock = [n1, n0, nm1]
    else:
        psi = basis.vacuum_mode0()
        fock = [0, params.n_atoms, 0]
    spec = ProtocolSpec(a_label=args.a_op, v_label=args.v_op, phi=args.phi)
    series = quadratic_response_protocol(spec, psi, eig, _times(args))
    meta = _params_dict(
        args,
        params,
        t_max=args.t_max,
        t_points=args.t_points,
        phi=args.phi,
        v_op=args.v_op,
        a_op=args.a_op,
        fock=fock,
    )
    _, outputs = _emit(args, "protocol-qr", meta, ("t", "C"), output.series_rows(series))
    return _finish(args, "protocol-qr", meta, outputs, started)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimode",
        description="Chaos diagnostics for a driven three-mode bosonic system.",
    )
    parser.add_argument("--version", action="version", version=f"trimode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, needs_seed=True):
        p.add_argument("--gn", type=float, default=1.0, help="collective coupling (energy unit)")
        p.add_argument("--q", type=float, default=1.0, help="quadratic shift")
        p.add_argument("--r", type=float, default=0.0, help="coherent rf coupling")
        p.add_argument("--n-atoms", type=int, default=100)
        p.add_argument("--out", default=None, help="output path prefix")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if needs_seed:
            p.add_argument("--seed", type=int, default=0)

    def add_state(p, required=False):
        p.add_argument(
            "--state",
            type=_parse_state_spec,
            required=required,
            help="initial point rho0,theta_s,theta_m,m (m may be 'auto' with --energy)",
        )
        p.add_argument("--energy", type=float, default=None, help="energy shell for m='auto'")

    p = sub.add_parser("poincare", help="surface-of-section crossings at theta_m = 0")
    common(p)
    add_state(p)
    p.add_argument("--grid", type=_parse_grid, default=(8, 8), help="shell raster of initial states")
    p.add_argument("--t-max", type=float, default=500.0)
    p.add_argument("--direction", choices=("both", "positive", "negative"), default="both")
    p.set_defaults(func=_cmd_poincare)

    p = sub.add_parser("lyapunov", help="largest Lyapunov exponent at one point")
    common(p)
    add_state(p, required=True)
    p.add_argument("--t-max", type=float, default=2000.0, help="total averaging time")
    p.add_argument("--t-min", type=float, default=100.0, help="transient to discard")
    p.add_argument("--method", choices=("reset", "fundamental"), default="reset")
    p.set_defaults(func=_cmd_lyapunov)

    p = sub.add_parser("lyapunov-map", help="exponent raster on an energy shell")
    common(p)
    p.add_argument("--energy", type=float, required=True)
    p.add_argument("--grid", type=_parse_grid, default=(80, 80))
    p.add_argument("--t-max", type=float, default=2000.0)
    p.add_argument("--t-min", type=float, default=100.0)
    p.add_argument("--method", choices=("reset", "fundamental"), default="reset")
    p.add_argument("--pgm", action="store_true", help="also write a grayscale raster")
    p.set_defaults(func=_cmd_lyapunov_map)

    p = sub.add_parser("spectrum", help="parity-block eigenvalues")
    common(p, needs_seed=False)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("level-stats", help="unfolded spacing histogram and Brody fit")
    common(p, needs_seed=False)
    p.add_argument("--poly-degree", type=int, default=10)
    p.set_defaults(func=_cmd_level_stats)

    p = sub.add_parser("husimi", help="phase-space portrait of an evolved coherent state")
    common(p, needs_seed=False)
    add_state(p, required=True)
    p.add_argument("--t-max", type=float, default=0.0, help="evolution time before imaging")
    p.add_argument("--grid", type=_parse_grid, default=(40, 40))
    p.add_argument("--m-grid", type=int, default=101)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=_cmd_husimi)

    p = sub.add_parser("otoc-ed", help="exact squared commutator for a coherent state")
    common(p, needs_seed=False)
    add_state(p, required=True)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=101)
    p.add_argument("--v-op", default="rho0")
    p.add_argument("--w-op", default="rho0")
    p.add_argument("--window", type=_parse_window, default=None, help="growth-fit window lo,hi")
    p.set_defaults(func=_cmd_otoc_ed)

    p = sub.add_parser("otoc-twa", help="semi-classical squared commutator")
    common(p)
    add_state(p, required=True)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=101)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--method", choices=("fundamental_matrix", "two_trajectory"), default="fundamental_matrix")
    p.add_argument("--d0", type=float, default=1e-6)
    p.add_argument("--window", type=_parse_window, default=None, help="growth-fit window lo,hi")
    p.set_defaults(func=_cmd_otoc_twa)

    p = sub.add_parser("evolve-twa", help="TWA mode occupation mean and spread")
    common(p)
    add_state(p, required=True)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=101)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--observable", choices=("n1", "n0", "nm1"), default="n0")
    p.set_defaults(func=_cmd_evolve_twa)

    p = sub.add_parser("protocol-qr", help="quadratic-response squared commutator")
    common(p, needs_seed=False)
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--t-points", type=int, default=51)
    p.add_argument("--phi", type=float, default=1e-3)
    p.add_argument("--v-op", default="N0")
    p.add_argument("--a-op", default="Sx")
    p.add_argument("--fock", default=None, help="initial Fock state n1,n0,nm1 (default 0,N,0)")
    p.set_defaults(func=_cmd_protocol_qr)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None:
        args.out = f"out/{args.command}"
    try:
        return args.func(args)
    except (ValueError, ResourceLimitError, IntegrationError, RuntimeError) as exc:
        print(f"trimode {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
