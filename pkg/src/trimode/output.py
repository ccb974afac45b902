"""Run manifests and plot-ready CSV/JSON emission.

Every data file starts with '#'-prefixed metadata lines carrying the command,
the full parameter set, and the manifest hash, so a file can always be traced
back to the run that produced it.  The hash covers only the reproducibility
relevant fields (command, parameters, version) — wall time and output paths
are recorded in the manifest but excluded from the hash, and identical
manifests reproduce byte-identical CSV output.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__


def _canonical(obj):
    """JSON-safe, deterministic representation of parameter values."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    return obj


def manifest_hash(command: str, params: dict, version: str = __version__) -> str:
    payload = json.dumps(
        {"command": command, "params": _canonical(params), "version": version},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run bit-identically on the same build."""

    command: str
    params: dict
    version: str
    hash: str
    wall_time_s: float
    outputs: tuple

    @classmethod
    def create(cls, command: str, params: dict, wall_time_s: float, outputs: Sequence[str]):
        params = _canonical(params)
        return cls(
            command=command,
            params=params,
            version=__version__,
            hash=manifest_hash(command, params),
            wall_time_s=float(wall_time_s),
            outputs=tuple(str(o) for o in outputs),
        )

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = asdict(self)
        payload["outputs"] = list(self.outputs)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def metadata_lines(command: str, params: dict) -> list:
    """The '#'-prefixed header block shared by all CSV outputs."""
    lines = [
        f"# tool: trimode {__version__}",
        f"# command: {command}",
        f"# manifest_hash: {manifest_hash(command, params)}",
    ]
    for key, value in sorted(_canonical(params).items()):
        lines.append(f"# {key}: {json.dumps(value)}")
    return lines


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip representation
    return str(value)


def write_csv(path, command: str, params: dict, column_names: Sequence[str], rows: Iterable):
    """Write a long-form CSV with the metadata header; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for line in metadata_lines(command, params):
            fh.write(line + "\n")
        fh.write(",".join(column_names) + "\n")
        for row in rows:
            fh.write(",".join(_format(v) for v in row) + "\n")
    return path


def write_json(path, command: str, params: dict, payload: dict):
    """Scalar/fit results as JSON, wrapped with the same provenance fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {
        "tool": f"trimode {__version__}",
        "command": command,
        "manifest_hash": manifest_hash(command, params),
        "params": _canonical(params),
        "result": _canonical(payload),
    }
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def trajectory_rows(record, params_model):
    """Rows (t, Re/Im zeta_i, rho0, theta_s, m, theta_m, E) for a trajectory."""
    from .model import ClassicalState, mf_energy_zeta_array, zeta_to_canonical

    energies = mf_energy_zeta_array(record.zetas, params_model)
    for k, t in enumerate(record.times):
        z = record.zetas[k]
        coords = zeta_to_canonical(ClassicalState.from_unnormalized(z))
        yield (
            t,
            z[0].real, z[0].imag, z[1].real, z[1].imag, z[2].real, z[2].imag,
            coords.rho0, coords.theta_s, coords.m, coords.theta_m,
            energies[k],
        )


TRAJECTORY_COLUMNS = (
    "t",
    "re_zeta_p1", "im_zeta_p1", "re_zeta_0", "im_zeta_0", "re_zeta_m1", "im_zeta_m1",
    "rho0", "theta_s", "m", "theta_m", "energy",
)


def section_rows(section):
    """(traj_id, rho0, theta_s) rows for a Poincare section."""
    for traj_id, points in enumerate(section.crossings):
        for rho0, theta_s in points:
            yield traj_id, rho0, theta_s


def map_rows(lyapunov_map):
    """(i, j, rho0, theta_s, m, lambda, stderr) rows; empty cells are skipped."""
    shell = lyapunov_map.shell
    rho0s = shell.rho0_values()
    thetas = shell.theta_s_values()
    for i in range(shell.grid[0]):
        for j in range(shell.grid[1]):
            if np.isnan(lyapunov_map.lam[i, j]):
                continue
            yield (
                i, j, rho0s[i], thetas[j],
                lyapunov_map.m_values[i, j],
                lyapunov_map.lam[i, j],
                lyapunov_map.std_error[i, j],
            )


def spectrum_rows(eig):
    """(block, index, eigenvalue) rows for both parity blocks."""
    for name, evals in (("even", eig.evals_even), ("odd", eig.evals_odd)):
        for k, e in enumerate(evals):
            yield name, k, e


def husimi_rows(grid):
    """(i, j, rho0, theta_s, value) rows."""
    for i, rho0 in enumerate(grid.rho0_values):
        for j, theta_s in enumerate(grid.theta_s_values):
            yield i, j, rho0, theta_s, grid.values[i, j]


def series_rows(series):
    """(t, value[, stderr]) rows for OTOC-like series."""
    if getattr(series, "std_error", None) is not None:
        for t, v, e in zip(series.times, series.values, series.std_error):
            yield t, v, e
    else:
        for t, v in zip(series.times, series.values):
            yield t, v


def observable_rows(series):
    """(t, mean, std, mean_stderr) rows for TWA observable series."""
    for t, m, s, e in zip(series.times, series.mean, series.std, series.mean_stderr):
        yield t, m, s, e


def histogram_rows(spacings: np.ndarray, fit_b: float, bins: int = 50, s_max: float = 4.0):
    """Spacing histogram with Brody/Poisson/Wigner overlays at bin centers."""
    from .levelstats import brody_pdf, poisson_pdf, wigner_pdf

    counts, edges = np.histogram(spacings, bins=bins, range=(0.0, s_max), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    for c, n in zip(centers, counts):
        yield c, n, brody_pdf(c, fit_b), float(poisson_pdf(c)), float(wigner_pdf(c))


def write_pgm(path, values: np.ndarray):
    """Optional grayscale raster (PGM) of a 2-D field, NaN rendered black."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = np.array(values, dtype=float)
    mask = np.isnan(v)
    finite = v[~mask]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    img = np.zeros(v.shape, dtype=int)
    img[~mask] = np.round(255 * (v[~mask] - lo) / span).astype(int)
    with path.open("w") as fh:
        fh.write(f"P2\n{v.shape[1]} {v.shape[0]}\n255\n")
        for row in img:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")
    return path
