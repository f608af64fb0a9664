"""CSV and JSON persistence with stable, diffable formatting."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mfqf import COMPONENTS, MfqfRun, MfqfState, SweepPoint, correlator_rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    return str(v)


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    path = Path(path)
    n = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def read_csv(path: Path | str) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def read_numeric_columns(path: Path | str) -> dict[str, np.ndarray]:
    header, rows = read_csv(path)
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = np.array([float(row[j]) for row in rows])
        except ValueError:
            out[name] = np.array([row[j] for row in rows])
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path | str, data: dict):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# table layouts

MF_HEADER = ["delta", "jz", "mu_x", "mu_y", "mu_z", "stability",
             "eig_re_1", "eig_re_2", "eig_re_3", "eig_im_1", "eig_im_2", "eig_im_3"]

BASIN_HEADER = ["ix", "iy", "c1", "c2", "mu_z_final", "status"]

SWEEP_HEADER = (
    ["delta", "mu_x", "mu_y", "mu_z"]
    + [f"sigma_{c}" for c in COMPONENTS]
    + [f"theta_max_{c}" for c in COMPONENTS]
    + ["kappa_tilde", "kappa", "classification", "wall_time"]
)

FIT_HEADER = ["component", "lambda", "q", "A", "B", "phi", "residual"]


def mf_rows(delta: float, jz_product: float, solutions) -> list[list]:
    rows = []
    for s in solutions:
        ev = np.asarray(s.eigenvalues)
        rows.append([delta, jz_product, *s.mu, s.stability.value, *ev.real, *ev.imag])
    return rows


def sweep_rows(points: Sequence[SweepPoint]) -> list[list]:
    return [[pt.row()[k] for k in SWEEP_HEADER] for pt in points]


def write_correlators(path, state: MfqfState) -> int:
    dims = [f"r{k}" for k in range(state.lattice.dimension)]
    return write_csv(path, dims + [f"eta_{c}" for c in COMPONENTS], correlator_rows(state))


def write_trajectory(path, run: MfqfRun) -> int:
    return write_csv(path, ["time", "mu_x", "mu_y", "mu_z", "spin_rate"],
                     ([t, *m, r] for t, m, r in zip(run.times, run.mu, run.spin_rate)))


def write_fit_table(path, fits: dict) -> int:
    return write_csv(path, FIT_HEADER,
                     ([name, f.lam, f.q, f.A, f.B, f.phi, f.residual] for name, f in fits.items()))


def read_correlator_profile(path, axis: int = 0) -> dict[str, np.ndarray]:
    """Per-component eta along a principal axis (distances 1 .. max) from a correlator CSV."""
    cols = read_numeric_columns(path)
    dims = sorted(k for k in cols if k.startswith("r") and k[1:].isdigit())
    if f"r{axis}" not in cols:
        raise ValueError(f"correlator file has no axis {axis}")
    on_axis = np.ones(len(cols[dims[0]]), dtype=bool)
    for k in dims:
        if k != f"r{axis}":
            on_axis &= cols[k] == 0
    r = cols[f"r{axis}"][on_axis]
    # components are stored in [0, L); keep 1 .. L//2
    extent = int(np.max(cols[f"r{axis}"])) + 1
    pos = (r > 0) & (r <= extent // 2)
    order = np.argsort(r[pos])
    out = {"r": r[pos][order]}
    for c in COMPONENTS:
        out[c] = cols[f"eta_{c}"][on_axis][pos][order]
    return out
