"""TOML run configuration: flat dotted keys, validated against a fixed schema."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .lattice import LatticeSpec
from .meanfield import lab_frame_to_rotating
from .params import ModelParams

MODES = ("mf-steady", "mf-region", "mf-basins", "mfqf-run", "mfqf-sweep", "oracle-validate", "analyze")


class ConfigError(ValueError):
    pass


_NUM = (int, float)

# key -> (accepted types, default); None default means optional and unset
SCHEMA: dict[str, tuple[tuple[type, ...], Any]] = {
    "mode": ((str,), None),
    "gamma": (_NUM, 1.0),
    "omega": (_NUM, 0.0),
    "delta": (_NUM, None),
    "jz_product": (_NUM, None),
    "j": (_NUM, None),
    "jz": (_NUM, 0.0),
    "lab.omega_c": (_NUM, None),
    "lab.omega": (_NUM, None),
    "lattice.dimension": ((int,), 1),
    "lattice.extent": ((int,), None),
    "lattice.extents": ((list,), None),
    "sweep.values": ((list,), None),
    "sweep.start": (_NUM, None),
    "sweep.stop": (_NUM, None),
    "sweep.step": (_NUM, None),
    "sweep.seeding": ((str,), "continuation"),
    "sweep.root": ((int,), 0),
    "run.t_end": (_NUM, 600.0),
    "run.dt": (_NUM, None),
    "run.kappa_tol": (_NUM, 1e-8),
    "run.window": (_NUM, 10.0),
    "run.cycle_tail": (_NUM, 200.0),
    "run.seeding": ((str,), "product_state"),
    "run.root": ((int,), 0),
    "region.jz_min": (_NUM, 0.0),
    "region.jz_max": (_NUM, 10.0),
    "region.jz_points": ((int,), 101),
    "region.delta_min": (_NUM, -2.0),
    "region.delta_max": (_NUM, 10.0),
    "region.delta_points": ((int,), 121),
    "region.locate_cusp": ((bool,), False),
    "basins.axes": ((str,), "yz"),
    "basins.resolution": ((int,), 41),
    "basins.offset": (_NUM, 0.0),
    "basins.radius": (_NUM, 1.0),
    "basins.t_max": (_NUM, 500.0),
    "oracle.sites": ((int,), 4),
    "oracle.geometry": ((str,), "ring"),
    "oracle.t_end": (_NUM, 20.0),
    "oracle.dt": (_NUM, 0.01),
    "oracle.tolerance": (_NUM, 1e-5),
    "oracle.random_initial": ((bool,), False),
    "analyze.input": ((str,), None),
    "analyze.kind": ((str,), "profile"),
    "analyze.axis": ((int,), 0),
    "analyze.r_min": (_NUM, 1.0),
    "analyze.tail_fraction": (_NUM, 0.5),
    "analyze.column": ((str,), "mu_x"),
    "output.correlators": ((bool,), False),
    "output.trajectory": ((bool,), False),
}


def flatten(table: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class RunConfig:
    mode: str
    values: dict[str, Any]
    source: str = "<dict>"
    delta_source: str = "delta"

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def lattice(self) -> LatticeSpec | None:
        if self.values.get("lattice.extents") is not None:
            return LatticeSpec(tuple(self.values["lattice.extents"]))
        if self.values.get("lattice.extent") is not None:
            return LatticeSpec.hypercube(self.values["lattice.dimension"], self.values["lattice.extent"])
        return None

    @property
    def dimension(self) -> int:
        lat = self.lattice
        return lat.dimension if lat is not None else self.values["lattice.dimension"]

    def params(self, delta: float | None = None) -> ModelParams:
        v = self.values
        d = v["delta"] if delta is None else delta
        d = 0.0 if d is None else d
        common = dict(omega=v["omega"], delta=d, gamma=v["gamma"], lattice=self.lattice, dimension=self.dimension)
        if v["jz_product"] is not None:
            return ModelParams.from_coupling_product(v["jz_product"], jz=v["jz"], **common)
        return ModelParams(j=v["j"] if v["j"] is not None else 0.0, jz=v["jz"], **common)

    @property
    def jz_product(self) -> float:
        return self.params().effective_coupling

    def sweep_values(self) -> np.ndarray | None:
        v = self.values
        if v["sweep.values"] is not None:
            return np.asarray(v["sweep.values"], dtype=float)
        if v["sweep.start"] is None:
            return None
        n = int(round((v["sweep.stop"] - v["sweep.start"]) / v["sweep.step"])) + 1
        return np.round(np.linspace(v["sweep.start"], v["sweep.stop"], n), 12)

    def resolved(self) -> dict[str, Any]:
        return {k: v for k, v in sorted(self.values.items()) if v is not None}


def _check_type(key, value, types):
    if bool in types:
        ok = isinstance(value, bool)
    elif isinstance(value, bool):
        ok = False
    else:
        ok = isinstance(value, types)
    if not ok:
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{key}: expected {names}, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")


def validate(raw: dict[str, Any], source: str = "<dict>") -> RunConfig:
    flat = flatten(raw)
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    values = {}
    for key, (types, default) in SCHEMA.items():
        if key in flat:
            _check_type(key, flat[key], types)
            val = flat[key]
            values[key] = float(val) if types is _NUM else val
        else:
            values[key] = default
    mode = values["mode"]
    if mode is None:
        raise ConfigError("missing 'mode'")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    if values["gamma"] <= 0:
        raise ConfigError("gamma must be positive")

    lab = (values["lab.omega_c"], values["lab.omega"])
    source_delta = "delta"
    if any(x is not None for x in lab):
        if None in lab:
            raise ConfigError("lab.omega_c and lab.omega must be given together")
        if values["delta"] is not None:
            raise ConfigError("give either delta or lab.omega_c/lab.omega, not both")
        values["delta"] = lab_frame_to_rotating(*lab)
        source_delta = "lab"
    if values["jz_product"] is not None and values["j"] is not None:
        raise ConfigError("give either jz_product or j, not both")
    if values["lattice.extents"] is not None:
        if values["lattice.extent"] is not None:
            raise ConfigError("give either lattice.extent or lattice.extents")
        ext = values["lattice.extents"]
        if not all(isinstance(e, int) and not isinstance(e, bool) for e in ext):
            raise ConfigError("lattice.extents must be a list of integers")
        if "lattice.dimension" in flat and flat["lattice.dimension"] != len(ext):
            raise ConfigError("lattice.dimension disagrees with lattice.extents")

    seeding = values["sweep.seeding"]
    if seeding not in ("continuation", "mf_root", "product_state"):
        raise ConfigError(f"sweep.seeding must be continuation, mf_root or product_state, got {seeding!r}")
    if values["run.seeding"] not in ("mf_root", "product_state"):
        raise ConfigError("run.seeding must be mf_root or product_state")

    if values["sweep.values"] is not None:
        if any(values[k] is not None for k in ("sweep.start", "sweep.stop", "sweep.step")):
            raise ConfigError("give either sweep.values or sweep.start/stop/step")
        sv = values["sweep.values"]
        if not sv or not all(isinstance(x, _NUM) and not isinstance(x, bool) and math.isfinite(x) for x in sv):
            raise ConfigError("sweep.values must be a non-empty list of finite numbers")
        steps = np.diff(np.asarray(sv, dtype=float))
        if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ConfigError("sweep.values must be strictly ordered")
    elif any(values[k] is not None for k in ("sweep.start", "sweep.stop", "sweep.step")):
        if any(values[k] is None for k in ("sweep.start", "sweep.stop", "sweep.step")):
            raise ConfigError("sweep.start, sweep.stop and sweep.step go together")
        st = values["sweep.step"]
        span = values["sweep.stop"] - values["sweep.start"]
        if st == 0 or span * st < 0:
            raise ConfigError("sweep.step must be nonzero and point from start to stop")
        values["sweep.step"] = abs(st) * (1 if span >= 0 else -1)

    cfg = RunConfig(mode, values, source, source_delta)
    _mode_requirements(cfg)
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _mode_requirements(cfg: RunConfig):
    v = cfg.values
    m = cfg.mode
    if m in ("mf-steady", "mf-basins", "mfqf-run", "mfqf-sweep", "oracle-validate"):
        if v["jz_product"] is None and v["j"] is None and m != "oracle-validate":
            raise ConfigError(f"{m} needs jz_product or j")
    if m in ("mf-basins", "mfqf-run") and v["delta"] is None:
        raise ConfigError(f"{m} needs delta (or lab.omega_c/lab.omega)")
    if m == "mf-steady" and v["delta"] is None and cfg.sweep_values() is None:
        raise ConfigError("mf-steady needs delta or a sweep")
    if m == "mfqf-sweep":
        if cfg.sweep_values() is None:
            raise ConfigError("mfqf-sweep needs sweep.values or sweep.start/stop/step")
        if v["delta"] is not None and cfg.delta_source == "delta":
            raise ConfigError("mfqf-sweep sweeps delta; do not also set delta")
    if m in ("mfqf-run", "mfqf-sweep") and cfg.lattice is None:
        raise ConfigError(f"{m} needs lattice.extent or lattice.extents")
    if m == "analyze":
        if v["analyze.input"] is None:
            raise ConfigError("analyze needs analyze.input")
        if v["analyze.kind"] not in ("profile", "relaxation", "limit-cycle"):
            raise ConfigError("analyze.kind must be profile, relaxation or limit-cycle")
    if m == "oracle-validate" and v["oracle.geometry"] not in ("ring", "chain"):
        raise ConfigError("oracle.geometry must be ring or chain")
    if m == "mf-basins" and (len(v["basins.axes"]) != 2 or set(v["basins.axes"]) - set("xyz")
                             or v["basins.axes"][0] == v["basins.axes"][1]):
        raise ConfigError("basins.axes must name two distinct axes from x, y, z")


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path} is not UTF-8") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate(raw, str(path))
