"""Run configuration: a TOML file of flat dotted keys.

Every accepted key is listed in ``SCHEMA`` with its type and default.
Keys marked ``REQUIRED`` have no default and must be given by the file or a
flag for the subcommands that use them.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

REQUIRED = object()

SCHEMA = {
    "seed": (int, 0),
    "output.dir": (str, "out"),
    "potential.shape": (str, REQUIRED),
    "potential.amplitude": (float, REQUIRED),
    "potential.width": (float, 1.0),
    "potential.truncation": (float, 1e-12),
    "solver.steps_per_R0": (int, 2000),
    "solver.rtol": (float, 1e-10),
    "neumann.kappa": (list, [10.0, 20.0, 40.0]),
    "scales.rho": (float, 1e-6),
    "scales.rho_grid": (list, [1e-4, 1e-6, 1e-8]),
    "scales.eta": (float, 0.05),
    "scales.k_min": (int, 6),
    "scales.k_max": (int, 30),
    "scales.prefactor.l_m1": (float, 1.0),
    "scales.prefactor.l0": (float, 1.0),
    "scales.prefactor.l1": (float, 1.0),
    "scales.prefactor.l2": (float, 1.0),
    "doubling.h": (int, 2),
    "doubling.chernoff_n_max": (int, 2000),
    "cell.l_m1": (float, 4.0),
    "cell.l0": (float, 16.0),
    "cell.l1": (float, 128.0),
    "cell.particles": (int, 8),
    "cell.cells_per_axis": (int, 2),
    "cell.C_LSSY": (float, 1.0),
    "cell.method": (str, "quadrature"),
    "mc.budget": (int, 200000),
    "oracle.points": (int, 48),
    "oracle.L_over_a": (float, 20.0),
    "oracle.radial_points": (int, 64),
    "oracle.identity_points": (int, 32),
    "oracle.probes": (int, 20),
    "report.acceptance": (str, "fast"),
}

POTENTIAL_KEYS = ("potential.shape", "potential.amplitude")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _line_of(text: str, key: str) -> int | None:
    last = re.escape(key.split(".")[-1])
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*([\w.\"]*\.)?\"?{last}\"?\s*=", line):
            return no
    return None


def _coerce(key: str, value, line: int | None):
    typ = SCHEMA[key][0]
    where = f" (line {line})" if line else ""
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    if typ is list:
        vals = value if isinstance(value, list) else [value]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            return [float(v) for v in vals]
    raise ConfigError(f"config key '{key}'{where}: expected {typ.__name__}, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    values: dict
    source: str = ""

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise KeyError(key)
        v = self.values.get(key, SCHEMA[key][1])
        if v is REQUIRED:
            raise ConfigError(f"missing config key '{key}'")
        return v

    def require(self, *keys: str) -> None:
        for k in keys:
            self[k]

    def with_overrides(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            if v is None:
                continue
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key '{k}'")
            vals[k] = _coerce(k, v, None)
        return RunConfig(vals, self.source)

    def resolved(self) -> dict:
        """All keys with defaults filled in; missing required keys are omitted."""
        out = {}
        for k, (_, default) in SCHEMA.items():
            v = self.values.get(k, default)
            if v is not REQUIRED:
                out[k] = v
        return out

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    flat = _flatten(raw)
    vals = {}
    for key, value in flat.items():
        line = _line_of(text, key)
        if key not in SCHEMA:
            where = f" at line {line}" if line else ""
            raise ConfigError(f"{source}: unknown config key '{key}'{where}")
        vals[key] = _coerce(key, value, line)
    return RunConfig(vals, source)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig({}, "<defaults>")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text, path)
