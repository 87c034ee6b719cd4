"""Configuration, seeds and file formats.

Config files are TOML or JSON with the same structure::

    seed = 2012
    output_dir = "out"
    dim = 4                      # Fock truncation of generated states

    [mzi]                        # tau1, rho1, tau2, rho2, phi2_rad, delta_t_s, gamma_rad_s
    [budget]                     # preset = "published" | "ideal", then overrides:
                                 # eta_nopo, eta_vis, eta_pr, eta_det, eta_apd,
                                 # zeta_tot_hz, zeta_dark_hz, p_multi | multiphoton,
                                 # phase_jitter_rad | visibility
    [sampling]                   # samples, trace_trials, workers
    [mle]                        # dim_per_mode, x_bin_width, x_range, theta_bins,
                                 # max_iterations, convergence_tol, tail_bins, single_mode_dim
    [report]                     # fringe_points
    [[targets]]                  # name and either c0/c1 or weights = [w0, w1], plus phi_rad

Without ``[[targets]]`` the single target is the qubit prepared by the MZI.
Every randomized stage draws its seed from :func:`derive_seed`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fock import DensityMatrix
from .generation import (
    PUBLISHED_DELAY,
    PUBLISHED_GAMMA,
    ImperfectionBudget,
    MziConfig,
    TimeBinQubitSpec,
    calibrate_p_multi,
    jitter_for_visibility,
    published_budget,
    qubit_from_mzi,
)
from .tomography import MleConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key or line."""


class DataFileError(ValueError):
    """A data file is missing, truncated or has the wrong schema."""


def derive_seed(root: int, stage: str) -> int:
    """Stable 64-bit seed for a named stage: the first 8 bytes of SHA-256("root:stage")."""
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class SamplingConfig:
    samples: int = 100_000
    trace_trials: int = 100_000
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    mzi: MziConfig
    budget: ImperfectionBudget
    targets: tuple
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    mle: MleConfig = field(default_factory=MleConfig)
    single_mode_dim: int = 6
    fringe_points: int = 8
    dim: int = 4
    seed: int = 0
    output_dir: Path = Path("out")

    def echo(self) -> dict:
        """Plain-data view of the resolved configuration."""
        b = self.budget
        return {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "dim": self.dim,
            "mzi": {
                "tau1": self.mzi.tau1,
                "rho1": self.mzi.rho1,
                "tau2": self.mzi.tau2,
                "rho2": self.mzi.rho2,
                "phi2_rad": self.mzi.phi2,
                "delta_t_s": self.mzi.delta_t,
                "gamma_rad_s": self.mzi.gamma,
            },
            "budget": {
                "eta_nopo": b.eta_nopo,
                "eta_vis": b.eta_vis,
                "eta_pr": b.eta_pr,
                "eta_det": b.eta_det,
                "eta_apd": b.herald_purity,
                "p_multi": b.p_multi,
                "phase_jitter_rad": b.phase_jitter,
            },
            "sampling": {
                "samples": self.sampling.samples,
                "trace_trials": self.sampling.trace_trials,
                "workers": self.sampling.workers,
            },
            "mle": {**self.mle.to_dict(), "single_mode_dim": self.single_mode_dim},
            "report": {"fringe_points": self.fringe_points},
            "targets": [{"name": t.name, "c0": t.c0, "c1": t.c1, "phi_rad": t.phi} for t in self.targets],
        }


_TOP = {"seed", "output_dir", "dim", "mzi", "budget", "sampling", "mle", "report", "targets"}
_MZI = {"tau1", "rho1", "tau2", "rho2", "phi2_rad", "delta_t_s", "gamma_rad_s"}
_BUDGET = {
    "preset",
    "eta_nopo",
    "eta_vis",
    "eta_pr",
    "eta_det",
    "eta_apd",
    "zeta_tot_hz",
    "zeta_dark_hz",
    "p_multi",
    "multiphoton",
    "phase_jitter_rad",
    "visibility",
}
_SAMPLING = {"samples", "trace_trials", "workers"}
_MLE = {
    "dim_per_mode",
    "x_bin_width",
    "x_range",
    "theta_bins",
    "max_iterations",
    "convergence_tol",
    "tail_bins",
    "single_mode_dim",
}
_REPORT = {"fringe_points"}
_TARGET = {"name", "c0", "c1", "weights", "phi_rad"}


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"'{where}' must be a table")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where + '.' if where else ''}{key}'")


def _num(section: dict, key: str, where: str, default=None, kind=float):
    if key not in section:
        return default
    v = section[key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind is int:
        ok = ok and float(v).is_integer()
    if not ok or (kind is float and not math.isfinite(v)):
        raise ConfigError(f"'{where}.{key}' must be {'an integer' if kind is int else 'a number'}, got {v!r}")
    return kind(v)


def _build(raw: dict, path: str) -> ExperimentConfig:
    _check_keys(raw, _TOP, "")
    seed = _num(raw, "seed", "config", 0, int) if "seed" in raw else 0
    if seed < 0 or seed >= 2**64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer")
    dim = _num(raw, "dim", "config", 4, int)
    if dim < 2:
        raise ConfigError("'dim' must be at least 2")
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("'output_dir' must be a string")

    m = raw.get("mzi", {})
    _check_keys(m, _MZI, "mzi")
    s = 1 / math.sqrt(2)
    try:
        mzi = MziConfig(
            _num(m, "tau1", "mzi", s),
            _num(m, "rho1", "mzi", s),
            _num(m, "tau2", "mzi", s),
            _num(m, "rho2", "mzi", s),
            _num(m, "phi2_rad", "mzi", 0.0),
            _num(m, "delta_t_s", "mzi", PUBLISHED_DELAY),
            _num(m, "gamma_rad_s", "mzi", PUBLISHED_GAMMA),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"mzi: {exc}") from exc

    budget = _budget(raw.get("budget", {}))

    sm = raw.get("sampling", {})
    _check_keys(sm, _SAMPLING, "sampling")
    sampling = SamplingConfig(
        _num(sm, "samples", "sampling", 100_000, int),
        _num(sm, "trace_trials", "sampling", 100_000, int),
        _num(sm, "workers", "sampling", 1, int),
    )
    if sampling.samples < 1:
        raise ConfigError("'sampling.samples' must be at least 1")
    if sampling.trace_trials < 2 or sampling.workers < 1:
        raise ConfigError("'sampling.trace_trials' must be ≥ 2 and 'sampling.workers' ≥ 1")

    ml = raw.get("mle", {})
    _check_keys(ml, _MLE, "mle")
    kwargs = {}
    for key, kind in (
        ("dim_per_mode", int),
        ("x_bin_width", float),
        ("x_range", float),
        ("theta_bins", int),
        ("max_iterations", int),
        ("convergence_tol", float),
    ):
        v = _num(ml, key, "mle", None, kind)
        if v is not None:
            kwargs[key] = v
    if "tail_bins" in ml:
        if not isinstance(ml["tail_bins"], bool):
            raise ConfigError("'mle.tail_bins' must be true or false")
        kwargs["tail_bins"] = ml["tail_bins"]
    try:
        mle = MleConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"mle: {exc}") from exc
    single_dim = _num(ml, "single_mode_dim", "mle", 6, int)
    if single_dim < 2:
        raise ConfigError("'mle.single_mode_dim' must be at least 2")

    rp = raw.get("report", {})
    _check_keys(rp, _REPORT, "report")
    fringe_points = _num(rp, "fringe_points", "report", 8, int)
    if fringe_points < 2:
        raise ConfigError("'report.fringe_points' must be at least 2")

    targets = _targets(raw.get("targets"), mzi)
    return ExperimentConfig(
        mzi, budget, targets, sampling, mle, single_dim, fringe_points, dim, seed, Path(out)
    )


def _budget(b: dict) -> ImperfectionBudget:
    _check_keys(b, _BUDGET, "budget")
    preset = b.get("preset", "ideal")
    if preset == "published":
        base = published_budget()
    elif preset == "ideal":
        base = ImperfectionBudget()
    else:
        raise ConfigError(f"'budget.preset' must be 'published' or 'ideal', got {preset!r}")
    if "p_multi" in b and "multiphoton" in b:
        raise ConfigError("give 'budget.p_multi' or 'budget.multiphoton', not both")
    if "phase_jitter_rad" in b and "visibility" in b:
        raise ConfigError("give 'budget.phase_jitter_rad' or 'budget.visibility', not both")
    fields = {}
    for key, attr in (
        ("eta_nopo", "eta_nopo"),
        ("eta_vis", "eta_vis"),
        ("eta_pr", "eta_pr"),
        ("eta_det", "eta_det"),
        ("eta_apd", "eta_apd"),
        ("zeta_tot_hz", "zeta_tot"),
        ("zeta_dark_hz", "zeta_dark"),
        ("p_multi", "p_multi"),
        ("phase_jitter_rad", "phase_jitter"),
    ):
        v = _num(b, key, "budget")
        if v is not None:
            fields[attr] = v
    if ("zeta_tot" in fields or "zeta_dark" in fields) and "eta_apd" not in fields:
        fields["eta_apd"] = None
    try:
        budget = replace(base, **fields)
        if "multiphoton" in b:
            budget = replace(budget, p_multi=calibrate_p_multi(budget, _num(b, "multiphoton", "budget")))
        if "visibility" in b:
            budget = replace(budget, phase_jitter=jitter_for_visibility(_num(b, "visibility", "budget")))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"budget: {exc}") from exc
    return budget


def _targets(raw, mzi: MziConfig) -> tuple:
    if raw is None:
        spec = qubit_from_mzi(mzi)
        return (replace(spec, name="mzi"),)
    if not isinstance(raw, list) or not raw:
        raise ConfigError("'targets' must be a nonempty array of tables")
    out = []
    for i, t in enumerate(raw):
        where = f"targets[{i}]"
        _check_keys(t, _TARGET, where)
        name = t.get("name", f"target{i}")
        if not isinstance(name, str) or not name or any(c in name for c in "/\\") or name.startswith("."):
            raise ConfigError(f"'{where}.name' must be a plain nonempty string")
        phi = _num(t, "phi_rad", where, 0.0)
        try:
            if "weights" in t:
                w = t["weights"]
                if not (isinstance(w, list) and len(w) == 2 and all(isinstance(x, (int, float)) for x in w)):
                    raise ConfigError(f"'{where}.weights' must be two numbers")
                spec = TimeBinQubitSpec.from_weights(float(w[0]), float(w[1]), phi, name)
            elif "c0" in t and "c1" in t:
                spec = TimeBinQubitSpec(_num(t, "c0", where), _num(t, "c1", where), phi, name)
            else:
                raise ConfigError(f"'{where}' needs 'weights' or both 'c0' and 'c1'")
        except ConfigError:
            raise
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        out.append(spec)
    names = [t.name for t in out]
    if len(set(names)) != len(names):
        raise ConfigError("target names must be unique")
    return tuple(out)


def parse_config(text: str, fmt: str, source: str = "<config>") -> ExperimentConfig:
    """Parse TOML (``fmt='toml'``) or JSON text."""
    try:
        if fmt == "toml":
            raw = tomllib.loads(text)
        elif fmt == "json":
            raw = json.loads(text)
        else:
            raise ConfigError(f"unsupported config format {fmt!r}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a table")
    return _build(raw, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return parse_config(text, fmt, str(path))


# ---------------------------------------------------------------------------
# CSV


def format_float(v) -> str:
    """Shortest round-trip representation, so reruns are byte-identical."""
    return repr(float(v))


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(format_float(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path, header, allow_empty: bool = False) -> np.ndarray:
    """Read a numeric CSV with exactly ``header``; errors name the row."""
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"missing data file {path}")
    header = list(header)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise DataFileError(f"{path}: expected header {','.join(header)}, got {','.join(first or [])}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFileError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DataFileError(f"{path}: row {lineno}: {exc}") from exc
            if not all(math.isfinite(v) for v in vals):
                raise DataFileError(f"{path}: row {lineno} has a non-finite value")
            rows.append(vals)
    if not rows and not allow_empty:
        raise DataFileError(f"{path}: no data rows")
    return np.array(rows, dtype=float).reshape(len(rows), len(header))


SAMPLE_HEADER = ("x1", "p1", "x2", "p2")
TOMOGRAPHY_HEADER = ("theta1_rad", "x1", "theta2_rad", "x2")


# ---------------------------------------------------------------------------
# state JSON


def state_record(rho, dim: int, modes: int = 2, metadata=None) -> dict:
    out = {"state": DensityMatrix(np.asarray(rho), dim, modes).to_dict()}
    if metadata is not None:
        out["metadata"] = metadata
    return out


def write_json(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_state(path) -> tuple[DensityMatrix, dict]:
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"missing state file {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFileError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict) or "state" not in payload:
        raise DataFileError(f"{path}: missing 'state' record")
    try:
        dm = DensityMatrix.from_dict(payload["state"])
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    return dm, payload.get("metadata", {})
