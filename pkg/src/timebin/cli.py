"""Command-line pipeline: generate → sample → reconstruct → report.

Settings come from built-in defaults, then the config file, then command-line
flags (highest precedence).  ``--dim`` sets the two-mode reconstruction
dimension (``mle.dim_per_mode``); the generation truncation is the config key
``dim``.

Layout under the output directory::

    <target>/ideal_state.json, physical_state.json       generate
    <target>/samples.csv, tomography.csv                  sample
    <target>/reconstructed_state.json                     reconstruct
    <target>/report.json, fringe.csv, wigner.csv, trace.csv   report
    manifest.json                                         every command

Everything except ``manifest.json`` (which records wall-clock timings) is
byte-identical across reruns with the same config and seed.

Exit codes: 0 success, 2 usage or config error, 3 data error,
4 a reconstruction did not converge (its artifacts are still written).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    analyze_variance_trace,
    decompose_at_optimum,
    fringe_scan,
    qubit_report,
    single_mode_summary,
    wigner_grid,
)
from .eightport import make_tomography_data, sample_q_function, synthesize_variance_trace, trace_grid
from .fock import InvalidStateError, DimensionError
from .generation import build_physical_state
from .io import (
    SAMPLE_HEADER,
    TOMOGRAPHY_HEADER,
    ConfigError,
    DataFileError,
    ExperimentConfig,
    SamplingConfig,
    derive_seed,
    load_config,
    read_csv,
    read_state,
    state_record,
    write_csv,
    write_json,
)
from .tomography import DataError, mle_reconstruct

log = logging.getLogger("timebin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 2, 3, 4

ARTIFACTS = (
    "ideal_state.json",
    "physical_state.json",
    "samples.csv",
    "tomography.csv",
    "reconstructed_state.json",
    "report.json",
    "fringe.csv",
    "wigner.csv",
    "trace.csv",
)


class UsageError(ValueError):
    pass


class Run:
    """Resolved config plus per-invocation bookkeeping."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.timings: dict[str, float] = {}
        self.converged = True

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def path(self, target, name) -> Path:
        return self.out / target.name / name

    def seed(self, stage: str, target) -> int:
        return derive_seed(self.cfg.seed, f"{stage}:{target.name}")

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - t0
        return res


# ---------------------------------------------------------------------------
# stages.  Each reads and validates all inputs before writing anything.


def cmd_generate(run: Run):
    cfg = run.cfg
    states = []
    for t in cfg.targets:
        ket = t.ket(cfg.dim)
        ideal = np.outer(ket, ket.conj())
        phys = run.timed("generate", build_physical_state, t, cfg.budget, cfg.dim)
        states.append((t, ideal, phys))
    for t, ideal, phys in states:
        meta = {"target": t.name, "c0": t.c0, "c1": t.c1, "phi_rad": t.phi}
        write_json(run.path(t, "ideal_state.json"), state_record(ideal, cfg.dim, 2, {**meta, "kind": "ideal"}))
        write_json(run.path(t, "physical_state.json"), state_record(phys, cfg.dim, 2, {**meta, "kind": "physical"}))
        log.info("%s: generated states (vacuum %.4f)", t.name, phys[0, 0].real)


def _two_mode_state(path):
    dm, _ = read_state(path)
    if dm.mode_count != 2:
        raise DataFileError(f"{path}: expected a two-mode state")
    return dm.entries


def cmd_sample(run: Run):
    cfg = run.cfg
    if cfg.sampling.samples < 1:
        raise UsageError("sample count must be at least 1")
    rhos = [(t, _two_mode_state(run.path(t, "physical_state.json"))) for t in cfg.targets]
    results = []
    for t, rho in rhos:
        s = run.timed(
            "sample", sample_q_function, rho, cfg.sampling.samples, run.seed("sample", t), workers=cfg.sampling.workers
        )
        tomo = make_tomography_data(s, run.seed("tomography", t))
        results.append((t, s, tomo))
    for t, s, tomo in results:
        write_csv(run.path(t, "samples.csv"), SAMPLE_HEADER, s)
        write_csv(run.path(t, "tomography.csv"), TOMOGRAPHY_HEADER, tomo)
        log.info("%s: %d records, %d tomography rows", t.name, len(s), len(tomo))


def cmd_reconstruct(run: Run):
    cfg = run.cfg
    data = [(t, read_csv(run.path(t, "tomography.csv"), TOMOGRAPHY_HEADER)) for t in cfg.targets]
    results = []
    for t, d in data:
        res = run.timed("reconstruct", mle_reconstruct, d, cfg.mle)
        results.append((t, res))
    for t, res in results:
        meta = {"target": t.name, **res.metadata()}
        write_json(run.path(t, "reconstructed_state.json"), state_record(res.rho, cfg.mle.dim_per_mode, 2, meta))
        pops = qubit_report(res.rho, t).populations
        log.info(
            "%s: %d iterations, converged=%s, populations %.4f/%.4f/%.4f",
            t.name, res.iterations, res.converged, *pops,
        )
        if not res.converged:
            log.warning("%s: reconstruction did not converge (delta %.3g)", t.name, res.final_delta)
            run.converged = False


def _report_one(run: Run, t, samples, rho_rec, rho_phys):
    cfg = run.cfg
    single = replace(cfg.mle, dim_per_mode=cfg.single_mode_dim)
    qr = qubit_report(rho_rec, t)
    phis = np.linspace(-math.pi, math.pi, cfg.fringe_points, endpoint=False)
    fs = run.timed(
        "fringe", fringe_scan, samples, phis, single, seed=run.seed("fringe", t), workers=cfg.sampling.workers
    )
    rho_a, rho_b = run.timed("decompose", decompose_at_optimum, samples, t, single, seed=run.seed("decompose", t))
    xs, ps, w = wigner_grid(rho_a)
    grid = trace_grid(cfg.mzi)
    trace = run.timed(
        "trace", synthesize_variance_trace, rho_phys, cfg.mzi, cfg.sampling.trace_trials, grid, run.seed("trace", t)
    )
    report = {
        "qubit": qr.to_dict(),
        "fringe": {
            "visibility_d1": fs.visibility,
            "visibility_d2": fs.visibility_d2,
            "fit_visibility_d1": fs.fit_visibility,
            "fit_visibility_d2": fs.fit_visibility_d2,
            "d1_max_phase_rad": fs.d1_max_phase,
            "d1_min_phase_rad": fs.d1_min_phase,
            "converged": fs.converged,
        },
        "decomposition": {"output_a": single_mode_summary(rho_a), "output_b": single_mode_summary(rho_b)},
    }
    try:
        peaks = analyze_variance_trace(trace, cfg.mzi)
        report["trace"] = {
            "peak_times_s": list(peaks.times),
            "peak_heights": list(peaks.heights),
            "floor": peaks.floor,
            "separation_s": peaks.separation,
            "height_ratio": peaks.ratio,
        }
    except ValueError as exc:
        report["trace"] = {"error": str(exc)}
    rows = [(x, p, w[i, j]) for i, x in enumerate(xs) for j, p in enumerate(ps)]
    return report, fs.rows(), rows, list(zip(trace.grid, trace.values))


def cmd_report(run: Run):
    cfg = run.cfg
    inputs = []
    for t in cfg.targets:
        samples = read_csv(run.path(t, "samples.csv"), SAMPLE_HEADER, allow_empty=True)
        if len(samples) == 0:
            raise UsageError(f"{run.path(t, 'samples.csv')}: no samples to report on")
        rho_rec = _two_mode_state(run.path(t, "reconstructed_state.json"))
        rho_phys = _two_mode_state(run.path(t, "physical_state.json"))
        inputs.append((t, samples, rho_rec, rho_phys))
    outputs = [(t, *_report_one(run, t, *rest)) for t, *rest in inputs]
    for t, report, fringe, wigner, trace in outputs:
        write_json(run.path(t, "report.json"), report)
        write_csv(run.path(t, "fringe.csv"), ("phi_rad", "p1_d1", "p1_d2"), fringe)
        write_csv(run.path(t, "wigner.csv"), ("x", "p", "w"), wigner)
        write_csv(run.path(t, "trace.csv"), ("t_s", "variance"), trace)
        log.info(
            "%s: fidelity %.4f, visibility %.3f",
            t.name, report["qubit"]["fidelity"], report["fringe"]["visibility_d1"],
        )


STAGES = {
    "generate": (cmd_generate,),
    "sample": (cmd_sample,),
    "reconstruct": (cmd_reconstruct,),
    "report": (cmd_report,),
    "all": (cmd_generate, cmd_sample, cmd_reconstruct, cmd_report),
}


def write_manifest(run: Run):
    files = []
    for t in run.cfg.targets:
        for name in ARTIFACTS:
            p = run.path(t, name)
            if p.is_file():
                files.append({"path": f"{t.name}/{name}", "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    manifest = {
        "command": run.command,
        "seed": run.cfg.seed,
        "config": run.cfg.echo(),
        "versions": {
            "timebin": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": files,
        "timings_s": {k: round(v, 3) for k, v in sorted(run.timings.items())},
        "converged": run.converged,
    }
    write_json(run.out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON experiment config")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--dim", type=int, help="Fock dimension per mode for the two-mode reconstruction")
    common.add_argument("--samples", type=int, help="number of eight-port records")
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    parser = argparse.ArgumentParser(
        prog="timebin", description="Simulate and reconstruct heralded time-bin qubits."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    help_ = {
        "generate": "write ideal and physical density matrices",
        "sample": "draw eight-port records and tomography data",
        "reconstruct": "maximum-likelihood reconstruction of the two-mode state",
        "report": "fringe scan, decomposition, Wigner grid and variance trace",
        "all": "run every stage in order",
    }
    for name, h in help_.items():
        sub.add_parser(name, parents=[common], help=h)
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        from .io import parse_config

        cfg = parse_config("", "toml", "<defaults>")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if args.dim is not None:
        if args.dim < 2:
            raise UsageError("--dim must be at least 2")
        cfg = replace(cfg, mle=replace(cfg.mle, dim_per_mode=args.dim))
    if args.samples is not None:
        if args.samples < 1:
            raise UsageError("--samples must be at least 1")
        cfg = replace(cfg, sampling=replace(cfg.sampling, samples=args.samples))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = resolve_config(args)
        run = Run(cfg, args.command)
        for stage in STAGES[args.command]:
            stage(run)
        write_manifest(run)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataFileError, DataError, InvalidStateError, DimensionError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK if run.converged else EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
