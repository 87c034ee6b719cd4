"""Eight-port homodyne (heterodyne) measurement simulation.

Quadrature records are stored in *unit-gain* form: for each mode the pair
``(x, p) = √2 (Re α, Im α)`` where ``α`` is distributed according to the Q
function.  Vacuum therefore gives variance 1 per coordinate, i.e. the
homodyne variance 1/2 plus the extra half unit added by the 50/50 split.

Sample arrays have columns ``x1, p1, x2, p2`` (or ``x, p`` for one mode);
tomography arrays have columns ``theta1, x1, theta2, x2`` with phases in
``[0, π)``.  Phases are only drawn on ``[0, π)`` because ``x(θ + π) = −x(θ)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import gammaincc

from .fock import check_density_matrix, coherent_amplitudes, hermite_functions, mode_dim
from .generation import MziConfig, time_bin_modes

CHUNK_SIZE = 8192


class QuadratureSample(NamedTuple):
    x1: float
    p1: float
    x2: float
    p2: float


class TomographyDatum(NamedTuple):
    theta1: float
    x1: float
    theta2: float
    x2: float


class SamplerError(RuntimeError):
    """The rejection envelope was violated; indicates a bug, not bad luck."""


# ---------------------------------------------------------------------------
# generic rejection machinery


def _envelope_peak(ratio: Callable[[np.ndarray], np.ndarray], upper: float) -> float:
    """Maximum of a smooth one-dimensional ratio on ``[0, upper]``."""
    grid = np.linspace(0.0, upper, 4001)
    vals = ratio(grid)
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = float(vals[i])
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda u: -float(ratio(np.array([u]))[0]), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        best = max(best, -float(res.fun))
    return best


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.SeedSequence(int(seed))


def _chunked(n: int, seed, fill: Callable[[np.random.Generator, int], np.ndarray], workers: int) -> np.ndarray:
    """Run ``fill`` on fixed-size chunks, each with its own spawned stream.

    The output depends only on ``seed`` and ``n``, never on ``workers``.
    """
    if n < 1:
        raise ValueError("sample count must be at least 1")
    sizes = [CHUNK_SIZE] * (n // CHUNK_SIZE)
    if n % CHUNK_SIZE:
        sizes.append(n % CHUNK_SIZE)
    children = _seed_sequence(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(c), k) for c, k in zip(children, sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fill(*job), jobs))
    else:
        parts = [fill(*job) for job in jobs]
    return np.concatenate(parts, axis=0)


def _rejection_fill(rng, k, *, dim, std, bound, density, squeeze=None):
    """Draw ``k`` accepted points of a ``dim``-dimensional density.

    ``bound`` is the envelope constant for the isotropic normal proposal with
    per-coordinate standard deviation ``std``.  ``squeeze`` is an optional
    cheap pointwise upper bound of ``density``; points whose uniform draw
    already exceeds it are rejected without evaluating ``density``.
    """
    out = []
    have = 0
    log_norm = -0.5 * dim * math.log(2 * math.pi * std**2)
    while have < k:
        batch = int((k - have) * bound * 1.1) + 64
        pts = rng.normal(scale=std, size=(batch, dim))
        u = rng.random(batch)
        g = np.exp(log_norm - 0.5 * np.sum(pts**2, axis=1) / std**2)
        if squeeze is not None:
            upper = squeeze(pts) / (bound * g)
            if np.any(upper > 1.0 + 1e-9):
                raise SamplerError(f"rejection bound violated (ratio {upper.max():.6f})")
            keep = u < upper
            pts, u, g = pts[keep], u[keep], g[keep]
        ratio = density(pts) / (bound * g)
        if np.any(ratio > 1.0 + 1e-9):
            raise SamplerError(f"rejection bound violated (ratio {ratio.max():.6f})")
        acc = pts[u < ratio]
        out.append(acc)
        have += len(acc)
    return np.concatenate(out)[:k]


# ---------------------------------------------------------------------------
# Q-function sampling


def q_function(rho: np.ndarray, records: np.ndarray, modes: int = 2) -> np.ndarray:
    """Density of unit-gain records under ``ρ``: ``<α|ρ|α> / (2π)^modes``.

    With ``α = (x + ip)/√2``, ``d²α = dx dp / 2``, so the Q function
    ``<α|ρ|α>/π`` per mode becomes ``<α|ρ|α>/(2π)`` in record units.
    """
    rho = np.asarray(rho, dtype=complex)
    d = mode_dim(rho, modes)
    records = np.atleast_2d(records)
    alpha = (records[:, 0::2] + 1j * records[:, 1::2]) / np.sqrt(2)
    v = coherent_amplitudes(alpha[:, 0], d)
    if modes == 2:
        v2 = coherent_amplitudes(alpha[:, 1], d)
        v = (v[:, :, None] * v2[:, None, :]).reshape(len(records), d * d)
    # <α|ρ|α> = Σ conj(v_i) ρ_ij v_j
    val = np.sum((v.conj() @ rho) * v, axis=1).real
    return np.clip(val, 0.0, None) / (2 * np.pi) ** modes


def _q_envelope(rho, d, modes, var):
    """Envelope constant for the Q density against N(0, var) per coordinate."""
    lam = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[-1])

    def per_mode(r2):
        # ||P_d|α>||² = Σ_{n<d} e^{-u} uⁿ/n! with u = |α|² = r²/2, over the 2D proposal
        return gammaincc(d, r2 / 2) * var * np.exp(0.5 * r2 / var)

    peak = _envelope_peak(per_mode, upper=40.0 * var)
    return lam * peak**modes * (1 + 1e-9)


def sample_q_function(rho, n: int, seed, *, modes: int = 2, workers: int = 1) -> np.ndarray:
    """Draw ``n`` eight-port records from the Q function of ``rho``.

    Rejection sampling with an isotropic normal proposal of variance
    ``1 + n_max`` per quadrature.  The envelope uses
    ``<α|ρ|α> <= λ_max ||P_d|α>||²``, which holds everywhere, so any
    envelope violation raises :class:`SamplerError`.
    """
    rho = check_density_matrix(rho)
    d = mode_dim(rho, modes)
    var = float(d)  # 1 + n_max
    bound = _q_envelope(rho, d, modes, var)
    lam = float(np.linalg.eigvalsh(rho)[-1])

    def squeeze(pts):
        r2 = pts[:, 0::2] ** 2 + pts[:, 1::2] ** 2
        return lam * np.prod(gammaincc(d, r2 / 2) / (2 * np.pi), axis=1)

    def fill(rng, k):
        return _rejection_fill(
            rng, k, dim=2 * modes, std=math.sqrt(var), bound=bound,
            density=lambda pts: q_function(rho, pts, modes), squeeze=squeeze,
        )

    return _chunked(n, seed, fill, workers)


# ---------------------------------------------------------------------------
# homodyne sampling (used for the time trace)


def homodyne_density(rho: np.ndarray, xs: np.ndarray, modes: int = 2) -> np.ndarray:
    """Joint density of ideal homodyne outcomes at phase 0."""
    rho = np.asarray(rho, dtype=complex)
    d = mode_dim(rho, modes)
    xs = np.atleast_2d(xs)
    v = hermite_functions(xs[:, 0], d)
    if modes == 2:
        v2 = hermite_functions(xs[:, 1], d)
        v = (v[:, :, None] * v2[:, None, :]).reshape(len(xs), d * d)
    return np.clip(np.sum((v @ rho) * v, axis=1).real, 0.0, None)


def sample_homodyne(rho, n: int, seed, *, modes: int = 2, workers: int = 1) -> np.ndarray:
    """Ideal (unit-efficiency) homodyne samples of x at phase 0, one column per mode."""
    rho = check_density_matrix(rho)
    d = mode_dim(rho, modes)
    var = d - 0.5  # quadrature variance of |n_max>
    lam = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[-1])

    def per_mode(x):
        psi2 = (hermite_functions(x, d) ** 2).sum(axis=1)
        prop = np.exp(-0.5 * x**2 / var) / math.sqrt(2 * np.pi * var)
        return psi2 / prop

    bound = lam * _envelope_peak(per_mode, upper=12.0 * math.sqrt(var)) ** modes * (1 + 1e-9)

    def fill(rng, k):
        return _rejection_fill(
            rng, k, dim=modes, std=math.sqrt(var), bound=bound,
            density=lambda pts: homodyne_density(rho, pts, modes),
        )

    return _chunked(n, seed, fill, workers)


# ---------------------------------------------------------------------------
# tomography data


def quadrature_at_phase(x, p, theta):
    """``x cos θ + p sin θ``."""
    return np.asarray(x) * np.cos(theta) + np.asarray(p) * np.sin(theta)


def make_tomography_data(samples: np.ndarray, seed, *, modes: int = 2) -> np.ndarray:
    """Two phase-tagged data per record, at ``θ`` and the orthogonal ``θ + π/2``.

    Per record one phase per mode is drawn uniformly on ``[0, π)``; the
    second datum uses ``(θ + π/2) mod π``.  Rows ``2i`` and ``2i + 1`` come
    from record ``i``.  Output columns are ``theta1, x1[, theta2, x2]``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    if samples.shape[1] != 2 * modes:
        raise ValueError(f"expected {2 * modes} columns, got {samples.shape[1]}")
    rng = np.random.default_rng(_seed_sequence(seed))
    n = len(samples)
    theta = rng.uniform(0.0, np.pi, size=(n, modes))
    theta_perp = np.mod(theta + np.pi / 2, np.pi)
    out = np.empty((2 * n, 2 * modes))
    for j in range(modes):
        x, p = samples[:, 2 * j], samples[:, 2 * j + 1]
        out[0::2, 2 * j] = theta[:, j]
        out[0::2, 2 * j + 1] = quadrature_at_phase(x, p, theta[:, j])
        out[1::2, 2 * j] = theta_perp[:, j]
        out[1::2, 2 * j + 1] = quadrature_at_phase(x, p, theta_perp[:, j])
    return out


# ---------------------------------------------------------------------------
# quadrature-variance time trace


@dataclass(frozen=True)
class TimeTrace:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or grid.shape != values.shape:
            raise ValueError("grid and values must be matching 1-D arrays")
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
            raise ValueError("time grid must be uniform")
        if np.any(values < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


def phase_average(rho: np.ndarray) -> np.ndarray:
    """Average over a common random LO phase: keep blocks of equal total photon number."""
    d = mode_dim(rho, 2)
    total = np.add.outer(np.arange(d), np.arange(d)).ravel()
    return np.where(total[:, None] == total[None, :], rho, 0.0)


def trace_grid(cfg: MziConfig, step: float | None = None, margin: float = 8.0) -> np.ndarray:
    """Uniform grid covering both time bins with ``margin / γ`` on either side.

    The default step ``Δt / 100`` keeps ``t = 0`` and ``t = −Δt`` on grid
    nodes and stays below ``1/(10γ)`` for the published parameters.
    """
    if step is None:
        step = cfg.delta_t / 100
        while step > 1 / (10 * cfg.gamma):
            step /= 2
    lo = -cfg.delta_t - margin / cfg.gamma
    hi = margin / cfg.gamma
    k_lo = math.floor(lo / step)
    k_hi = math.ceil(hi / step)
    return np.arange(k_lo, k_hi + 1) * step


def synthesize_variance_trace(rho, cfg: MziConfig, n_trials: int, grid, seed) -> TimeTrace:
    """Per-time-point quadrature variance of synthesized homodyne photocurrents.

    Each trial draws ``(x1, x2)`` from the ideal homodyne statistics of
    ``rho`` with a uniformly random LO phase, then forms
    ``x(t) = Σ_j f_j(t) √dt x_j + n(t)``, where ``n(t)`` is vacuum filling the
    orthogonal complement with variance ``½ (1 − Σ_j f_j(t)² dt)``.  The
    vacuum floor is therefore ½.
    """
    rho = check_density_matrix(rho)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 3:
        raise ValueError("time grid needs at least three points")
    dt = float(grid[1] - grid[0])
    if not np.allclose(np.diff(grid), dt, rtol=1e-6, atol=0):
        raise ValueError("time grid must be uniform")
    if dt > 1 / (10 * cfg.gamma) * (1 + 1e-9):
        raise ValueError(f"grid step {dt:.3e} s is coarser than 1/(10 gamma) = {1 / (10 * cfg.gamma):.3e} s")
    if grid[0] > -cfg.delta_t - 1 / cfg.gamma or grid[-1] < 1 / cfg.gamma:
        raise ValueError("time grid must span both time bins")
    if n_trials < 2:
        raise ValueError("need at least two trials for a variance")

    ss = _seed_sequence(seed)
    quad_seed, noise_seed = ss.spawn(2)
    xs = sample_homodyne(phase_average(rho), n_trials, quad_seed, modes=2)
    f1, f2 = time_bin_modes(cfg)
    w1 = f1(grid) * math.sqrt(dt)
    w2 = f2(grid) * math.sqrt(dt)
    resid = 0.5 * (1 - w1**2 - w2**2)
    if np.any(resid < 0):
        raise ValueError("grid too coarse: mode weights exceed unity")
    rng = np.random.default_rng(noise_seed)
    variances = np.empty(len(grid))
    for k in range(len(grid)):
        x = w1[k] * xs[:, 0] + w2[k] * xs[:, 1] + math.sqrt(resid[k]) * rng.standard_normal(n_trials)
        variances[k] = np.var(x, ddof=1)
    return TimeTrace(grid, variances)
