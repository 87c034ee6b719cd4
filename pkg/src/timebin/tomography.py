"""Maximum-likelihood state reconstruction from phase-tagged quadratures.

The measurement model carries the extra vacuum noise of the eight-port
detector: each recorded quadrature is a homodyne outcome convolved with a
centered Gaussian of variance 1/2.  Compensating that noise therefore
happens inside the POVM rather than by deconvolving data.

Data are binned: phases into ``theta_bins`` equal bins on ``[0, π)``
(each represented by its center) and quadratures into bins of
``x_bin_width`` covering ``[-x_range, x_range]``.  The estimator depends on
the data only through the bin counts, so it is invariant under reordering.

Two-mode POVM elements are products ``Π₁ ⊗ Π₂``.  Each single-mode element
is expanded in a real orthonormal basis of Hermitian matrices, ``Π = Σ h_a
B_a``; then ``Tr[(Π₁ ⊗ Π₂) ρ] = h₁ᵀ G h₂`` with ``G_ab = Tr[(B_a ⊗ B_b) ρ]``
and the R operator only needs ``C = H₁ᵀ diag(w) H₂``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .fock import coherent_amplitudes, hermite_functions, trace_distance

NOISE_VAR = 0.5
LIKELIHOOD_SLACK = 1e-9
_Y_HALF_WIDTH = 14.0
_Y_STEP = 0.01


class DataError(ValueError):
    """Tomography input that cannot be binned or is empty."""


@dataclass(frozen=True)
class MleConfig:
    """Binning and iteration settings.

    ``x_range`` is the half-width of the binned quadrature window.  With
    ``tail_bins`` two semi-infinite bins catch data beyond the window;
    otherwise such data are rejected.
    """

    dim_per_mode: int = 3
    x_bin_width: float = 0.1
    x_range: float = 6.0
    theta_bins: int = 36
    max_iterations: int = 2000
    convergence_tol: float = 1e-7
    tail_bins: bool = False

    def __post_init__(self):
        if self.dim_per_mode < 1:
            raise ValueError("dim_per_mode must be positive")
        if not (self.x_bin_width > 0 and self.x_range > 0):
            raise ValueError("x_bin_width and x_range must be positive")
        nx = 2 * self.x_range / self.x_bin_width
        if abs(nx - round(nx)) > 1e-9 * nx:
            raise ValueError("2·x_range must be a whole number of bins")
        if self.theta_bins < 1 or self.max_iterations < 1:
            raise ValueError("theta_bins and max_iterations must be positive")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")

    @property
    def x_bin_count(self) -> int:
        return int(round(2 * self.x_range / self.x_bin_width))

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(-self.x_range, self.x_range, self.x_bin_count + 1)

    @property
    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.theta_bins) + 0.5) * np.pi / self.theta_bins

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PovmBin:
    theta_index: int
    x_index: int
    operator: np.ndarray


@dataclass
class ReconstructionResult:
    rho: np.ndarray
    iterations: int
    final_delta: float
    log_likelihood: float
    converged: bool
    dilutions: int = 0
    config: dict = field(default_factory=dict)
    likelihood_history: list = field(default_factory=list, repr=False)

    def metadata(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_delta": self.final_delta,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "dilutions": self.dilutions,
            "config": self.config,
        }


# ---------------------------------------------------------------------------
# POVM elements


@lru_cache(maxsize=16)
def _y_grid(d: int):
    y = np.arange(-_Y_HALF_WIDTH, _Y_HALF_WIDTH + _Y_STEP / 2, _Y_STEP)
    psi = hermite_functions(y, d)
    w = np.full(len(y), _Y_STEP)
    w[0] = w[-1] = _Y_STEP / 2
    return y, psi * np.sqrt(w)[:, None]


def _bin_kernel(lo: np.ndarray, hi: np.ndarray, d: int) -> np.ndarray:
    """``∫ ψ_m ψ_n(y) [Φ((hi−y)/σ) − Φ((lo−y)/σ)] dy`` for each bin; shape (bins, d, d)."""
    y, psi = _y_grid(d)
    sigma = math.sqrt(NOISE_VAR)
    mass = ndtr((hi[:, None] - y) / sigma) - ndtr((lo[:, None] - y) / sigma)
    return np.einsum("by,ym,yn->bmn", mass, psi, psi)


def _density_kernel(x: np.ndarray, d: int) -> np.ndarray:
    y, psi = _y_grid(d)
    g = np.exp(-((x[:, None] - y) ** 2) / (2 * NOISE_VAR)) / math.sqrt(2 * np.pi * NOISE_VAR)
    return np.einsum("by,ym,yn->bmn", g, psi, psi)


def _phase_factor(theta, d: int) -> np.ndarray:
    n = np.arange(d)
    return np.exp(1j * np.subtract.outer(n, n) * theta)


def quadrature_povm_element(theta: float, x_bin, d: int) -> np.ndarray:
    """POVM element for a quadrature bin ``(lo, hi)`` at phase ``theta``.

    A scalar ``x_bin`` gives the element's density at that point instead.
    Infinite bin edges are allowed.
    """
    if np.ndim(x_bin) == 0:
        k = _density_kernel(np.array([float(x_bin)]), d)[0]
    else:
        lo, hi = map(float, x_bin)
        if not lo < hi:
            raise ValueError(f"empty bin ({lo}, {hi})")
        k = _bin_kernel(np.array([lo]), np.array([hi]), d)[0]
    return _phase_factor(theta, d) * k


def povm_bins(cfg: MleConfig) -> list[PovmBin]:
    """All single-mode POVM elements of a binning, tails included if enabled."""
    lo, hi = _bin_bounds(cfg)
    kern = _bin_kernel(lo, hi, cfg.dim_per_mode)
    out = []
    for t, theta in enumerate(cfg.theta_centers):
        ph = _phase_factor(theta, cfg.dim_per_mode)
        out.extend(PovmBin(t, j, ph * kern[j]) for j in range(len(lo)))
    return out


def coherent_povm_element(alpha1: complex, alpha2: complex | None, d: int) -> np.ndarray:
    """Rank-one ``|α₁,α₂⟩⟨α₁,α₂|`` from truncated amplitudes (single mode if ``alpha2`` is None)."""
    v = coherent_amplitudes(alpha1, d)
    if alpha2 is not None:
        v = np.kron(v, coherent_amplitudes(alpha2, d))
    return np.outer(v, v.conj())


# ---------------------------------------------------------------------------
# Hermitian basis and binning


@lru_cache(maxsize=16)
def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal (Hilbert-Schmidt) basis of d×d Hermitian matrices, shape (d², d, d)."""
    basis = []
    for k in range(d):
        b = np.zeros((d, d), complex)
        b[k, k] = 1
        basis.append(b)
    s = 1 / math.sqrt(2)
    for j in range(d):
        for k in range(j + 1, d):
            b = np.zeros((d, d), complex)
            b[j, k] = b[k, j] = s
            basis.append(b)
            b = np.zeros((d, d), complex)
            b[j, k] = 1j * s
            b[k, j] = -1j * s
            basis.append(b)
    out = np.array(basis)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _operator_basis(d: int, modes: int) -> np.ndarray:
    """Flattened ``B_a`` or ``B_a ⊗ B_b`` as rows; shape (d^(2·modes), d^(2·modes))."""
    B = hermitian_basis(d)
    if modes == 1:
        ops = B.reshape(len(B), -1)
    else:
        ops = np.einsum("aij,bkl->abikjl", B, B).reshape(len(B) ** 2, -1)
    ops = np.ascontiguousarray(ops)
    ops.setflags(write=False)
    return ops


def _bin_bounds(cfg: MleConfig):
    edges = cfg.x_edges
    lo, hi = edges[:-1], edges[1:]
    if cfg.tail_bins:
        lo = np.concatenate([[-np.inf], lo, [edges[-1]]])
        hi = np.concatenate([[edges[0]], hi, [np.inf]])
    return lo, hi


@lru_cache(maxsize=8)
def _coefficient_table(cfg: MleConfig) -> np.ndarray:
    """Real basis coefficients of every (θ-bin, x-bin) element; shape (cells, d²)."""
    d = cfg.dim_per_mode
    lo, hi = _bin_bounds(cfg)
    kern = _bin_kernel(lo, hi, d)
    basis = hermitian_basis(d)
    rows = []
    for theta in cfg.theta_centers:
        elems = _phase_factor(theta, d)[None] * kern
        rows.append(np.einsum("aji,bij->ba", basis, elems).real)
    table = np.concatenate(rows)
    table.setflags(write=False)
    return table


def _cell_index(theta: np.ndarray, x: np.ndarray, cfg: MleConfig) -> np.ndarray:
    """Map (θ, x) to flat cell indices; θ outside [0, π) folds with x → −x."""
    theta = np.mod(theta, 2 * np.pi)
    flip = theta >= np.pi
    theta = np.where(flip, theta - np.pi, theta)
    x = np.where(flip, -x, x)
    t = np.minimum((theta * cfg.theta_bins / np.pi).astype(np.int64), cfg.theta_bins - 1)
    nx = cfg.x_bin_count
    j = np.floor((x + cfg.x_range) / cfg.x_bin_width).astype(np.int64)
    j = np.where(x == cfg.x_range, nx - 1, j)
    outside = (x < -cfg.x_range) | (x > cfg.x_range)
    if cfg.tail_bins:
        j = np.where(x < -cfg.x_range, -1, np.where(x > cfg.x_range, nx, j)) + 1
        width = nx + 2
    else:
        if np.any(outside):
            i = int(np.flatnonzero(outside)[0])
            raise DataError(f"datum {i} has x={float(x[i])!r} outside ±{cfg.x_range}")
        width = nx
    return t * width + j


def _as_data(data, columns: int) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.size == 0:
        raise DataError("no tomography data")
    arr = np.atleast_2d(arr)
    if arr.shape[1] != columns:
        raise DataError(f"expected {columns} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DataError("tomography data contain non-finite values")
    return arr


# ---------------------------------------------------------------------------
# measurement models


class _QuadratureModel:
    # coefficient arrays are stored transposed, (d², cells), for contiguous reductions
    def __init__(self, data: np.ndarray, cfg: MleConfig):
        modes = data.shape[1] // 2
        ncell = len(_coefficient_table(cfg))
        cells = [_cell_index(data[:, 2 * j], data[:, 2 * j + 1], cfg) for j in range(modes)]
        code = cells[0] if modes == 1 else cells[0] * ncell + cells[1]
        uniq, counts = np.unique(code, return_counts=True)
        self._setup(uniq, counts.astype(float), cfg, modes)

    @classmethod
    def from_frequencies(cls, weights: np.ndarray, cfg: MleConfig, modes: int):
        """Model whose frequencies are given for every cell (flat, two-mode row-major)."""
        weights = np.asarray(weights, dtype=float).ravel()
        uniq = np.flatnonzero(weights > 0)
        self = cls.__new__(cls)
        self._setup(uniq, weights[uniq], cfg, modes)
        return self

    def _setup(self, uniq, counts, cfg, modes):
        self.d = cfg.dim_per_mode
        self.modes = modes
        self.basis = hermitian_basis(self.d)
        table = _coefficient_table(cfg)
        if modes == 1:
            self.h = [np.ascontiguousarray(table[uniq].T)]
        else:
            self.h = [np.ascontiguousarray(table[c].T) for c in (uniq // len(table), uniq % len(table))]
        self.freqs = counts / counts.sum()
        # rows are the flattened operators B_a (one mode) or B_a ⊗ B_b (two modes)
        self.ops = _operator_basis(self.d, modes)
        self.size = self.d**modes

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        g = (self.ops @ rho.T.ravel()).real
        if self.modes == 1:
            return g @ self.h[0]
        k = len(self.basis)
        gt = np.ascontiguousarray(g.reshape(k, k).T)  # a strided operand drops numpy off BLAS
        return np.einsum("an,an->n", gt @ self.h[0], self.h[1])

    def r_operator(self, w: np.ndarray) -> np.ndarray:
        if self.modes == 1:
            c = self.h[0] @ w
        else:
            c = ((self.h[0] * w) @ self.h[1].T).ravel()
        return (c @ self.ops).reshape(self.size, self.size)


class _CoherentModel:
    def __init__(self, samples: np.ndarray, d: int):
        modes = samples.shape[1] // 2
        alphas = [(samples[:, 2 * j] + 1j * samples[:, 2 * j + 1]) / math.sqrt(2) for j in range(modes)]
        v = coherent_amplitudes(alphas[0], d)
        if modes == 2:
            v2 = coherent_amplitudes(alphas[1], d)
            v = (v[:, :, None] * v2[:, None, :]).reshape(len(samples), d * d)
        self.v = v
        self.scale = np.pi**-modes
        self.freqs = np.full(len(samples), 1.0 / len(samples))

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return self.scale * np.einsum("ij,ij->i", self.v.conj(), self.v @ rho.T).real

    def r_operator(self, w: np.ndarray) -> np.ndarray:
        return self.scale * (self.v.T @ (w[:, None] * self.v.conj()))


def _loglik(freqs: np.ndarray, p: np.ndarray) -> float:
    hit = freqs > 0
    if np.any(p[hit] <= 0):
        return -math.inf
    return float(np.dot(freqs[hit], np.log(p[hit])))


def _normalized(m: np.ndarray) -> np.ndarray:
    m = (m + m.conj().T) / 2
    return m / np.trace(m).real


def _iterate(model, size: int, cfg: MleConfig, rho0=None) -> ReconstructionResult:
    f = model.freqs
    rho = np.eye(size, dtype=complex) / size if rho0 is None else np.asarray(rho0, dtype=complex)
    p = model.probabilities(rho)
    L = _loglik(f, p)
    eye = np.eye(size)
    delta = math.inf
    dilutions = 0
    converged = False
    history = [L]
    it = 0
    while it < cfg.max_iterations:
        it += 1
        R = model.r_operator(f / np.maximum(p, 1e-300))
        new = _normalized(R @ rho @ R)
        p_new = model.probabilities(new)
        L_new = _loglik(f, p_new)
        eps = 1.0
        while L_new < L - LIKELIHOOD_SLACK * max(1.0, abs(L)) and eps > 1e-8:
            # diluted step (I + εR)ρ(I + εR); small ε always increases L
            dilutions += 1
            Re = eye + eps * R
            new = _normalized(Re @ rho @ Re)
            p_new = model.probabilities(new)
            L_new = _loglik(f, p_new)
            eps /= 2
        if L_new < L - LIKELIHOOD_SLACK * max(1.0, abs(L)):
            break
        delta = trace_distance(new, rho)
        rho, p, L = new, p_new, L_new
        history.append(L)
        if delta < cfg.convergence_tol:
            converged = True
            break
    return ReconstructionResult(rho, it, float(delta), L, converged, dilutions, cfg.to_dict(), history)


# ---------------------------------------------------------------------------
# public estimators


def mle_reconstruct(data, cfg: MleConfig, rho0=None) -> ReconstructionResult:
    """Two-mode RρR reconstruction from rows ``(θ₁, x₁, θ₂, x₂)``."""
    model = _QuadratureModel(_as_data(data, 4), cfg)
    return _iterate(model, cfg.dim_per_mode**2, cfg, rho0)


def mle_reconstruct_single(data, cfg: MleConfig, rho0=None) -> ReconstructionResult:
    """Single-mode RρR reconstruction from rows ``(θ, x)``."""
    model = _QuadratureModel(_as_data(data, 2), cfg)
    return _iterate(model, cfg.dim_per_mode, cfg, rho0)


def mle_reconstruct_coherent(samples, cfg: MleConfig, *, modes: int = 2, rho0=None) -> ReconstructionResult:
    """RρR with the coherent-projector POVM on raw eight-port records.

    Each record ``(x, p)`` per mode is the outcome ``α = (x + ip)/√2``; no
    binning is applied.
    """
    model = _CoherentModel(_as_data(samples, 2 * modes), cfg.dim_per_mode)
    return _iterate(model, cfg.dim_per_mode**modes, cfg, rho0)


def log_likelihood(rho, data, cfg: MleConfig) -> float:
    """``Σ f_i ln Tr(Π_i ρ)`` over occupied bins; ``-inf`` if an occupied bin has zero probability."""
    arr = np.atleast_2d(np.asarray(data, dtype=float))
    model = _QuadratureModel(_as_data(arr, 2 if arr.shape[1] == 2 else 4), cfg)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[0] != cfg.dim_per_mode**model.modes:
        raise ValueError(f"state of size {rho.shape[0]} does not match d={cfg.dim_per_mode}")
    return _loglik(model.freqs, model.probabilities(rho))


def bin_probabilities(rho, cfg: MleConfig, modes: int = 1) -> np.ndarray:
    """Exact probabilities of every cell (two-mode: outer grid of cells), for oracles."""
    table = _coefficient_table(cfg)
    rho = np.asarray(rho, dtype=complex)
    g = (_operator_basis(cfg.dim_per_mode, modes) @ rho.T.ravel()).real
    if modes == 1:
        return table @ g
    k = table.shape[1]
    return table @ g.reshape(k, k) @ table.T


def cell_centers(cfg: MleConfig) -> np.ndarray:
    """Representative ``(θ, x)`` for each single-mode cell (tails at ±(range + width/2))."""
    lo, hi = _bin_bounds(cfg)
    lo = np.where(np.isinf(lo), hi - cfg.x_bin_width, lo)
    hi = np.where(np.isinf(hi), lo + cfg.x_bin_width, hi)
    xc = (lo + hi) / 2
    th = np.repeat(cfg.theta_centers, len(xc))
    return np.stack([th, np.tile(xc, cfg.theta_bins)], axis=1)
