"""Truncated Fock-space numerics for one and two bosonic modes.

Conventions shared by the whole package:

* hbar = 1, ``x = (a + a†)/√2``, ``p = (a − a†)/(i√2)``; vacuum variance 1/2.
* Two-mode states use mode-1-major flat indices, ``index = n1 * d + n2``.
* Beam splitters follow the replacement rule
  ``a1† → τ a1† − ρ e^{−iφ} a2†`` and ``a2† → ρ e^{iφ} a1† + τ a2†``.
* Density-matrix elements are ``rho[i, j] = <i|ρ|j>``; for the ket
  ``(|1,0> − i|0,1>)/√2`` this gives ``ρ_1001 = +0.5i`` and ``ρ_0110 = −0.5i``.

Everything here is a pure function of numpy arrays.  :class:`DensityMatrix`
is a small immutable wrapper that carries the mode count for validation and
serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_genlaguerre, gammaln


class DimensionError(ValueError):
    """Raised for inconsistent or too-small Fock truncations."""


class InvalidStateError(ValueError):
    """Raised when a matrix violates the density-matrix invariants."""


HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-9


# ---------------------------------------------------------------------------
# kets and basic operators


@dataclass(frozen=True)
class FockKet:
    amplitudes: np.ndarray
    dim_per_mode: int
    mode_count: int = 1

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if self.mode_count not in (1, 2):
            raise DimensionError("mode_count must be 1 or 2")
        if self.dim_per_mode < 1:
            raise DimensionError("dim_per_mode must be positive")
        if amps.shape != (self.dim_per_mode**self.mode_count,):
            raise DimensionError(
                f"expected {self.dim_per_mode**self.mode_count} amplitudes, got {amps.shape}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def normalized(self) -> "FockKet":
        norm = np.linalg.norm(self.amplitudes)
        if norm == 0:
            raise InvalidStateError("cannot normalize the zero vector")
        return FockKet(self.amplitudes / norm, self.dim_per_mode, self.mode_count)

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


def basis_ket(d: int, *photons: int) -> np.ndarray:
    """Fock basis vector |n1[, n2]> in a truncation of ``d`` levels per mode."""
    if not photons or len(photons) > 2:
        raise DimensionError("give one or two photon numbers")
    for n in photons:
        if not 0 <= n < d:
            raise DimensionError(f"photon number {n} outside truncation d={d}")
    vec = np.zeros(d ** len(photons), dtype=complex)
    idx = photons[0] if len(photons) == 1 else photons[0] * d + photons[1]
    vec[idx] = 1.0
    return vec


def annihilation_matrix(d: int) -> np.ndarray:
    """Truncated ladder operator with ``sqrt(n)`` at ``(n-1, n)``."""
    if d < 2:
        raise DimensionError(f"annihilation operator needs d >= 2, got {d}")
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(complex)


def tensor_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with mode 1 as the major index."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise DimensionError("tensor_product needs two kets or two operators")
    if a.ndim == 2 and (a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]):
        raise DimensionError("operators must be square")
    return np.kron(a, b)


def mode_dim(rho: np.ndarray, modes: int) -> int:
    """Per-mode truncation of a ``modes``-mode operator."""
    n = rho.shape[0]
    if modes == 1:
        return n
    d = math.isqrt(n)
    if d * d != n:
        raise DimensionError(f"size {n} is not a square; not a two-mode operator")
    return d


# ---------------------------------------------------------------------------
# validation and small helpers


def check_density_matrix(rho: np.ndarray, *, psd_tol: float = PSD_TOL) -> np.ndarray:
    """Return ``rho`` as a complex array after checking the invariants."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError(f"density matrix must be square, got {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=HERMITIAN_TOL, rtol=0):
        raise InvalidStateError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"trace is {tr!r}, expected 1")
    lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0]
    if lam < -psd_tol:
        raise InvalidStateError(f"smallest eigenvalue {lam:.3e} is negative")
    return rho


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a) - np.asarray(b)
    return 0.5 * float(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum())


def normalize_trace(rho: np.ndarray) -> np.ndarray:
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


# ---------------------------------------------------------------------------
# channels and unitaries


def partial_trace(rho: np.ndarray, keep: int) -> np.ndarray:
    """Reduced state of mode ``keep`` (0 or 1) of a two-mode operator."""
    if keep not in (0, 1):
        raise DimensionError(f"mode index must be 0 or 1, got {keep}")
    rho = np.asarray(rho)
    d = mode_dim(rho, 2)
    t = rho.reshape(d, d, d, d)
    if keep == 0:
        return np.einsum("ijkj->ik", t)
    return np.einsum("jijk->ik", t)


def beamsplitter_unitary(d: int, tau: float, rho: float, phi: float = 0.0) -> np.ndarray:
    """Two-mode Fock representation of the beam splitter, built block by block.

    Each input ``|n1, n2>`` is expanded as a polynomial in the transformed
    creation operators.  Outputs that leave the truncation are dropped, so
    only blocks with ``n1 + n2 <= d - 1`` are exactly unitary.
    """
    if d < 1:
        raise DimensionError("d must be positive")
    if abs(tau**2 + rho**2 - 1.0) > 1e-10:
        raise ValueError(f"tau^2 + rho^2 = {tau**2 + rho**2!r}, expected 1")
    u = np.zeros((d * d, d * d), dtype=complex)
    c1 = -rho * np.exp(-1j * phi)  # a1† -> tau a1† + c1 a2†
    c2 = rho * np.exp(1j * phi)  # a2† -> c2 a1† + tau a2†
    for n1 in range(d):
        for n2 in range(d):
            total = n1 + n2
            col = np.zeros(total + 1, dtype=complex)  # indexed by photons in mode 1
            for j in range(n1 + 1):
                a_part = math.comb(n1, j) * tau**j * c1 ** (n1 - j)
                for k in range(n2 + 1):
                    col[j + k] += a_part * math.comb(n2, k) * c2**k * tau ** (n2 - k)
            norm = 1.0 / math.sqrt(math.factorial(n1) * math.factorial(n2))
            for m1 in range(total + 1):
                m2 = total - m1
                if m1 < d and m2 < d:
                    amp = col[m1] * norm * math.sqrt(math.factorial(m1) * math.factorial(m2))
                    u[m1 * d + m2, n1 * d + n2] = amp
    return u


def loss_kraus(d: int, eta: float) -> list[np.ndarray]:
    """Kraus operators of the single-mode pure-loss channel."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must lie in [0, 1], got {eta!r}")
    ops = []
    for j in range(d):
        k = np.zeros((d, d))
        for n in range(j, d):
            k[n - j, n] = math.sqrt(math.comb(n, j) * eta ** (n - j) * (1 - eta) ** j)
        ops.append(k)
    return ops


def apply_loss_channel(rho: np.ndarray, eta: float, modes: int = 1) -> np.ndarray:
    """Bernoulli photon loss with the same efficiency on every mode."""
    rho = np.asarray(rho, dtype=complex)
    d = mode_dim(rho, modes)
    kraus = loss_kraus(d, eta)
    if eta == 1.0:
        return rho.copy()
    if modes == 1:
        return sum(k @ rho @ k.T for k in kraus)
    eye = np.eye(d)
    out = sum(np.kron(k, eye) @ rho @ np.kron(k, eye).T for k in kraus)
    return sum(np.kron(eye, k) @ out @ np.kron(eye, k).T for k in kraus)


def apply_phase_jitter(rho: np.ndarray, sigma: float) -> np.ndarray:
    """Average over a Gaussian random phase on mode 2 of a two-mode state.

    Equivalent to drawing an independent phase offset ``δ ~ N(0, σ²)`` per
    shot and applying ``exp(i δ n2)``: element ``(k,l),(m,n)`` picks up
    ``exp(-σ² (l - n)² / 2)``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rho = np.asarray(rho, dtype=complex)
    d = mode_dim(rho, 2)
    n2 = np.tile(np.arange(d), d)
    diff = n2[:, None] - n2[None, :]
    return rho * np.exp(-0.5 * sigma**2 * diff**2)


# ---------------------------------------------------------------------------
# derived quantities


def wigner_function(rho: np.ndarray, x, p) -> np.ndarray:
    """Wigner function of a single-mode state on the (x, p) plane.

    Normalized so that the vacuum gives ``1/π`` at the origin.  ``x`` and
    ``p`` broadcast against each other.
    """
    rho = np.asarray(rho, dtype=complex)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    alpha = (x + 1j * p) / np.sqrt(2)
    r2 = np.abs(alpha) ** 2
    gauss = np.exp(-2 * r2)
    w = np.zeros(np.broadcast(x, p).shape)
    d = rho.shape[0]
    for m in range(d):
        for n in range(m, d):
            if rho[m, n] == 0:
                continue
            k = n - m
            pref = (-1) ** m / np.pi * math.exp(0.5 * (gammaln(m + 1) - gammaln(n + 1)))
            term = pref * (2 * alpha) ** k * gauss * eval_genlaguerre(m, k, 4 * r2)
            if k == 0:
                w = w + (rho[m, n] * term).real
            else:
                w = w + 2 * (rho[m, n] * term).real
    return w


def wigner_at_origin(rho: np.ndarray) -> float:
    """Parity sum ``Σ (-1)^n P(n) / π``."""
    pn = np.real(np.diag(rho))
    return float(np.sum(pn * (-1.0) ** np.arange(len(pn))) / np.pi)


def fidelity(rho: np.ndarray, target) -> float:
    """Overlap ``<ψ|ρ|ψ>`` with a pure target (normalized here)."""
    rho = np.asarray(rho, dtype=complex)
    psi = target.amplitudes if isinstance(target, FockKet) else np.asarray(target, dtype=complex)
    if psi.shape != (rho.shape[0],):
        raise DimensionError(f"target of length {psi.shape} does not match rho {rho.shape}")
    psi = psi / np.linalg.norm(psi)
    f = float(np.real(psi.conj() @ rho @ psi))
    return min(max(f, 0.0), 1.0)


def photon_number_distribution(rho: np.ndarray, modes: int = 1) -> np.ndarray:
    """P(n); for two modes this is the distribution of the total photon number."""
    rho = np.asarray(rho)
    diag = np.clip(np.real(np.diag(rho)), 0.0, None)
    if modes == 1:
        return diag
    d = mode_dim(rho, 2)
    total = np.add.outer(np.arange(d), np.arange(d)).ravel()
    return np.bincount(total, weights=diag, minlength=2 * d - 1)


def coherent_amplitudes(alpha, d: int) -> np.ndarray:
    """Truncated coherent-state amplitudes ``e^{-|α|²/2} αⁿ/√n!``.

    ``alpha`` may be an array; the Fock index is the last axis.
    """
    alpha = np.asarray(alpha, dtype=complex)
    n = np.arange(d)
    log_norm = -0.5 * gammaln(n + 1)
    powers = alpha[..., None] ** n
    return np.exp(-0.5 * np.abs(alpha[..., None]) ** 2 + log_norm) * powers


def hermite_functions(x, d: int) -> np.ndarray:
    """Quadrature wavefunctions ``<x|n>`` for n < d (vacuum variance 1/2).

    Uses the stable three-term recurrence; the Fock index is the last axis.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (d,))
    out[..., 0] = np.pi**-0.25 * np.exp(-0.5 * x**2)
    if d > 1:
        out[..., 1] = np.sqrt(2.0) * x * out[..., 0]
    for n in range(2, d):
        out[..., n] = np.sqrt(2.0 / n) * x * out[..., n - 1] - np.sqrt((n - 1) / n) * out[..., n - 2]
    return out


# ---------------------------------------------------------------------------
# serialization


@dataclass(frozen=True)
class DensityMatrix:
    """Validated, immutable density matrix with its mode structure."""

    entries: np.ndarray
    dim_per_mode: int
    mode_count: int = 2

    def __post_init__(self):
        if self.mode_count not in (1, 2):
            raise DimensionError("mode_count must be 1 or 2")
        ent = check_density_matrix(self.entries)
        if ent.shape[0] != self.dim_per_mode**self.mode_count:
            raise DimensionError(
                f"{self.mode_count}-mode state with d={self.dim_per_mode} needs size "
                f"{self.dim_per_mode**self.mode_count}, got {ent.shape[0]}"
            )
        ent = ent.copy()
        ent.setflags(write=False)
        object.__setattr__(self, "entries", ent)

    def to_dict(self) -> dict:
        flat = self.entries.ravel()
        return {
            "dim_per_mode": self.dim_per_mode,
            "mode_count": self.mode_count,
            "entries": [[float(z.real), float(z.imag)] for z in flat],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DensityMatrix":
        try:
            d = int(data["dim_per_mode"])
            m = int(data["mode_count"])
            pairs = np.asarray(data["entries"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidStateError(f"malformed density-matrix record: {exc}") from exc
        size = d**m
        if pairs.shape != (size * size, 2):
            raise InvalidStateError(f"expected {size * size} [re, im] pairs, got {pairs.shape}")
        entries = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(size, size)
        return cls(entries, d, m)
