"""From MZI settings and an efficiency budget to heralded two-mode states.

The ideal heralded state of an unbalanced Mach-Zehnder idler filter is the
time-bin qubit ``c0|1,0> + c1 e^{iΦ}|0,1>``.  The physical model mixes in a
two-photon component, applies optical loss to both time bins, optionally
dephases the relative phase, and finally mixes in vacuum for dark-count
heralds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .fock import (
    DimensionError,
    apply_loss_channel,
    apply_phase_jitter,
    basis_ket,
    check_density_matrix,
)

NORM_TOL = 1e-10


def _wrap_phase(phi: float) -> float:
    """Map to (-π, π]."""
    w = math.remainder(phi, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class MziConfig:
    tau1: float
    rho1: float
    tau2: float
    rho2: float
    phi2: float = 0.0
    delta_t: float = 242e-9
    gamma: float = 2 * math.pi * 6.2e6

    def __post_init__(self):
        for i, (t, r) in enumerate(((self.tau1, self.rho1), (self.tau2, self.rho2)), start=1):
            if abs(t * t + r * r - 1.0) > NORM_TOL:
                raise ValueError(f"BS-{i}: tau^2 + rho^2 = {t * t + r * r!r}, expected 1")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def from_intensities(cls, t1_sq: float, t2_sq: float, phi2: float = 0.0, **kw) -> "MziConfig":
        """Build from intensity transmissions ``τ1²`` and ``τ2²``."""
        return cls(math.sqrt(t1_sq), math.sqrt(1 - t1_sq), math.sqrt(t2_sq), math.sqrt(1 - t2_sq), phi2, **kw)


@dataclass(frozen=True)
class TimeBinQubitSpec:
    c0: float
    c1: float
    phi: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise ValueError("qubit amplitudes must be non-negative")
        if abs(self.c0**2 + self.c1**2 - 1.0) > NORM_TOL:
            raise ValueError(f"c0^2 + c1^2 = {self.c0**2 + self.c1**2!r}, expected 1")

    @classmethod
    def from_weights(cls, w0: float, w1: float, phi: float = 0.0, name: str = "") -> "TimeBinQubitSpec":
        """Normalize the unnormalized amplitudes ``w0, w1``."""
        norm = math.hypot(w0, w1)
        return cls(w0 / norm, w1 / norm, phi, name)

    def ket(self, d: int = 2) -> np.ndarray:
        """Two-mode ket ``c0|1,0> + c1 e^{iΦ}|0,1>``."""
        return self.c0 * basis_ket(d, 1, 0) + self.c1 * np.exp(1j * self.phi) * basis_ket(d, 0, 1)

    def qubit_vector(self) -> np.ndarray:
        """Amplitudes on the ordered basis ``(|1,0>, |0,1>)``."""
        return np.array([self.c0, self.c1 * np.exp(1j * self.phi)])

    def two_photon_ket(self, d: int) -> np.ndarray:
        """Normalized ``(c0 a1† + c1 e^{iΦ} a2†)² |0,0>``."""
        if d < 3:
            raise DimensionError("two-photon component needs d >= 3")
        e = np.exp(1j * self.phi)
        ket = (
            self.c0**2 * math.sqrt(2) * basis_ket(d, 2, 0)
            + 2 * self.c0 * self.c1 * e * basis_ket(d, 1, 1)
            + self.c1**2 * e**2 * math.sqrt(2) * basis_ket(d, 0, 2)
        )
        return ket / math.sqrt(2)


def _spec_from_amplitudes(a: complex, b: complex) -> TimeBinQubitSpec:
    norm = math.hypot(abs(a), abs(b))
    if norm == 0:
        raise ValueError("degenerate MZI setting: both time-bin amplitudes vanish")
    if abs(a) == 0:
        phi = np.angle(b)
    elif abs(b) == 0:
        phi = 0.0
    else:
        phi = np.angle(b) - np.angle(a)
    return TimeBinQubitSpec(abs(a) / norm, abs(b) / norm, _wrap_phase(float(phi)))


def qubit_from_mzi(cfg: MziConfig) -> TimeBinQubitSpec:
    """Qubit heralded at the detected BS-2 port.

    The amplitudes are ``τ1τ2`` and ``−ρ1ρ2 e^{iΦ2}``; the minus sign is folded
    into the phase, so positive amplitudes give ``Φ = Φ2 + π``.
    """
    a = cfg.tau1 * cfg.tau2
    b = -cfg.rho1 * cfg.rho2 * np.exp(1j * cfg.phi2)
    return _spec_from_amplitudes(a, b)


def other_port_qubit(cfg: MziConfig) -> TimeBinQubitSpec:
    """Qubit heralded at the other BS-2 port: ``τ1ρ2 |1,0> + ρ1τ2 e^{iΦ2} |0,1>``."""
    a = cfg.tau1 * cfg.rho2
    b = cfg.rho1 * cfg.tau2 * np.exp(1j * cfg.phi2)
    return _spec_from_amplitudes(a, b)


def port_probabilities(cfg: MziConfig) -> tuple[float, float]:
    """Unnormalized herald weights of the two BS-2 ports (they sum to one)."""
    p_main = (cfg.tau1 * cfg.tau2) ** 2 + (cfg.rho1 * cfg.rho2) ** 2
    p_other = (cfg.tau1 * cfg.rho2) ** 2 + (cfg.rho1 * cfg.tau2) ** 2
    return p_main, p_other


# ---------------------------------------------------------------------------
# temporal modes


@dataclass(frozen=True)
class ModeFunction:
    gamma: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def __call__(self, t):
        return temporal_mode_eval(self, t)


def temporal_mode_eval(f: ModeFunction, t):
    """``√γ exp(−γ |t + offset|)`` in units of s^-1/2."""
    t = np.asarray(t, dtype=float)
    return np.sqrt(f.gamma) * np.exp(-f.gamma * np.abs(t + f.offset))


def mode_norm_on_grid(f: ModeFunction, t) -> float:
    """``∫ |f|² dt`` by Simpson's rule on the uniform grid ``t``.

    Keep the cusp at ``t = −offset`` on an even node so each Simpson panel
    sees a smooth integrand.
    """
    t = np.asarray(t, dtype=float)
    return float(integrate.simpson(temporal_mode_eval(f, t) ** 2, x=t))


def time_bin_modes(cfg: MziConfig) -> tuple[ModeFunction, ModeFunction]:
    """Early (f1) and delayed-herald (f2) mode functions; f2 peaks at ``t = −Δt``."""
    return ModeFunction(cfg.gamma, 0.0), ModeFunction(cfg.gamma, cfg.delta_t)


def mode_overlap(cfg: MziConfig) -> float:
    """Closed form of ``∫ f1 f2 dt`` = ``(1 + γΔt) e^{−γΔt}``."""
    x = cfg.gamma * cfg.delta_t
    return (1 + x) * math.exp(-x)


def mode_overlap_numeric(gamma: float, delta_t: float) -> float:
    """Adaptive quadrature of ``∫ f1 f2 dt``, split at the two cusps."""
    f1, f2 = ModeFunction(gamma, 0.0), ModeFunction(gamma, delta_t)

    def integrand(t):
        return float(f1(t) * f2(t))

    span = 60.0 / gamma
    edges = [-delta_t - span, -delta_t, 0.0, span]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi > lo:
            val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += val
    return total


# ---------------------------------------------------------------------------
# imperfections


@dataclass(frozen=True)
class ImperfectionBudget:
    """Efficiencies, herald count rates and the multiphoton admixture.

    ``eta_apd`` may be given directly (the published value is rounded) or
    derived from ``zeta_tot`` and ``zeta_dark``; if both are given they must
    agree to 1e-6.  ``phase_jitter`` is the rms relative-phase drift in
    radians (off by default).
    """

    eta_nopo: float = 1.0
    eta_vis: float = 1.0
    eta_pr: float = 1.0
    eta_det: float = 1.0
    eta_apd: Optional[float] = None
    zeta_tot: Optional[float] = None
    zeta_dark: Optional[float] = None
    p_multi: float = 0.0
    phase_jitter: float = 0.0

    def __post_init__(self):
        for name in ("eta_nopo", "eta_vis", "eta_pr", "eta_det", "p_multi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.eta_apd is not None and not 0.0 <= self.eta_apd <= 1.0:
            raise ValueError(f"eta_apd must lie in [0, 1], got {self.eta_apd!r}")
        if (self.zeta_tot is None) != (self.zeta_dark is None):
            raise ValueError("give both zeta_tot and zeta_dark, or neither")
        if self.zeta_tot is not None:
            if not self.zeta_tot > 0 or self.zeta_dark < 0:
                raise ValueError("count rates must be positive")
            if self.zeta_dark > self.zeta_tot:
                raise ValueError("zeta_dark exceeds zeta_tot")
            derived = (self.zeta_tot - self.zeta_dark) / self.zeta_tot
            if self.eta_apd is not None and abs(derived - self.eta_apd) > 1e-6:
                raise ValueError(
                    f"eta_apd={self.eta_apd!r} inconsistent with count rates ({derived:.6f})"
                )
        if self.phase_jitter < 0:
            raise ValueError("phase_jitter must be non-negative")

    @property
    def herald_purity(self) -> float:
        """η_APD: fraction of herald events that are genuine."""
        if self.eta_apd is not None:
            return self.eta_apd
        if self.zeta_tot is not None:
            return (self.zeta_tot - self.zeta_dark) / self.zeta_tot
        return 1.0

    @property
    def eta_optical(self) -> float:
        return self.eta_nopo * self.eta_vis**2 * self.eta_pr * self.eta_det


def overall_efficiency(b: ImperfectionBudget) -> float:
    """η_all = η_NOPO η_vis² η_pr η_det η_APD."""
    return b.eta_optical * b.herald_purity


def build_physical_state(spec: TimeBinQubitSpec, b: ImperfectionBudget, d: int = 4) -> np.ndarray:
    """Heralded two-mode density matrix under the imperfection budget.

    Order of operations: two-photon admixture, optical loss on both modes,
    relative-phase jitter, then vacuum mixed in with weight ``1 − η_APD``.
    """
    if d < 2:
        raise DimensionError("need d >= 2 for a time-bin qubit")
    psi = spec.ket(d)
    rho = np.outer(psi, psi.conj())
    if b.p_multi > 0:
        psi2 = spec.two_photon_ket(d)
        rho = (1 - b.p_multi) * rho + b.p_multi * np.outer(psi2, psi2.conj())
    rho = apply_loss_channel(rho, b.eta_optical, modes=2)
    if b.phase_jitter > 0:
        rho = apply_phase_jitter(rho, b.phase_jitter)
    w = b.herald_purity
    vac = np.zeros_like(rho)
    vac[0, 0] = 1.0
    rho = w * rho + (1 - w) * vac
    return check_density_matrix((rho + rho.conj().T) / 2)


def expected_populations(b: ImperfectionBudget) -> tuple[float, float, float]:
    """Analytic (vacuum, qubit, multiphoton) populations of the physical model.

    Loss acts on the single heralded mode, so the populations do not depend
    on the qubit amplitudes.
    """
    eta, w, p = b.eta_optical, b.herald_purity, b.p_multi
    vac = w * ((1 - p) * (1 - eta) + p * (1 - eta) ** 2) + (1 - w)
    qubit = w * ((1 - p) * eta + 2 * p * eta * (1 - eta))
    return vac, qubit, 1 - vac - qubit


def calibrate_p_multi(b: ImperfectionBudget, multiphoton: float) -> float:
    """Admixture weight giving the requested multiphoton population (``w p η²``)."""
    weight = b.herald_purity * b.eta_optical**2
    p = multiphoton / weight
    if not 0 <= p <= 1:
        raise ValueError(f"multiphoton population {multiphoton} unreachable with this budget")
    return p


def jitter_for_visibility(visibility: float) -> float:
    """rms phase drift whose dephasing factor ``exp(−σ²/2)`` equals ``visibility``."""
    if not 0 < visibility <= 1:
        raise ValueError("visibility must lie in (0, 1]")
    return math.sqrt(-2 * math.log(visibility))


# ---------------------------------------------------------------------------
# published operating point

PUBLISHED_GAMMA = 2 * math.pi * 6.2e6
PUBLISHED_DELAY = 242e-9
PUBLISHED_MULTIPHOTON = 0.05
PUBLISHED_VISIBILITY = 0.96


def published_budget(*, with_jitter: bool = True) -> ImperfectionBudget:
    """Published efficiencies with ``p_multi`` fit once to the 5% multiphoton weight.

    The rounded η_APD = 0.98 is used rather than the value implied by the count
    rates.  With ``with_jitter`` the phase drift reproduces a 96% fringe
    visibility.
    """
    base = ImperfectionBudget(eta_nopo=0.98, eta_vis=0.98, eta_pr=0.96, eta_det=0.95, eta_apd=0.98)
    p = calibrate_p_multi(base, PUBLISHED_MULTIPHOTON)
    jitter = jitter_for_visibility(PUBLISHED_VISIBILITY) if with_jitter else 0.0
    return ImperfectionBudget(
        eta_nopo=0.98, eta_vis=0.98, eta_pr=0.96, eta_det=0.95, eta_apd=0.98, p_multi=p, phase_jitter=jitter
    )


def published_targets() -> list[TimeBinQubitSpec]:
    """The eight generated qubits: 1:1 and 2:1 amplitudes, Φ ∈ {0, π, ±π/2}."""
    out = []
    for w0, label in ((1.0, "bal"), (2.0, "two")):
        for phi, pname in ((0.0, "0"), (math.pi, "pi"), (math.pi / 2, "+pi2"), (-math.pi / 2, "-pi2")):
            out.append(TimeBinQubitSpec.from_weights(w0, 1.0, phi, name=f"{label}_{pname}"))
    return out
