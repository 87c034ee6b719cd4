"""Post-measurement analysis: virtual beam splitter, fringes, qubit reports.

The virtual beam splitter mixes the recorded complex amplitudes
``α_j = (x_j + i p_j)/√2`` of the two time bins,

    α′₁ = τ′α₁ + ρ′e^{iφ}α₂,    α′₂ = −ρ′e^{−iφ}α₁ + τ′α₂,

which is the same as heterodyning the modes ``a′₁ = τ′a₁ + ρ′e^{iφ}a₂`` and
``a′₂ = −ρ′e^{−iφ}a₁ + τ′a₂``.  Output quadratures at any phase then follow
from :func:`timebin.eightport.quadrature_at_phase`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .eightport import QuadratureSample, TimeTrace, make_tomography_data
from .fock import check_density_matrix, mode_dim, wigner_at_origin, wigner_function
from .generation import MziConfig, TimeBinQubitSpec, time_bin_modes
from .tomography import MleConfig, mle_reconstruct_single

NORM_TOL = 1e-10


class SubmatrixError(ValueError):
    """The qubit block is empty, so it cannot be renormalized."""


@dataclass(frozen=True)
class VirtualBsParams:
    tau_p: float
    rho_p: float
    phi: float = 0.0

    def __post_init__(self):
        if abs(self.tau_p**2 + self.rho_p**2 - 1) > NORM_TOL:
            raise ValueError(f"tau_p² + rho_p² = {self.tau_p**2 + self.rho_p**2!r}, expected 1")

    def inverse(self) -> "VirtualBsParams":
        """Parameters of the inverse map (the adjoint of the 2×2 unitary)."""
        return VirtualBsParams(self.tau_p, self.rho_p, self.phi + math.pi)

    @classmethod
    def optimal(cls, spec: TimeBinQubitSpec) -> "VirtualBsParams":
        """``(c₀, c₁, −Φ)``: routes the whole photon of ``spec`` to output 1."""
        return cls(spec.c0, spec.c1, -spec.phi)

    def matrix(self) -> np.ndarray:
        t, r, e = self.tau_p, self.rho_p, np.exp(1j * self.phi)
        return np.array([[t, r * e], [-r / e, t]])


def virtual_beamsplitter(samples, p: VirtualBsParams):
    """Mix records; accepts one :class:`QuadratureSample` or an ``(n, 4)`` array."""
    single = isinstance(samples, QuadratureSample)
    arr = np.atleast_2d(np.asarray(samples, dtype=float))
    if arr.shape[1] != 4:
        raise ValueError(f"expected columns x1, p1, x2, p2; got {arr.shape[1]} columns")
    a1 = arr[:, 0] + 1j * arr[:, 1]
    a2 = arr[:, 2] + 1j * arr[:, 3]
    m = p.matrix()
    b1 = m[0, 0] * a1 + m[0, 1] * a2
    b2 = m[1, 0] * a1 + m[1, 1] * a2
    # the √2 scalings of α cancel because the map is linear
    out = np.column_stack([b1.real, b1.imag, b2.real, b2.imag])
    if single:
        return QuadratureSample(*map(float, out[0]))
    return out


def output_photon_fractions(spec: TimeBinQubitSpec, p: VirtualBsParams) -> tuple[float, float]:
    """Probability that the single photon of ``spec`` leaves in output 1 or 2."""
    c = np.array([spec.c0, spec.c1 * np.exp(1j * spec.phi)])
    amps = p.matrix() @ c
    return float(abs(amps[0]) ** 2), float(abs(amps[1]) ** 2)


# ---------------------------------------------------------------------------
# fringe scan and decomposition


def _check_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
        raise ValueError("need a nonempty (n, 4) array of quadrature records")
    return arr


def reconstruct_outputs(samples, p: VirtualBsParams, mle_cfg: MleConfig, seed=0):
    """Single-mode MLE of both virtual-BS outputs; returns two results."""
    mixed = virtual_beamsplitter(_check_samples(samples), p)
    out = []
    for j in range(2):
        data = make_tomography_data(mixed[:, 2 * j : 2 * j + 2], seed, modes=1)
        out.append(mle_reconstruct_single(data, mle_cfg))
    return out[0], out[1]


def visibility(values) -> float:
    """``(max − min)/(max + min)`` over the scanned values."""
    v = np.asarray(values, dtype=float)
    hi, lo = v.max(), v.min()
    return float((hi - lo) / (hi + lo)) if hi + lo > 0 else 0.0


def sinusoid_fit(phis, values) -> tuple[float, float, float]:
    """Least-squares ``A + B cos(φ − φ₀)``; returns ``(A, B, φ₀)`` with ``B ≥ 0``."""
    phis = np.asarray(phis, dtype=float)
    design = np.column_stack([np.ones_like(phis), np.cos(phis), np.sin(phis)])
    (a, c, s), *_ = np.linalg.lstsq(design, np.asarray(values, dtype=float), rcond=None)
    return float(a), float(math.hypot(c, s)), float(math.atan2(s, c))


@dataclass
class FringeScan:
    phis: np.ndarray
    p1_d1: np.ndarray
    p1_d2: np.ndarray
    visibility: float
    visibility_d2: float
    fit_visibility: float
    fit_visibility_d2: float
    d1_max_phase: float
    d1_min_phase: float
    converged: bool = True

    def rows(self):
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.phis, self.p1_d1, self.p1_d2)]


def fringe_scan(
    samples,
    phis,
    mle_cfg: MleConfig,
    *,
    seed=0,
    tau_p: float = 1 / math.sqrt(2),
    workers: int = 1,
) -> FringeScan:
    """Single-photon probability of both outputs versus the virtual-BS phase.

    One raw sample set serves every φ, so neighbouring points are correlated.
    ``visibility`` uses the grid extrema of D1; the sinusoid fit gives
    ``fit_visibility`` and the D1 maximum/minimum phases.
    """
    samples = _check_samples(samples)
    phis = np.asarray(phis, dtype=float)
    if phis.ndim != 1 or len(phis) < 2:
        raise ValueError("need at least two phases")
    rho_p = math.sqrt(max(0.0, 1 - tau_p**2))

    def one(phi):
        a, b = reconstruct_outputs(samples, VirtualBsParams(tau_p, rho_p, float(phi)), mle_cfg, seed)
        return a.rho[1, 1].real, b.rho[1, 1].real, a.converged and b.converged

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, phis))
    else:
        res = [one(phi) for phi in phis]
    p1 = np.array([r[0] for r in res])
    p2 = np.array([r[1] for r in res])
    a1, b1, ph1 = sinusoid_fit(phis, p1)
    a2, b2, _ = sinusoid_fit(phis, p2)
    wrap = lambda t: math.remainder(t, 2 * math.pi)
    return FringeScan(
        phis=phis,
        p1_d1=p1,
        p1_d2=p2,
        visibility=visibility(p1),
        visibility_d2=visibility(p2),
        fit_visibility=b1 / a1 if a1 > 0 else 0.0,
        fit_visibility_d2=b2 / a2 if a2 > 0 else 0.0,
        d1_max_phase=wrap(ph1),
        d1_min_phase=wrap(ph1 + math.pi),
        converged=all(r[2] for r in res),
    )


def decompose_at_optimum(samples, spec: TimeBinQubitSpec, mle_cfg: MleConfig, *, seed=0):
    """Reconstruct both outputs of the virtual BS set to ``(c₀, c₁, −Φ)``.

    Output *a* should hold the photon and output *b* the vacuum.
    """
    a, b = reconstruct_outputs(samples, VirtualBsParams.optimal(spec), mle_cfg, seed)
    return a.rho, b.rho


# ---------------------------------------------------------------------------
# qubit submatrix


def qubit_submatrix(rho) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Renormalized block over ``{|1,0⟩, |0,1⟩}`` and (vacuum, qubit, multiphoton)."""
    rho = check_density_matrix(rho)
    d = mode_dim(rho, 2)
    if d < 2:
        raise ValueError("need at least two levels per mode")
    idx = [d, 1]  # |1,0⟩ and |0,1⟩ in the n1·d + n2 ordering
    block = rho[np.ix_(idx, idx)]
    vac = float(rho[0, 0].real)
    qubit = float(np.trace(block).real)
    if qubit <= 1e-12:
        raise SubmatrixError("qubit population is zero")
    sub = (block + block.conj().T) / 2 / qubit
    return sub, (vac, qubit, 1.0 - vac - qubit)


@dataclass
class QubitReport:
    populations: tuple[float, float, float]
    submatrix: np.ndarray
    fidelity: float
    target: TimeBinQubitSpec

    def to_dict(self) -> dict:
        vac, qubit, multi = self.populations
        return {
            "target": {"name": self.target.name, "c0": self.target.c0, "c1": self.target.c1, "phi": self.target.phi},
            "populations": {"vacuum": vac, "qubit": qubit, "multiphoton": multi},
            "submatrix": [[[float(z.real), float(z.imag)] for z in row] for row in self.submatrix],
            "fidelity": self.fidelity,
        }


def qubit_fidelity(report: QubitReport) -> float:
    psi = report.target.qubit_vector()
    return float(np.real(psi.conj() @ report.submatrix @ psi))


def qubit_report(rho, target: TimeBinQubitSpec) -> QubitReport:
    sub, pops = qubit_submatrix(rho)
    rep = QubitReport(pops, sub, 0.0, target)
    rep.fidelity = qubit_fidelity(rep)
    return rep


# ---------------------------------------------------------------------------
# phase-space reporting


def wigner_grid(rho, lim: float = 4.0, step: float = 0.05):
    """Single-mode Wigner function on ``[−lim, lim]²``; returns ``(xs, ps, W)`` with ``W[i, j] = W(xs[i], ps[j])``."""
    n = int(round(2 * lim / step))
    axis = np.linspace(-lim, lim, n + 1)
    x, p = np.meshgrid(axis, axis, indexing="ij")
    return axis, axis, wigner_function(rho, x, p)


def single_mode_summary(rho) -> dict:
    rho = check_density_matrix(rho)
    pn = np.clip(np.diag(rho).real, 0.0, None)
    return {"photon_numbers": [float(v) for v in pn], "wigner_origin": wigner_at_origin(rho)}


# ---------------------------------------------------------------------------
# variance-trace peaks


@dataclass
class TracePeaks:
    times: tuple[float, float]
    heights: tuple[float, float]
    floor: float

    @property
    def separation(self) -> float:
        return abs(self.times[0] - self.times[1])

    @property
    def ratio(self) -> float:
        """Larger over smaller peak height above the floor."""
        hi, lo = max(self.heights), min(self.heights)
        return hi / lo if lo > 0 else math.inf


def _local_maxima(v: np.ndarray) -> np.ndarray:
    inner = np.flatnonzero((v[1:-1] >= v[:-2]) & (v[1:-1] > v[2:])) + 1
    return inner[np.argsort(v[inner])[::-1]]


def analyze_variance_trace(trace: TimeTrace, cfg: MziConfig) -> TracePeaks:
    """Locate the two peaks and fit their heights above the floor.

    The template is the known intensity shape ``γ e^{−2γ|t − t_k|} dt``.  A
    matched filter picks the two strongest, well separated maxima; the
    positions are then refined off-grid by minimizing the residual of the
    linear fit (floor plus two templates), and heights are quoted at the
    template peak.
    """
    t, v = trace.grid, trace.values
    dt = trace.step
    g = cfg.gamma
    half = int(math.ceil(6 / (g * dt)))
    kernel = g * np.exp(-2 * g * np.abs(np.arange(-half, half + 1) * dt))
    score = np.convolve(v - np.median(v), kernel[::-1], mode="same")
    order = _local_maxima(score)
    if len(order) == 0:
        raise ValueError("no peak found in the trace")
    first = order[0]
    guard = max(1, int(round(1 / (g * dt))))
    rest = [k for k in order if abs(k - first) > guard]
    if not rest:
        raise ValueError("only one peak found in the trace")
    pos = sorted([float(t[first]), float(t[rest[0]])])

    def fit(centers):
        cols = [np.ones_like(t)] + [g * dt * np.exp(-2 * g * np.abs(t - c)) for c in centers]
        design = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(design, v, rcond=None)
        return coef, float(np.sum((design @ coef - v) ** 2))

    for _ in range(2):
        for j in range(2):
            def cost(c, j=j):
                trial = list(pos)
                trial[j] = c
                return fit(trial)[1]

            res = optimize.minimize_scalar(cost, bounds=(pos[j] - 2 * dt, pos[j] + 2 * dt), method="bounded",
                                           options={"xatol": dt * 1e-3})
            pos[j] = float(res.x)
    coef, _ = fit(pos)
    peak = g * dt
    return TracePeaks((pos[0], pos[1]), (float(coef[1] * peak), float(coef[2] * peak)), float(coef[0]))


def expected_trace(rho, cfg: MziConfig, grid) -> np.ndarray:
    """Noise-free variance trace ``½ + Σ_j n̄_j f_j(t)² dt`` (plus the small cross term)."""
    rho = check_density_matrix(rho)
    d = mode_dim(rho, 2)
    grid = np.asarray(grid, dtype=float)
    dt = grid[1] - grid[0]
    n = np.arange(d)
    diag = rho.diagonal().real.reshape(d, d)
    n1 = float((diag.sum(axis=1) * n).sum())
    n2 = float((diag.sum(axis=0) * n).sum())
    # Re⟨a₁†a₂⟩ survives phase averaging and weights the product of the modes
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    cross = float(np.real(np.trace(rho @ np.kron(a.conj().T, a))))
    f1, f2 = time_bin_modes(cfg)
    w1, w2 = f1(grid) ** 2 * dt, f2(grid) ** 2 * dt
    return 0.5 + n1 * w1 + n2 * w2 + 2 * cross * np.sqrt(w1 * w2) * np.sign(f1(grid) * f2(grid))
