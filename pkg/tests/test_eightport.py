import math

import numpy as np
import pytest
from scipy import stats

from timebin.eightport import (
    TimeTrace,
    homodyne_density,
    make_tomography_data,
    q_function,
    quadrature_at_phase,
    sample_homodyne,
    sample_q_function,
    synthesize_variance_trace,
    trace_grid,
)
from timebin.fock import annihilation_matrix, basis_ket, partial_trace
from timebin.generation import MziConfig, TimeBinQubitSpec, build_physical_state, published_budget

from .helpers import random_density_matrix

S = 1 / math.sqrt(2)


def vacuum(d=4):
    rho = np.zeros((d * d, d * d), complex)
    rho[0, 0] = 1
    return rho


def proj(ket):
    return np.outer(ket, ket.conj())


@pytest.fixture(scope="module")
def vacuum_samples():
    return sample_q_function(vacuum(), 100_000, 11)


@pytest.fixture(scope="module")
def photon_samples():
    return sample_q_function(proj(basis_ket(4, 1, 0)), 100_000, 12)


# --- Q sampling -------------------------------------------------------------------


def test_vacuum_statistics(vacuum_samples):
    assert vacuum_samples.shape == (100_000, 4)
    np.testing.assert_allclose(vacuum_samples.var(axis=0, ddof=1), 1.0, atol=0.02)
    np.testing.assert_allclose(vacuum_samples.mean(axis=0), 0.0, atol=0.02)


def test_single_photon_radial_law(photon_samples):
    # |α1|² of the Q function of |1> is Gamma(2, 1); mode 2 stays vacuum
    x1, p1, x2, p2 = photon_samples.T
    assert np.var(x1, ddof=1) == pytest.approx(2.0, abs=0.05)
    u = (x1**2 + p1**2) / 2
    assert stats.kstest(u, stats.gamma(2).cdf).pvalue > 1e-3
    u2 = (x2**2 + p2**2) / 2
    assert stats.kstest(u2, stats.expon().cdf).pvalue > 1e-3


def test_q_density_normalized():
    rho = random_density_matrix(9, 5)
    g = np.arange(-7, 7, 0.25) + 0.125
    x1, p1, x2, p2 = np.meshgrid(g, g, g, g, indexing="ij")
    pts = np.stack([x1.ravel(), p1.ravel(), x2.ravel(), p2.ravel()], axis=1)
    assert q_function(rho, pts).sum() * 0.25**4 == pytest.approx(1.0, abs=1e-4)


def test_sampler_chi_square_against_gridded_q():
    rho = random_density_matrix(3, 21)
    samples = sample_q_function(rho, 50_000, 3, modes=1)
    edges = np.linspace(-4.5, 4.5, 10)
    counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[edges, edges])
    # expected mass per cell by 8x8 midpoint sub-quadrature
    sub = 8
    h = (edges[1] - edges[0]) / sub
    fine = np.arange(edges[0] + h / 2, edges[-1], h)
    fx, fp = np.meshgrid(fine, fine, indexing="ij")
    dens = q_function(rho, np.stack([fx.ravel(), fp.ravel()], 1), modes=1).reshape(fx.shape) * h * h
    expected = dens.reshape(9, sub, 9, sub).sum(axis=(1, 3)) * len(samples)
    inside = counts.sum()
    expected *= inside / expected.sum()
    mask = expected > 5
    chi2 = ((counts - expected)[mask] ** 2 / expected[mask]).sum()
    p = stats.chi2.sf(chi2, mask.sum() - 1)
    assert p > 1e-3


def _padded(rho, d, extra=3):
    big = d + extra
    out = np.zeros((big * big, big * big), complex)
    idx = [n1 * big + n2 for n1 in range(d) for n2 in range(d)]
    out[np.ix_(idx, idx)] = rho
    return out, big


def _homodyne_variance(rho, d, mode):
    big_rho, big = _padded(rho, d)
    a = annihilation_matrix(big)
    x = (a + a.conj().T) / np.sqrt(2)
    op = np.kron(x, np.eye(big)) if mode == 0 else np.kron(np.eye(big), x)
    m1 = np.trace(big_rho @ op).real
    m2 = np.trace(big_rho @ op @ op).real
    return m2 - m1**2


@pytest.mark.parametrize(
    "name,rho",
    [
        ("vacuum", vacuum()),
        ("photon", proj(basis_ket(4, 1, 0))),
        ("published_balanced", build_physical_state(TimeBinQubitSpec(S, S, -math.pi / 2), published_budget(), 4)),
        ("published_two_to_one", build_physical_state(TimeBinQubitSpec.from_weights(2, 1), published_budget(), 4)),
    ],
)
def test_eight_port_adds_half_unit(name, rho):
    samples = sample_q_function(rho, 60_000, 99)
    for mode in (0, 1):
        expected = _homodyne_variance(rho, 4, mode) + 0.5
        got = np.var(samples[:, 2 * mode], ddof=1)
        # sample-variance standard error for these near-Gaussian laws is < 1.5 sqrt(2/n) var
        assert got == pytest.approx(expected, abs=4 * 1.5 * math.sqrt(2 / 60_000) * expected)


def test_seed_determinism_and_worker_independence():
    rho = random_density_matrix(9, 2)
    a = sample_q_function(rho, 20_000, 7)
    b = sample_q_function(rho, 20_000, 7)
    c = sample_q_function(rho, 20_000, 7, workers=3)
    assert a.tobytes() == b.tobytes() == c.tobytes()
    assert sample_q_function(rho, 20_000, 8).tobytes() != a.tobytes()


def test_marginal_consistency():
    rho = random_density_matrix(9, 31)
    joint = sample_q_function(rho, 50_000, 101)
    single = sample_q_function(partial_trace(rho, 0), 50_000, 202, modes=1)
    for col in (0, 1):
        assert stats.ks_2samp(joint[:, col], single[:, col]).pvalue > 1e-3


def test_sample_count_validation():
    with pytest.raises(ValueError):
        sample_q_function(vacuum(), 0, 1)


# --- homodyne sampling ---------------------------------------------------------------


def test_homodyne_single_photon_law():
    xs = sample_homodyne(proj(basis_ket(3, 1, 0)), 40_000, 5)
    # |<x|1>|² = 2 x² e^{-x²} / √π
    grid = np.linspace(-6, 6, 20001)
    pdf = 2 * grid**2 * np.exp(-(grid**2)) / np.sqrt(np.pi)
    cdf = np.cumsum(pdf) * (grid[1] - grid[0])
    assert stats.kstest(xs[:, 0], lambda v: np.interp(v, grid, cdf)).pvalue > 1e-3
    assert np.var(xs[:, 1]) == pytest.approx(0.5, abs=0.02)


def test_homodyne_density_normalized():
    rho = random_density_matrix(16, 8)
    g = np.arange(-7, 7, 0.05) + 0.025
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    dens = homodyne_density(rho, np.stack([x1.ravel(), x2.ravel()], 1))
    assert dens.sum() * 0.05**2 == pytest.approx(1.0, abs=1e-6)


# --- tomography data -------------------------------------------------------------------


def test_quadrature_at_phase_examples():
    assert quadrature_at_phase(1, 0, 0) == 1
    assert quadrature_at_phase(1, 0, np.pi / 2) == pytest.approx(0, abs=1e-16)
    assert quadrature_at_phase(0.3, -0.4, np.pi / 4) == pytest.approx(-0.0707107, abs=1e-7)


def test_tomography_doubling_and_orthogonality(vacuum_samples):
    data = make_tomography_data(vacuum_samples, 5)
    assert data.shape == (200_000, 4)
    for col in (0, 2):
        th = data[:, col]
        assert th.min() >= 0 and th.max() < np.pi
        diff = np.mod(th[1::2] - th[0::2], np.pi)
        np.testing.assert_allclose(diff, np.pi / 2, atol=1e-12)
    # the emitted values are the rotated quadratures of the source record
    x, p = vacuum_samples[:, 0], vacuum_samples[:, 1]
    np.testing.assert_allclose(data[1::2, 1], quadrature_at_phase(x, p, data[1::2, 0]), atol=1e-12)


def test_tomography_determinism(vacuum_samples):
    a = make_tomography_data(vacuum_samples[:1000], 42)
    b = make_tomography_data(vacuum_samples[:1000], 42)
    assert a.tobytes() == b.tobytes()


def test_tomography_phase_uniformity(vacuum_samples):
    data = make_tomography_data(vacuum_samples, 77)
    for col in (0, 2):
        counts, _ = np.histogram(data[:, col], bins=20, range=(0, np.pi))
        assert stats.chisquare(counts).pvalue > 1e-3


def test_tomography_rejects_empty():
    with pytest.raises(ValueError):
        make_tomography_data(np.empty((0, 4)), 1)


# --- variance trace -----------------------------------------------------------------------

CFG = MziConfig(S, S, S, S, 0.0)


def test_trace_grid_contains_peaks():
    grid = trace_grid(CFG)
    step = grid[1] - grid[0]
    assert step <= 1 / (10 * CFG.gamma)
    assert np.min(np.abs(grid)) < 1e-18
    assert np.min(np.abs(grid + CFG.delta_t)) < 1e-15


def test_vacuum_trace_is_flat():
    grid = trace_grid(CFG)
    tr = synthesize_variance_trace(vacuum(3), CFG, 20_000, grid, 4)
    assert isinstance(tr, TimeTrace)
    np.testing.assert_allclose(tr.values.mean(), 0.5, atol=2e-3)
    assert np.abs(tr.values - 0.5).max() < 6 * 0.5 * math.sqrt(2 / 20_000)


def test_lossless_qubit_trace_peaks():
    grid = trace_grid(CFG)
    rho = proj(TimeBinQubitSpec(S, S).ket(3))
    tr = synthesize_variance_trace(rho, CFG, 50_000, grid, 6)
    k1 = int(np.argmin(np.abs(grid)))
    k2 = int(np.argmin(np.abs(grid + CFG.delta_t)))
    height = 0.5 * CFG.gamma * tr.step  # photon probability ½ times f(0)² dt
    noise = 4 * 0.55 * math.sqrt(2 / 50_000)
    assert tr.values[k1] - 0.5 == pytest.approx(height, abs=noise)
    assert tr.values[k2] - 0.5 == pytest.approx(height, abs=noise)


def test_trace_rejects_coarse_grid():
    grid = np.arange(-400e-9, 100e-9, 5e-9)
    with pytest.raises(ValueError):
        synthesize_variance_trace(vacuum(2), CFG, 100, grid, 1)


def test_trace_rejects_short_grid():
    grid = np.arange(-100e-9, 100e-9, 2e-9)
    with pytest.raises(ValueError):
        synthesize_variance_trace(vacuum(2), CFG, 100, grid, 1)
