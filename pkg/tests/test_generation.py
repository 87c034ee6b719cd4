import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timebin.fock import DimensionError, basis_ket, check_density_matrix, fidelity
from timebin.generation import (
    ImperfectionBudget,
    ModeFunction,
    MziConfig,
    TimeBinQubitSpec,
    build_physical_state,
    calibrate_p_multi,
    expected_populations,
    mode_norm_on_grid,
    mode_overlap,
    mode_overlap_numeric,
    other_port_qubit,
    overall_efficiency,
    published_budget,
    published_targets,
    port_probabilities,
    qubit_from_mzi,
    temporal_mode_eval,
)

S = 1 / math.sqrt(2)
GAMMA = 2 * math.pi * 6.2e6

angles = st.floats(0, math.pi / 2)
phases = st.floats(-math.pi, math.pi)


def cfg_from_angles(a1, a2, phi2):
    return MziConfig(math.cos(a1), math.sin(a1), math.cos(a2), math.sin(a2), phi2)


# --- qubit_from_mzi / other_port_qubit -------------------------------------------


def test_balanced_mzi_phase_pi():
    q = qubit_from_mzi(MziConfig(S, S, S, S, math.pi))
    assert (q.c0, q.c1) == pytest.approx((S, S))
    assert q.phi == pytest.approx(0.0, abs=1e-12)


def test_two_to_one_family():
    for phi2 in (0.0, 1.0, -2.5):
        q = qubit_from_mzi(MziConfig.from_intensities(0.8, 0.5, phi2))
        assert q.c0 / q.c1 == pytest.approx(2.0)
        assert q.phi == pytest.approx(math.remainder(phi2 + math.pi, 2 * math.pi))


def test_blocked_long_arm():
    q = qubit_from_mzi(MziConfig(1.0, 0.0, S, S, 0.3))
    assert (q.c0, q.c1) == (1.0, 0.0)


def test_degenerate_mzi_rejected():
    with pytest.raises(ValueError):
        qubit_from_mzi(MziConfig(1.0, 0.0, 0.0, 1.0))


def test_other_port_balanced():
    q = other_port_qubit(MziConfig(S, S, S, S, 0.0))
    assert (q.c0, q.c1, q.phi) == pytest.approx((S, S, 0.0))


def test_other_port_rho2_zero():
    q = other_port_qubit(MziConfig(S, S, 1.0, 0.0, 0.0))
    assert (q.c0, q.c1) == (0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(angles, angles, phases)
def test_port_probabilities_sum_to_one(a1, a2, phi2):
    assert sum(port_probabilities(cfg_from_angles(a1, a2, phi2))) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, math.pi / 2 - 0.05), st.floats(0.05, math.pi / 2 - 0.05), phases)
def test_sign_flip_invariance(a1, a2, phi2):
    cfg = cfg_from_angles(a1, a2, phi2)
    flipped = MziConfig(-cfg.tau1, -cfg.rho1, cfg.tau2, cfg.rho2, phi2)
    q, qf = qubit_from_mzi(cfg), qubit_from_mzi(flipped)
    assert (q.c0, q.c1) == pytest.approx((qf.c0, qf.c1), abs=1e-12)
    assert abs(np.exp(1j * q.phi) - np.exp(1j * qf.phi)) < 1e-12


def test_mzi_config_validation():
    with pytest.raises(ValueError):
        MziConfig(0.9, 0.9, S, S)
    with pytest.raises(ValueError):
        MziConfig(S, S, S, S, delta_t=0.0)
    with pytest.raises(ValueError):
        MziConfig(S, S, S, S, gamma=-1.0)


def test_qubit_spec_validation():
    with pytest.raises(ValueError):
        TimeBinQubitSpec(0.5, 0.5)
    with pytest.raises(ValueError):
        TimeBinQubitSpec(-S, S)


# --- temporal modes -------------------------------------------------------------


def test_mode_peak_and_decay():
    f = ModeFunction(GAMMA, 242e-9)
    assert temporal_mode_eval(f, -242e-9) == pytest.approx(math.sqrt(GAMMA))
    assert temporal_mode_eval(f, -242e-9 + 1 / GAMMA) == pytest.approx(math.sqrt(GAMMA) / math.e)


def test_mode_normalization_on_grid():
    t = np.linspace(-2e-6, 2e-6, 4001)
    for offset in (0.0, 242e-9):
        assert mode_norm_on_grid(ModeFunction(GAMMA, offset), t) == pytest.approx(1.0, abs=1e-6)


def test_mode_overlap_zero_delay_limit():
    assert mode_overlap(MziConfig(S, S, S, S, 0.0, 1e-30, GAMMA)) == pytest.approx(1.0, abs=1e-12)
    assert mode_overlap_numeric(GAMMA, 0.0) == pytest.approx(1.0, abs=1e-8)


def test_mode_overlap_published_value():
    ov = mode_overlap(MziConfig(S, S, S, S, 0.0, 242e-9, GAMMA))
    assert ov == pytest.approx(8.4e-4, abs=0.05e-4)
    assert 100 * ov == pytest.approx(0.08, abs=0.02)


def test_mode_overlap_far_tail():
    cfg = MziConfig(S, S, S, S, 0.0, 20 / GAMMA, GAMMA)
    assert mode_overlap(cfg) == pytest.approx(21 * math.exp(-20), rel=1e-12)
    assert mode_overlap(cfg) == pytest.approx(4.3e-8, abs=0.05e-8)


@pytest.mark.parametrize("gdt", [0.0, 0.01, 0.5, 1.0, 3.0, 9.43, 15.0, 30.0])
@pytest.mark.parametrize("gamma", [1e6, GAMMA, 3e8])
def test_mode_overlap_closed_form_matches_quadrature(gdt, gamma):
    dt = gdt / gamma
    closed = (1 + gdt) * math.exp(-gdt)
    assert mode_overlap_numeric(gamma, dt) == pytest.approx(closed, abs=1e-8)


# --- efficiency budget ------------------------------------------------------------


def test_overall_efficiency_ideal():
    assert overall_efficiency(ImperfectionBudget()) == 1.0


def test_overall_efficiency_published():
    b = ImperfectionBudget(eta_nopo=0.98, eta_vis=0.98, eta_pr=0.96, eta_det=0.95, eta_apd=0.98)
    assert overall_efficiency(b) == pytest.approx(0.8412, abs=1e-4)


def test_apd_purity_from_counts():
    b = ImperfectionBudget(zeta_tot=5800, zeta_dark=80)
    assert b.herald_purity == pytest.approx(0.9862, abs=1e-4)


def test_budget_rejects_inconsistent_apd():
    with pytest.raises(ValueError):
        ImperfectionBudget(eta_apd=0.98, zeta_tot=5800, zeta_dark=80)
    ImperfectionBudget(eta_apd=5720 / 5800, zeta_tot=5800, zeta_dark=80)


@pytest.mark.parametrize(
    "kwargs",
    [{"eta_det": 1.2}, {"p_multi": -0.1}, {"zeta_tot": 10, "zeta_dark": 20}, {"zeta_tot": 10}],
)
def test_budget_validation(kwargs):
    with pytest.raises(ValueError):
        ImperfectionBudget(**kwargs)


# --- physical state ------------------------------------------------------------------


def test_ideal_budget_gives_pure_state():
    spec = TimeBinQubitSpec.from_weights(2, 1, 0.4)
    rho = build_physical_state(spec, ImperfectionBudget(), d=3)
    assert fidelity(rho, spec.ket(3)) == pytest.approx(1.0, abs=1e-12)


def test_half_loss_gives_half_qubit():
    rho = build_physical_state(TimeBinQubitSpec(S, S), ImperfectionBudget(eta_det=0.5), d=3)
    assert (rho[1, 1] + rho[3, 3]).real == pytest.approx(0.5, abs=1e-12)


def test_two_photon_needs_d3():
    with pytest.raises(DimensionError):
        build_physical_state(TimeBinQubitSpec(S, S), ImperfectionBudget(p_multi=0.1), d=2)


def test_two_photon_ket_is_squared_creation():
    spec = TimeBinQubitSpec.from_weights(2, 1, 0.7)
    d = 3
    from timebin.fock import annihilation_matrix

    a = annihilation_matrix(d)
    b_dag = spec.c0 * np.kron(a.conj().T, np.eye(d)) + spec.c1 * np.exp(1j * spec.phi) * np.kron(
        np.eye(d), a.conj().T
    )
    ket = b_dag @ b_dag @ basis_ket(d, 0, 0)
    ket /= np.linalg.norm(ket)
    np.testing.assert_allclose(spec.two_photon_ket(d), ket, atol=1e-12)


def _populations(rho):
    d = math.isqrt(rho.shape[0])
    vac = rho[0, 0].real
    qubit = (rho[d, d] + rho[1, 1]).real
    return vac, qubit, 1 - vac - qubit


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0, 1),
    st.floats(0.5, 1),
    st.floats(0, 0.3),
    st.floats(0, math.pi / 2),
    phases,
    st.floats(0, 1),
)
def test_physical_state_populations_match_analytic(eta, w, p, ang, phi, jitter):
    b = ImperfectionBudget(eta_det=eta, eta_apd=w, p_multi=p, phase_jitter=jitter)
    rho = build_physical_state(TimeBinQubitSpec(math.cos(ang), math.sin(ang), phi), b, d=4)
    check_density_matrix(rho)
    np.testing.assert_allclose(_populations(rho), expected_populations(b), atol=1e-10)
    if p == 0:
        assert rho[0, 0].real == pytest.approx(1 - w * eta, abs=1e-10)


def test_published_budget_populations():
    b = published_budget()
    vac, qubit, multi = expected_populations(b)
    assert multi == pytest.approx(0.05, abs=1e-12)
    assert vac == pytest.approx(0.18, abs=0.03)
    assert qubit == pytest.approx(0.77, abs=0.03)
    assert b.p_multi == pytest.approx(0.0692, abs=5e-4)
    rho = build_physical_state(published_targets()[0], b, d=4)
    np.testing.assert_allclose(_populations(rho), (vac, qubit, multi), atol=1e-12)


def test_calibrate_p_multi_unreachable():
    with pytest.raises(ValueError):
        calibrate_p_multi(ImperfectionBudget(eta_det=0.1), 0.5)


def test_published_targets():
    targets = published_targets()
    assert len(targets) == 8
    ratios = sorted({round(t.c0 / t.c1, 9) for t in targets})
    assert ratios == [1.0, 2.0]
    assert {round(t.phi, 9) for t in targets} == {0.0, round(math.pi, 9), round(math.pi / 2, 9), round(-math.pi / 2, 9)}
