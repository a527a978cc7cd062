import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swipt_forge.allocation import (
    InfeasibleAllocation, LinkBudget, ScaProblem, SurrogateModel, TabulatedEfficiency, allocate,
    build_sca, calibrate_surrogate, energy, envelope_energy, kkt_residual, load_surrogate, mu_factor,
    qam_bits, rank_correlation, rate, re_frontier, re_metrics, re_region, round_allocation,
    rx_papr_prediction, save_surrogate, sca_step, solve_p3, xi_metric,
)
from swipt_forge.waveform import MimoConfig

MIMO = MimoConfig()


def hand_surrogate(**kw):
    """Surrogate built from the compact coefficients of a hand instance."""
    c1, b1, c2, c3, b2, c4 = 1e-4, 0.5, 0.3, 2e-3, 0.2, 0.1
    base = dict(k0=(0.0, 0.0), eta_pa0=c2, eta_r0=c4, a_pa=c1, b_pa=-c1 * b1, a_r=-c3 * b2, b_r=c3)
    base.update(kw)
    return SurrogateModel(**base)


def nsd_problem(rng):
    """Random problem whose P0 and P1 are negative semidefinite (anti-parallel vectors)."""
    ns, k, mu = 4, 1024, 0.96875
    q0 = np.array([-ns, -mu * ns])
    q1 = -q0 * rng.uniform(1e-3, 5e-2)
    q2 = rng.uniform(1e-4, 1e-3, 2)
    q3 = -q2 * rng.uniform(0.5, 2)
    c2, c4 = rng.uniform(0.3, 0.5, 2)
    return ScaProblem(q0, q1, q2, q3, r0=1 + rng.uniform(10, 100), eta_min=rng.uniform(0, 0.9) * c2 * c4,
                      c2=c2, c4=c4, ns_k=ns * k, upper=k / 4)


# ---------------------------------------------------------------- surrogate

def test_compact_coefficients():
    s = hand_surrogate()
    assert (s.c1, s.c2, s.c3, s.c4) == pytest.approx((1e-4, 0.3, 2e-3, 0.1))
    assert (s.beta1, s.beta2) == pytest.approx((0.5, 0.2))


def test_degenerate_slopes_flagged():
    s = SurrogateModel.constant((0, 0), 0.4, 0.01)
    assert set(s.degenerate) == {"beta1", "beta2"}
    assert math.isnan(s.beta1) and math.isnan(s.beta2)


def test_surrogate_identity_at_centre():
    s = SurrogateModel((128.0, 128.0), 0.39, 0.012, 3e-5, -1e-4, 2e-5, 4e-5)
    assert s.eta_pa((128, 128)) == pytest.approx(0.39, abs=1e-15)
    assert s.eta_r((128, 128)) == pytest.approx(0.012, abs=1e-15)


def _mock_measure(truth, beta, n_r=4, scale=0.01, offset=0.3):
    def measure(k, scenario, trials, seed):
        k = np.asarray(k, float)
        peak = scale * math.sqrt(n_r) * (k[1] / math.sqrt(2) - beta * k[0]) + offset
        return float(truth.eta_pa(k)), float(truth.eta_r(k)), 2.0, peak**2
    return measure


class _Sc:
    mimo = MIMO


def test_calibration_recovers_injected_truth():
    truth = SurrogateModel((128.0, 128.0), 0.4, 0.012, 6.6e-5, -1.7e-4, 1.56e-5, 2.43e-5)
    got = calibrate_surrogate((128, 128), 16, scenario=_Sc(), measure=_mock_measure(truth, 0.3))
    for name in ("c1", "c2", "c3", "c4", "beta1", "beta2"):
        assert getattr(got, name) == pytest.approx(getattr(truth, name), rel=1e-6)
    assert got.beta_cancel == pytest.approx(0.3, rel=1e-6)
    assert got.eta_pa((128, 128)) == 0.4 and got.eta_r((128, 128)) == 0.012


def test_calibration_box_check():
    with pytest.raises(ValueError):
        calibrate_surrogate((8, 128), 16, scenario=_Sc(), measure=_mock_measure(hand_surrogate(), 0.0))


def test_surrogate_save_load_round_trip(tmp_path):
    s = SurrogateModel((128.0, 96.0), 0.39123456789, 0.0123, 6.6e-5, -1.7e-4, 1.56e-5, 2.43e-5,
                       beta_cancel=-0.43, papr_tx0=8.1, papr_rx0=31.2, step=16.0)
    f = tmp_path / "surrogate.txt"
    save_surrogate(s, f)
    assert load_surrogate(f) == s
    assert "# c1 =" in f.read_text()


def test_tabulated_efficiency():
    t = TabulatedEfficiency({(0, 0): (0.38, 0.004), (128, 128): (0.4, 0.012)})
    assert t.eta_pa((128, 128)) == 0.4
    assert np.allclose(t.eta_r(np.array([[0, 0], [128, 128]])), [0.004, 0.012])
    with pytest.raises(KeyError):
        t.eta_pa((1, 1))


# ---------------------------------------------------------------- rate and energy

def test_mu_and_floor_rule():
    assert mu_factor(4, 2) == 0.96875
    assert qam_bits(2 ** 4.2 - 1) == 4
    assert qam_bits(3.0) == 2
    with pytest.raises(ValueError):
        qam_bits(0.0)


def test_rate_prefactor():
    s = hand_surrogate()
    b = LinkBudget(tx_power=1.0, noise=1.0, g_eff=1.0, rho=0.5)
    r = rate((128, 128), b, s, MIMO, mu=0.96875)
    snr = 0.5 * float(s.eta_pa((128, 128)))
    assert r / math.log2(1 + snr) == pytest.approx(3088.0)


def test_rate_zero_rho():
    assert rate((0, 0), LinkBudget(rho=0.0), hand_surrogate(), MIMO) == 0.0


def test_energy_hand_instance():
    b = LinkBudget(tx_power=1.0, noise=1.0, g_eff=1.0, rho=0.5)
    # (C1(K_TR - b1 K_IM) + C2)(C3(K_IM - b2 K_TR) + C4)(1 - rho) P G
    expect = (1e-4 * (100 - 0.5 * 200) + 0.3) * (2e-3 * (200 - 0.2 * 100) + 0.1) * 0.5
    assert energy((100, 200), b, hand_surrogate()) == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(0.069)


def test_energy_centre_and_limits():
    s = SurrogateModel((128.0, 128.0), 0.39, 0.012, 3e-5, -1e-4, 2e-5, 4e-5)
    b = LinkBudget(rho=0.3)
    assert energy((128, 128), b, s) == pytest.approx(0.39 * 0.012 * 0.7 * b.tx_power * b.g_eff)
    assert energy((128, 128), LinkBudget(rho=1.0), s) == 0.0


def test_energy_negative_clamped():
    s = SurrogateModel((0.0, 0.0), 0.1, 0.01, -1.0, 0.0, 0.0, 0.0)
    with pytest.warns(RuntimeWarning):
        assert energy((10, 0), LinkBudget(), s) == 0.0


def test_re_metrics_normalised():
    m = re_metrics((0, 0), LinkBudget(), hand_surrogate(), MIMO)
    assert m.j_value == pytest.approx(2.0)
    assert m.eta_end_to_end == pytest.approx(0.03)


# ---------------------------------------------------------------- problem assembly

def test_build_sca_vectors():
    s = hand_surrogate()
    b = LinkBudget(tx_power=1.0, noise=1e-3, g_eff=1.0, rho=0.5)
    p = build_sca(b, s, MIMO)
    g = 0.5 * 1e3
    assert p.mu == pytest.approx(mu_factor(4, qam_bits(g * 0.3)))
    assert p.q0 == pytest.approx([-4, -4 * p.mu])
    assert p.q1 == pytest.approx(g * np.array([1e-4, -0.5e-4]))
    assert p.q2 == pytest.approx([s.c1, -s.c1 * s.beta1])
    assert p.q3 == pytest.approx([-s.c3 * s.beta2, s.c3])
    assert p.r0 == pytest.approx(1 + g * 0.3)
    assert p.r1_tilde == pytest.approx(s.c2 * s.c4)
    assert p.upper == 256


def test_build_sca_q0_reference_value():
    s = SurrogateModel.constant((0, 0), 0.5, 0.01)
    # SNR below 3 gives M = 1; force M = 2 through the gain
    b = LinkBudget(tx_power=1.0, noise=1.0, g_eff=14.0, rho=0.5)
    p = build_sca(b, s, MIMO)
    assert p.m_order == 2
    assert p.q0 == pytest.approx([-4.0, -3.875])


def test_objective_and_constraint_match_rate_energy():
    s = SurrogateModel((128.0, 128.0), 0.39, 0.012, 3e-5, -1e-4, 2e-5, 4e-5)
    b = LinkBudget(p_min=1e-9)
    p = build_sca(b, s, MIMO)
    k = np.array([100.0, 140.0])
    assert p.objective(k) == pytest.approx(rate(k, b, s, MIMO, mu=p.mu), rel=1e-12)
    e = energy(k, b, s)
    assert (p.constraint(k) + p.eta_min) * (1 - b.rho) * b.tx_power * b.g_eff == pytest.approx(e, rel=1e-12)


def test_coefficient_symmetry_and_taylor_exactness():
    p = nsd_problem(np.random.default_rng(3))
    k_t = np.array([30.0, 50.0])
    it, _ = sca_step(p, k_t)
    assert np.allclose(it.p0_t, it.p0_t.T) and np.allclose(p.p1_matrix, p.p1_matrix.T)
    assert it.surrogate_value(k_t) == pytest.approx(float(p.objective(k_t)), rel=1e-12)
    assert p.is_nsd() == (True, True)


@given(st.integers(0, 2**31 - 1))
def test_linearisation_upper_bounds_objective(seed):
    r = np.random.default_rng(seed)
    p = nsd_problem(r)
    k_t = r.uniform(0, p.upper, 2)
    it, _ = sca_step(p, k_t, grid=11, levels=1)
    k = r.uniform(0, p.upper, 2)
    # the tangent of a concave log bounds it above when the prefactor is positive
    assert it.surrogate_value(k) >= float(p.objective(k)) - 1e-9 * abs(float(p.objective(k)))


# ---------------------------------------------------------------- subproblem solver

def test_affine_objective_hits_vertex():
    q0 = np.array([3.0, -1.0])
    x, v = solve_p3(np.zeros((2, 2)), q0, 0.0, np.zeros((2, 2)), np.zeros(2), 1.0, 10.0)
    assert x == pytest.approx([10.0, 0.0])
    assert v == pytest.approx(30.0)


def test_concave_interior_optimum():
    p0 = -np.array([[2.0, 0.5], [0.5, 1.0]])
    q0 = np.array([8.0, 6.0])
    x, _ = solve_p3(p0, q0, 0.0, np.zeros((2, 2)), np.zeros(2), 1.0, 100.0)
    assert x == pytest.approx(np.clip(-0.5 * np.linalg.solve(p0, q0), 0, 100), abs=1e-9)


def test_solver_infeasible():
    with pytest.raises(InfeasibleAllocation):
        solve_p3(np.zeros((2, 2)), np.ones(2), 0.0, np.zeros((2, 2)), np.zeros(2), -1.0, 10.0)


def test_kkt_residual_interior_and_vertex():
    p0 = -np.eye(2)
    q0 = np.array([2.0, 2.0])
    res, mult = kkt_residual(p0, q0, np.zeros((2, 2)), np.zeros(2), 1.0, 10.0, np.array([1.0, 1.0]))
    assert res < 1e-12 and mult == {}
    res, mult = kkt_residual(np.zeros((2, 2)), np.array([1.0, -1.0]), np.zeros((2, 2)), np.zeros(2), 1.0,
                             10.0, np.array([10.0, 0.0]))
    assert res < 1e-12 and mult["nu0"] == pytest.approx(1.0) and mult["mu1"] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_sca_step_matches_dense_oracle(seed):
    r = np.random.default_rng(seed)
    p = nsd_problem(r)
    k_t = np.zeros(2)
    it, k_next = sca_step(p, k_t)
    assert it.kkt_residual <= 1e-6
    n = 600
    ax = np.linspace(0, p.upper, n)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    val = np.einsum("ni,ij,nj->n", pts, it.p0_t, pts) + pts @ it.q0_tilde_t + it.r0_tilde_t
    val[~p.feasible(pts)] = -np.inf
    assert p.feasible(k_next)
    assert it.surrogate_value(k_next) >= val.max() - 1e-9 * abs(val.max())


# ---------------------------------------------------------------- outer loop

def test_fixed_point_one_iteration():
    # q1 = 0: objective decreasing in k, optimum at the origin
    p = ScaProblem([-4, -3.875], [0, 0], [1e-4, 1e-4], [1e-4, 1e-4], r0=50.0, eta_min=0.0,
                   c2=0.3, c4=0.1, ns_k=4096, upper=256)
    res = allocate(p, [0, 0])
    assert res.converged and res.iterations == 1
    assert res.k_integer == (0, 0)


def test_allocate_rejects_infeasible_start():
    p = nsd_problem(np.random.default_rng(0))
    p_bad = ScaProblem(p.q0, p.q1, p.q2, p.q3, p.r0, eta_min=10.0, c2=p.c2, c4=p.c4, ns_k=p.ns_k, upper=p.upper)
    with pytest.raises(InfeasibleAllocation):
        allocate(p_bad, [0, 0])


@given(st.integers(0, 2**31 - 1))
def test_allocate_monotone_and_feasible(seed):
    r = np.random.default_rng(seed)
    p = nsd_problem(r)
    res = allocate(p, [0, 0], grid=21, levels=2)
    objs = res.objective_trajectory
    assert np.all(np.diff(objs) >= -1e-9 * np.abs(objs[:-1]))
    assert all(p.feasible(k) for k in res.trajectory)
    assert res.iterations <= 50
    steps = np.linalg.norm(np.diff(res.trajectory, axis=0), axis=1)
    if res.converged:
        assert steps[-1] <= res.tolerance


def test_calibrated_regime_allocation():
    s = SurrogateModel((128.0, 128.0), 0.397, 0.0110, 6.6e-5, -1.7e-4, 1.56e-5, 2.43e-5)
    p = build_sca(LinkBudget(p_min=1e-8), s, MIMO)
    res = allocate(p, [128, 128])
    assert res.converged and res.feasible
    assert res.k_integer[1] % 2 == 0
    assert np.all(res.kkt_residuals <= 1e-6)
    assert res.nsd == (False, False)


def test_rounding_example():
    p = ScaProblem([-4, -3.875], [1e-3, 1e-3], [1e-4, 1e-4], [1e-4, 1e-4], r0=50.0, eta_min=0.0,
                   c2=0.3, c4=0.1, ns_k=4096, upper=256)
    k = round_allocation(p, (127.4, 128.6))
    assert k is not None and k[1] % 2 == 0 and p.feasible(np.array(k, float))
    best = max(((a, b) for a in (127, 128) for b in (128,)), key=lambda c: float(p.objective(np.array(c, float))))
    assert float(p.objective(np.array(k, float))) >= float(p.objective(np.array(best, float)))


def test_rounding_none_when_infeasible():
    p = ScaProblem([-4, -3.875], [0, 0], [0, 0], [0, 0], r0=50.0, eta_min=1.0,
                   c2=0.3, c4=0.1, ns_k=4096, upper=256)
    assert round_allocation(p, (10.0, 10.0)) is None


# ---------------------------------------------------------------- metrics

def test_xi_examples():
    tx = np.array([4.0, 8.0, 6.0])
    assert xi_metric(tx, tx) == 1.0
    assert xi_metric(tx, 2 * tx) == 2.0
    with pytest.raises(ValueError):
        xi_metric([], [1.0])


def test_rx_papr_prediction():
    assert rx_papr_prediction(128, 0, 0.0, 4) == pytest.approx(20 * math.log10(128 / math.sqrt(2)) + 10 * math.log10(4))
    assert rx_papr_prediction(128, 0, 0.0, 4) == pytest.approx(45.15, abs=0.01)
    assert rx_papr_prediction(256, 0, 0.0, 4) - rx_papr_prediction(128, 0, 0.0, 4) == pytest.approx(6.0206, abs=1e-4)
    with pytest.raises(ValueError):
        rx_papr_prediction(10, 100, 1.0, 4)


def test_rank_correlation():
    assert rank_correlation([1, 2, 3, 4], [10, 20, 25, 100]) == pytest.approx(1.0)


def test_re_region_endpoints():
    s = SurrogateModel((128.0, 128.0), 0.397, 0.0110, 6.6e-5, -1.7e-4, 1.56e-5, 2.43e-5)
    pts = re_region(LinkBudget(), s, MIMO, [0.0, 0.5, 1.0], resolution=9)
    assert pts[0].rate == 0.0 and pts[0].energy > 0
    assert pts[-1].energy == 0.0 and pts[-1].rate > 0
    assert all(p.k[1] % 2 == 0 for p in pts)


def test_frontier_and_envelope():
    s = SurrogateModel((128.0, 128.0), 0.397, 0.0110, 6.6e-5, -1.7e-4, 1.56e-5, 2.43e-5)
    front = re_frontier(LinkBudget(), s, MIMO, np.linspace(0, 1, 11), resolution=5)
    r = np.array([p.rate for p in front])
    e = np.array([p.energy for p in front])
    assert np.all(np.diff(r) > 0) and np.all(np.diff(e) < 0)
    env = envelope_energy(front, [0.0, r.max(), r.max() * 2])
    assert env[0] == e.max() and env[1] == e[-1] and np.isnan(env[2])
