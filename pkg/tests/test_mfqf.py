import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pauli_closure import Torus, correlator_rate, symmetric_field
from ddlattice.lattice import LatticeError, LatticeSpec
from ddlattice.meanfield import mf_integrate, mf_rhs
from ddlattice.mfqf import (
    PAIRS,
    Classification,
    MfqfState,
    SymmetryError,
    branch_sweep,
    default_dt,
    eta_rhs,
    joint_rhs,
    mfqf_integrate,
    mfqf_step,
    mu_rhs_exact,
    step_halving_check,
    theta_rhs,
    total_correlation,
)
from ddlattice.oracle import BondList, oracle_observables, oracle_steady_state
from ddlattice.params import ModelParams, ParameterError


def state_from_field(lat, mu, field):
    th = np.zeros((6, lat.site_count))
    for i in range(1, lat.site_count):
        T = field[lat.components(i)]
        for c, (a, b) in enumerate(PAIRS):
            th[c, i] = T[a, b]
    return MfqfState(lat, np.asarray(mu, dtype=float), th)


def tilted(lat, mu=(0.2, 0.3, -0.6)):
    return MfqfState.product(lat, mu)


# -- right-hand side against the symbolic closure ----------------------------


@pytest.mark.parametrize("extents", [(7,), (4, 4), (3, 3, 3)])
def test_rhs_matches_closure(extents):
    rng = np.random.default_rng(len(extents))
    lat = LatticeSpec(extents)
    field = symmetric_field(extents, rng)
    mu = rng.uniform(-0.5, 0.5, 3)
    kw = dict(gamma=1.3, omega=0.4, delta=0.9, j=0.7, jz=-0.45)
    dmu, dth = joint_rhs(state_from_field(lat, mu, field), ModelParams(lattice=lat, **kw))
    torus = Torus(extents)
    err = 0.0
    for i in range(1, lat.site_count):
        R = lat.components(i)
        for c, (a, b) in enumerate(PAIRS):
            err = max(err, abs(correlator_rate(R, a, b, torus, mu, field, **kw) - dth[c, i]))
    assert err < 1e-12


@settings(max_examples=8)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(0.2, 2))
def test_rhs_matches_closure_random_couplings(seed, j, jz, delta, gamma):
    rng = np.random.default_rng(seed)
    ext = (5,)
    lat = LatticeSpec(ext)
    field = symmetric_field(ext, rng)
    mu = rng.uniform(-0.5, 0.5, 3)
    kw = dict(gamma=gamma, omega=0.7, delta=delta, j=j, jz=jz)
    dth = theta_rhs(state_from_field(lat, mu, field), ModelParams(lattice=lat, **kw))
    torus = Torus(ext)
    for i in range(1, lat.site_count):
        for c, (a, b) in enumerate(PAIRS):
            ref = correlator_rate(lat.components(i), a, b, torus, mu, field, **kw)
            assert abs(ref - dth[c, i]) < 1e-12 * (1 + abs(ref))


def test_isolated_contact_term():
    # theta = 0 and only mu_y nonzero: every term but the contact one in f_xz vanishes
    lat = LatticeSpec((9,))
    st_ = MfqfState(lat, np.array([0.0, 0.4, 0.0]), np.zeros((6, lat.site_count)))
    j = 0.8
    dth = theta_rhs(st_, ModelParams(j=j, lattice=lat))
    xz = PAIRS.index((0, 2))
    for r in (1, lat.site_count - 1):
        assert dth[xz, r] == pytest.approx(-j * 0.4, abs=1e-15)
    assert np.all(dth[xz, 2:-1] == 0)


# -- exact limits ------------------------------------------------------------


def test_uncoupled_product_stays_uncorrelated():
    lat = LatticeSpec((6, 6))
    p = ModelParams(omega=0.7, delta=1.4, lattice=lat)
    np.testing.assert_allclose(eta_rhs(tilted(lat), p), 0, atol=1e-15)


def test_eta_zero_reduces_to_mean_field():
    lat = LatticeSpec((5, 5))
    p = ModelParams.from_coupling_product(6.0, omega=0.5, delta=2.0, lattice=lat, jz=0.3)
    s = tilted(lat)
    np.testing.assert_allclose(mu_rhs_exact(s, p), mf_rhs(s.mu, p), atol=1e-15)


def test_equal_couplings_give_local_dynamics():
    rng = np.random.default_rng(1)
    lat = LatticeSpec((5, 5))
    s = state_from_field(lat, rng.uniform(-0.4, 0.4, 3), symmetric_field((5, 5), rng))
    p = ModelParams(j=1.3, jz=1.3, omega=0.5, delta=2.0, lattice=lat)
    local = ModelParams(omega=0.5, delta=2.0, lattice=lat)
    np.testing.assert_allclose(mu_rhs_exact(s, p), mu_rhs_exact(s, local), atol=1e-15)


def test_asymmetric_state_rejected():
    lat = LatticeSpec((5,))
    s = tilted(lat)
    s.theta[0, 1] += 1e-3
    with pytest.raises(SymmetryError):
        mu_rhs_exact(s, ModelParams(j=1.0, lattice=lat))


def test_joint_mu_rate_is_exact_equation():
    rng = np.random.default_rng(2)
    lat = LatticeSpec((4, 4))
    s = state_from_field(lat, rng.uniform(-0.4, 0.4, 3), symmetric_field((4, 4), rng))
    p = ModelParams(j=0.9, jz=0.2, omega=0.5, delta=1.0, lattice=lat)
    np.testing.assert_allclose(joint_rhs(s, p)[0], mu_rhs_exact(s, p), atol=1e-14)


def test_chain_rule_for_eta():
    rng = np.random.default_rng(3)
    lat = LatticeSpec((6,))
    s = state_from_field(lat, rng.uniform(-0.4, 0.4, 3), symmetric_field((6,), rng))
    p = ModelParams(j=0.9, omega=0.5, delta=1.0, lattice=lat)
    h = 1e-6
    plus, minus = mfqf_step(s, p, h), mfqf_step(s, p, -h)
    fd = (plus.eta - minus.eta) / (2 * h)
    np.testing.assert_allclose(fd[:, 1:], eta_rhs(s, p)[:, 1:], atol=1e-7)


def test_zero_coupling_steady_state():
    lat = LatticeSpec((8,))
    p = ModelParams(omega=0.5, delta=1.0, lattice=lat)
    run = mfqf_integrate(MfqfState.product(lat), p, 200.0)
    assert run.converged
    assert np.all(run.theta_max < 1e-10) and run.kappa_tilde < 1e-8
    ref = mf_integrate([0, 0, -1], p, 200.0).final
    np.testing.assert_allclose(run.state.mu, ref, atol=1e-8)


def test_mean_field_consistency_with_zeroed_eta():
    lat = LatticeSpec((5, 5))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=5.0, lattice=lat)
    run = mfqf_integrate(tilted(lat), p, 20.0, 0.01, zero_eta=True, stop_at_convergence=False)
    tr = mf_integrate([0.2, 0.3, -0.6], p, 20.0, 0.01, self_check=False)
    np.testing.assert_allclose(run.state.mu, tr.final, atol=1e-9)
    np.testing.assert_allclose(run.state.eta, 0, atol=1e-15)


# -- invariants along trajectories -------------------------------------------


def test_spin_length_identity():
    lat = LatticeSpec((16,))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=6.0, lattice=lat)
    dt = 0.002
    s = tilted(lat)
    mus, rates = [], []
    xz, yz = PAIRS.index((0, 2)), PAIRS.index((1, 2))
    k = p.effective_coupling
    for _ in range(600):
        m = s.mu
        eta1 = s.eta[:, lat.unit_indices].mean(axis=1)
        mus.append(m.copy())
        rates.append(2 * k * (m[1] * eta1[xz] - m[0] * eta1[yz]) - p.gamma * (m @ m + m[2] ** 2 + 2 * m[2]))
        s = mfqf_step(s, p, dt)
    sq = np.sum(np.array(mus) ** 2, axis=1)
    fd = (sq[2:] - sq[:-2]) / (2 * dt)
    np.testing.assert_allclose(fd, np.array(rates)[1:-1], atol=1e-4)


def test_symmetry_sector_preserved():
    lat = LatticeSpec((10, 10))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=6.0, lattice=lat)
    s = tilted(lat)
    worst_inv = worst_spread = 0.0
    for _ in range(10):
        s = mfqf_integrate(s, p, 5.0, 0.01, stop_at_convergence=False).state
        worst_inv = max(worst_inv, s.inversion_asymmetry())
        worst_spread = max(worst_spread, s.unit_theta()[1])
    assert np.max(np.abs(s.eta)) > 1e-3
    assert worst_inv < 1e-8 and worst_spread < 1e-6


def test_monitors_nonnegative_and_deterministic():
    lat = LatticeSpec((12,))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=3.0, lattice=lat)
    a = mfqf_integrate(MfqfState.product(lat), p, 50.0)
    b = mfqf_integrate(MfqfState.product(lat), p, 50.0)
    assert all(np.all(m.theta_max >= 0) and m.kappa_tilde >= 0 for m in a.monitors)
    assert np.array_equal(a.state.theta, b.state.theta) and np.array_equal(a.mu, b.mu)


def test_total_correlation():
    lat = LatticeSpec((5, 6))
    s = tilted(lat)
    np.testing.assert_array_equal(total_correlation(s), 0)
    s.theta[:, 1:] += 0.01
    np.testing.assert_allclose(total_correlation(s), 0.01 * (lat.site_count - 1), rtol=1e-12)


# -- integration control -----------------------------------------------------


def test_default_step():
    assert default_dt(ModelParams.from_coupling_product(10, omega=0.5, delta=1, dimension=2)) == pytest.approx(0.005)
    assert default_dt(ModelParams.from_coupling_product(40, omega=0.5, delta=1)) == pytest.approx(0.00125)
    assert default_dt(ModelParams(gamma=2.0)) == pytest.approx(0.0025)


def test_step_halving_stable():
    lat = LatticeSpec((8, 8))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=7.0, lattice=lat)
    diff, ok = step_halving_check(MfqfState.product(lat), p, 20.0, 0.02)
    assert ok and diff < 1e-6


def test_breakdown_flagged():
    lat = LatticeSpec((6,))
    s = MfqfState.product(lat)
    s.theta[:, 1:] += 1.5
    run = mfqf_integrate(s, ModelParams(j=1.0, lattice=lat), 20.0)
    assert run.status is Classification.BREAKDOWN and "Theta" in run.message


def test_non_convergence_reported():
    lat = LatticeSpec((8,))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=3.0, lattice=lat)
    run = mfqf_integrate(MfqfState.product(lat), p, 10.0)
    assert run.status is Classification.NON_CONVERGED


def test_lattice_checks():
    with pytest.raises(LatticeError):
        LatticeSpec((2, 5)).require_mfqf_extents()
    lat = LatticeSpec((5, 5))
    with pytest.raises(ParameterError):
        joint_rhs(MfqfState.product(lat), ModelParams(j=1.0, dimension=1))


# -- sweeps ------------------------------------------------------------------


def test_sweep_requires_monotone_values():
    lat = LatticeSpec((5,))
    with pytest.raises(ValueError):
        branch_sweep(ModelParams(lattice=lat), [1.0, 0.5, 2.0])


def test_continuation_reuses_previous_state():
    lat = LatticeSpec((10,))
    p = ModelParams.from_coupling_product(4.0, omega=0.5, delta=0.0, lattice=lat)
    pts = branch_sweep(p, [1.0, 1.1], "continuation", t_end=400.0, keep_states=True)
    fresh = branch_sweep(p, [1.1], "product_state", t_end=400.0, keep_states=True)
    assert all(pt.classification is Classification.STEADY for pt in pts + fresh)
    assert pts[1].t_final < fresh[0].t_final
    np.testing.assert_allclose(pts[1].mu, fresh[0].mu, atol=1e-6)


def test_mf_root_seeding():
    lat = LatticeSpec((6,))
    p = ModelParams.from_coupling_product(10.0, omega=0.5, delta=5.0, lattice=lat)
    lo = branch_sweep(p, [5.0], "mf_root", root_index=0, t_end=20.0)[0]
    hi = branch_sweep(p, [5.0], "mf_root", root_index=2, t_end=20.0)[0]
    assert lo.mu[2] < hi.mu[2]


def test_sweep_rows_layout():
    lat = LatticeSpec((6,))
    pt = branch_sweep(ModelParams(omega=0.5, lattice=lat), [0.0], t_end=50.0)[0]
    row = pt.row()
    assert list(row)[:4] == ["delta", "mu_x", "mu_y", "mu_z"]
    assert row["classification"] == "steady" and "sigma_zz" in row and "theta_max_yz" in row


# -- weak-coupling comparison with the exact solver ---------------------------


@pytest.mark.slow
def test_weak_coupling_ring_correlator():
    n = 6
    p_exact = ModelParams(j=0.25, omega=0.5, delta=1.0)
    bonds = BondList.ring(n)
    obs = oracle_observables(oracle_steady_state(p_exact, bonds, t_end=40.0), bonds, triples=[])
    exact_xx = obs.ring_eta(1)[0, 0]
    lat = LatticeSpec((n,))
    p = ModelParams.from_coupling_product(0.5, omega=0.5, delta=1.0, lattice=lat)
    run = mfqf_integrate(MfqfState.product(lat), p, 400.0, 0.01)
    assert run.converged
    approx_xx = run.state.eta[0, lat.unit_indices].mean()
    assert abs(approx_xx - exact_xx) <= 0.1 * abs(exact_xx)
