"""Acceptance criteria, one test per criterion.

Every test records a one-line verdict in ``REPORT``; the conftest hook prints
the table at the end of the session. Run this file alone with
``pytest tests/test_acceptance.py`` (the 1D scan and 2D sweeps take tens of minutes).
"""
import time

import numpy as np
import pytest

from ddlattice.analysis import fit_correlation_profile, fit_relaxation, detect_limit_cycle
from ddlattice.lattice import LatticeSpec
from ddlattice.meanfield import bistable_windows, locate_cusp, mf_integrate, mf_steady_states
from ddlattice.mfqf import (
    COMPONENTS,
    Classification,
    MfqfState,
    branch_sweep,
    mfqf_integrate,
    step_halving_check,
)
from ddlattice.oracle import BondList, hierarchy_check, oracle_observables, oracle_steady_state
from ddlattice.params import ModelParams

REPORT: dict[int, tuple[str, bool, str]] = {}

NAMES = {
    1: "MF bistability window (J Z=10)",
    2: "MF fold points (J Z=3)",
    3: "critical cusp",
    4: "steady-state geometry",
    5: "steady-state symmetries",
    6: "hierarchy exactness (oracle)",
    7: "zero-coupling exactness",
    8: "1D breakdown window",
    9: "1D crossover structure",
    10: "2D multistability and hysteresis",
    11: "2D limit cycle",
    12: "critical slowing down",
    13: "analysis oracles",
}


def record(n: int, ok: bool, detail: str):
    REPORT[n] = (NAMES[n], bool(ok), detail)
    assert ok, f"criterion {n} ({NAMES[n]}): {detail}"


# shared scan settings
K = 10.0
OMEGA = 0.5
SCAN_1D = np.round(np.arange(0, 121) * 0.1, 10)
LAT_1D = LatticeSpec((200,))
LAT_2D = LatticeSpec((64, 64))
SWEEP_2D = np.round(np.arange(50, 91) * 0.1, 10)
DT_2D = 0.02
JUMP = 0.07  # max |d mu| between adjacent points on one branch


def _p(delta, lattice=None, dimension=1, k=K):
    return ModelParams.from_coupling_product(k, omega=OMEGA, delta=delta, lattice=lattice, dimension=dimension)


@pytest.fixture(scope="module")
def scan_1d():
    pts = branch_sweep(_p(0.0, LAT_1D), SCAN_1D, "product_state", t_end=2000.0, dt=0.01, keep_states=True)
    return {round(pt.delta, 6): pt for pt in pts}


@pytest.fixture(scope="module")
def sweeps_2d():
    up = branch_sweep(_p(SWEEP_2D[0], LAT_2D), SWEEP_2D, "continuation", t_end=4000.0, dt=DT_2D)
    down = branch_sweep(_p(SWEEP_2D[-1], LAT_2D), SWEEP_2D[::-1], "continuation", t_end=4000.0, dt=DT_2D)
    return up, down[::-1]


def branches(points):
    """Split a sweep (in sweep order) into runs of steady points joined by small steps."""
    out, cur = [], []
    for pt in points:
        if pt.classification is not Classification.STEADY:
            if cur:
                out.append((cur, True))
            cur = []
            continue
        if cur and np.max(np.abs(pt.mu - cur[-1].mu)) > JUMP:
            out.append((cur, True))
            cur = []
        cur.append(pt)
    if cur:
        out.append((cur, False))  # ended by the sweep, not by the branch
    return out


# -- mean field --------------------------------------------------------------


def test_criterion_01_mf_bistability_window():
    (lo, hi), = bistable_windows(K, OMEGA, 1.0)
    record(1, abs(lo - 3.4) <= 0.1 and abs(hi - 7.0) <= 0.1, f"window [{lo:.4f}, {hi:.4f}], expected [3.4, 7.0] +-0.1")


def test_criterion_02_mf_fold_points():
    (lo, hi), = bistable_windows(3.0, OMEGA, 1.0)
    a, b = lo / 3.0, hi / 3.0
    record(2, abs(a - 0.30) <= 0.01 and abs(b - 0.37) <= 0.01,
           f"Delta/JZ = [{a:.4f}, {b:.4f}], expected [0.30, 0.37] +-0.01")


def test_criterion_03_cusp():
    t0 = time.perf_counter()
    c = locate_cusp(OMEGA, 1.0)
    dt = time.perf_counter() - t0
    record(3, abs(c.jz_product - 2) <= 0.02 and abs(c.delta - 0.5) <= 0.02 and dt < 10,
           f"cusp at (J Z={c.jz_product:.4f}, Delta={c.delta:.4f}) in {dt:.2f}s")


def test_criterion_04_steady_state_geometry():
    rng = np.random.default_rng(2024)
    worst_plane = worst_ell = 0.0
    bad_range = 0
    n_states = 0
    for _ in range(1000):
        k, om, d = rng.uniform(-20, 20), rng.uniform(-5, 5), rng.uniform(-20, 20)
        for s in mf_steady_states(ModelParams.from_coupling_product(k, omega=om, delta=d)):
            mx, my, mz = s.mu
            worst_plane = max(worst_plane, abs(mz - (2 * my * om - 1)))
            worst_ell = max(worst_ell, abs(2 * mx**2 + 2 * my**2 + 4 * (mz + 0.5) ** 2 - 1))
            bad_range += not (-1 - 1e-12 <= mz <= 1e-12)
            n_states += 1
    record(4, worst_plane < 1e-10 and worst_ell < 1e-10 and bad_range == 0,
           f"{n_states} states: plane {worst_plane:.1e}, ellipsoid {worst_ell:.1e}, out of range {bad_range}")


def _sorted_states(p, flip=(1, 1, 1)):
    return np.array(sorted((s.mu * np.array(flip)).tolist() for s in mf_steady_states(p)))


def test_criterion_05_symmetries():
    rng = np.random.default_rng(5)
    ks, ds = rng.uniform(-15, 15, 10), rng.uniform(-15, 15, 10)
    worst = 0.0
    mismatched = 0
    for k in ks:
        for d in ds:
            om, shift = rng.uniform(-3, 3), rng.uniform(-5, 5)
            base = ModelParams.from_coupling_product(k, omega=om, delta=d)
            pairs = [
                (_sorted_states(base, (-1, 1, 1)), _sorted_states(ModelParams.from_coupling_product(-k, omega=om, delta=-d))),
                (_sorted_states(base, (-1, -1, 1)), _sorted_states(ModelParams.from_coupling_product(k, omega=-om, delta=d))),
                (_sorted_states(base), _sorted_states(ModelParams(omega=om, delta=d, j=base.j + shift, jz=shift))),
            ]
            for a, b in pairs:
                if a.shape != b.shape:
                    mismatched += 1
                    continue
                worst = max(worst, float(np.max(np.abs(a - b))))
    record(5, worst < 1e-10 and mismatched == 0, f"100 grid points, max deviation {worst:.1e}, count mismatches {mismatched}")


# -- exact solver ------------------------------------------------------------


def test_criterion_06_hierarchy_exactness():
    bonds = BondList.ring(4)
    p = ModelParams(omega=OMEGA, delta=1.0, j=2.0 / bonds.connectivity)
    t0 = time.perf_counter()
    chk = hierarchy_check(p, bonds, t_end=20.0, dt=0.01)
    dt = time.perf_counter() - t0
    record(6, chk.max_error < 1e-5 and dt < 30, f"max error {chk.max_error:.2e} over t in [0, 20] in {dt:.1f}s")


def test_criterion_07_zero_coupling():
    p = ModelParams(omega=OMEGA, delta=1.0)
    exact = oracle_observables(oracle_steady_state(p, BondList(1, ()), t_end=80.0), BondList(1, ()), triples=[]).mu[0]
    lat = LatticeSpec((16,))
    run = mfqf_integrate(MfqfState.product(lat), ModelParams(omega=OMEGA, delta=1.0, lattice=lat), 200.0,
                         kappa_tol=1e-14)
    err = float(np.max(np.abs(run.state.mu - exact)))
    th = float(np.max(run.theta_max))
    record(7, run.converged and err < 1e-8 and th < 1e-10, f"{run.status.value}, |mu - exact| {err:.1e}, max Theta~ {th:.1e}")


# -- 1D scan -----------------------------------------------------------------


def test_criterion_08_breakdown_window(scan_1d):
    bd = [d for d, pt in scan_1d.items() if pt.classification is Classification.BREAKDOWN]
    if not bd:
        record(8, False, "no breakdown in the scan")
    lo, hi = min(bd), max(bd)
    inside = [d for d in scan_1d if lo <= d <= hi]
    contiguous = len(inside) == len(bd)
    ok = contiguous and 7.4 <= lo <= 7.7 + 1e-9 and 8.3 - 1e-9 <= hi <= 8.6
    record(8, ok, f"breakdown for Delta in [{lo:.1f}, {hi:.1f}] ({len(bd)} points, contiguous={contiguous})")


def test_criterion_09_crossover(scan_1d):
    fits = {}
    for d, pt in scan_1d.items():
        if pt.classification is Classification.STEADY:
            fits[d] = [fit_correlation_profile(pt.state.profile(c), r_min=2).q for c in COMPONENTS]
    low = [min(q) for d, q in fits.items() if d <= 5]
    high = [max(q) for d, q in fits.items() if d >= 10]
    szz = {d: abs(pt.sigma[2]) for d, pt in scan_1d.items() if pt.classification is Classification.STEADY}
    peak = max(szz.values())
    ratio = peak / szz[2.0]
    ok = len(low) > 0 and len(high) > 0 and min(low) > 0.1 and max(high) < 0.05 and ratio >= 100
    record(9, ok, f"min q (Delta<=5) {min(low):.3f}, max q (Delta>=10) {max(high):.3f}, "
                  f"Sigma_zz peak/Delta=2 = {ratio:.3g}")


# -- 2D sweeps ---------------------------------------------------------------


def test_sweep_step_is_stable():
    diff, ok = step_halving_check(MfqfState.product(LAT_2D), _p(7.0, LAT_2D), 20.0, DT_2D)
    assert ok, f"halving dt={DT_2D} changes mu by {diff:.2e}"


def test_criterion_10_hysteresis(sweeps_2d):
    up, down = sweeps_2d
    settled = (Classification.STEADY, Classification.LIMIT_CYCLE)
    diff = []
    for a, b in zip(up, down):
        assert a.delta == b.delta
        both = a.classification in settled and b.classification in settled
        diff.append(both and np.max(np.abs(a.mu - b.mu)) > 1e-3)
    windows, start = [], None
    for i, flag in enumerate(diff + [False]):
        if flag and start is None:
            start = i
        if not flag and start is not None:
            windows.append((up[start].delta, up[i - 1].delta))
            start = None
    hit = [w for w in windows if w[0] <= 8.0 and w[1] >= 6.0]
    record(10, bool(hit), f"up/down disagree on {windows}; overlapping [6, 8]: {hit}")


def test_criterion_11_limit_cycle(sweeps_2d):
    up, _ = sweeps_2d
    pt = next(p for p in up if abs(p.delta - 8.3) < 1e-9)
    c = pt.cycle
    ok_83 = (pt.classification is Classification.LIMIT_CYCLE and c is not None and c.is_cycle
             and c.cycles_observed >= 10)
    window = [p.delta for p in up if 8.2 - 1e-9 <= p.delta <= 8.35 + 1e-9 and p.classification is Classification.LIMIT_CYCLE]
    detail = f"Delta=8.3: {pt.classification.value}"
    if c is not None:
        detail += f", period {c.period:.3f}, amplitude {np.max(c.amplitude):.3g}, drift {c.drift:.1e}, " \
                  f"{c.cycles_observed:.0f} periods"
    record(11, ok_83 and bool(window), detail + f"; limit-cycle points in [8.2, 8.35]: {window}")


def test_criterion_12_critical_slowing(sweeps_2d):
    up, down = sweeps_2d
    checks = []
    for label, pts in (("up", up), ("down", down[::-1])):
        for branch, ended in branches(pts):
            if not ended or len(branch) < 2:
                continue
            tail = branch[-5:]
            k = np.array([p.kappa for p in tail])
            checks.append((label, tail[-1].delta, bool(np.all(np.diff(k) < 0)), np.round(k, 4).tolist()))
    ok = bool(checks) and all(c[2] for c in checks)
    detail = "; ".join(f"{lab} end {d:.1f}: {'decreasing' if m else 'not decreasing'} {k}" for lab, d, m, k in checks)
    record(12, ok, detail)


# -- analysis ----------------------------------------------------------------


def test_criterion_13_analysis_oracles():
    r = np.arange(1, 21, dtype=float)
    f1 = fit_correlation_profile(0.3 * np.exp(-0.5 * r), r)
    f2 = fit_correlation_profile(np.exp(-0.2 * r) * np.cos(1.1 * r), r)
    t = np.linspace(0, 30, 600)
    k1 = fit_relaxation(t, 2 + 3 * np.exp(-0.7 * t)).kappa
    tr = mf_integrate([0, 0, 0], ModelParams(omega=0.0, delta=0.3, j=1.0), 20.0, 0.01)
    k2 = fit_relaxation(tr.times, tr.mu[:, 2], 0.8).kappa
    tc = np.arange(0, 300, 0.1)
    const = detect_limit_cycle(tc, np.tile([0.1, 0.2, -0.5], (len(tc), 1)))
    sine = detect_limit_cycle(tc, np.stack([0.1 * np.sin(2 * np.pi * tc / 7), 0 * tc, 0 * tc - 0.5], axis=1))
    checks = {
        "exp lambda": abs(f1.lam - 0.5) <= 1e-3 and f1.q == 0 and abs(f1.B) < 1e-6,
        "cos lambda/q": abs(f2.lam - 0.2) <= 1e-2 and abs(f2.q - 1.1) <= 1e-2,
        "kappa synthetic": abs(k1 - 0.7) <= 1e-3,
        "kappa MF": abs(k2 - 1.0) <= 1e-3,
        "constant tail": not const.is_cycle and np.all(const.amplitude == 0),
        "sine period": abs(sine.period - 7) <= 0.05,
    }
    failed = [k for k, v in checks.items() if not v]
    record(13, not failed, f"lambda {f1.lam:.4f}/{f2.lam:.4f}, q {f2.q:.4f}, kappa {k1:.4f}/{k2:.4f}, "
                           f"period {sine.period:.4f}" + (f"; failed: {failed}" if failed else ""))
