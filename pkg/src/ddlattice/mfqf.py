"""Mean field dressed by two-point quantum fluctuations (MFQF).

The state is the uniform magnetization plus the six correlators
theta_ab(R) = <s_R^a s_0^b> on every nonzero displacement of a periodic
lattice. Connected three-point functions are dropped.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .analysis import LimitCycleReport, detect_limit_cycle
from .lattice import LatticeSpec
from .meanfield import mf_steady_states
from .params import ModelParams, ParameterError

COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")
PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))

KAPPA_TOL = 1e-8
THETA_STALL_TOL = 1e-6
BREAKDOWN_THRESHOLD = 1.0
WARNING_THRESHOLD = 0.8
WINDOW = 10.0
SYMMETRY_SPREAD_TOL = 1e-6


class MfqfError(RuntimeError):
    pass


class SymmetryError(MfqfError):
    """The state left the translation/point-group symmetric sector."""


class Classification(str, enum.Enum):
    STEADY = "steady"
    BREAKDOWN = "breakdown"
    LIMIT_CYCLE = "limit_cycle"
    NON_CONVERGED = "non_converged"
    ERROR = "error"


@dataclass
class MfqfState:
    lattice: LatticeSpec
    mu: np.ndarray  # (3,)
    theta: np.ndarray  # (6, N), origin column unused
    time: float = 0.0

    @classmethod
    def product(cls, lattice: LatticeSpec, mu=(0.0, 0.0, -1.0)) -> "MfqfState":
        mu = np.array(mu, dtype=float)
        th = np.zeros((6, lattice.site_count))
        _kernels.fill_product(mu, th)
        return cls(lattice, mu, th)

    def copy(self) -> "MfqfState":
        return MfqfState(self.lattice, self.mu.copy(), self.theta.copy(), self.time)

    @property
    def product_field(self) -> np.ndarray:
        return np.array([self.mu[a] * self.mu[b] for a, b in PAIRS])

    @property
    def eta(self) -> np.ndarray:
        """Connected correlators, (6, N); the origin column is zero."""
        out = self.theta - self.product_field[:, None]
        out[:, 0] = 0.0
        return out

    def theta_max(self) -> np.ndarray:
        out = np.zeros(6)
        _kernels.max_abs_eta(self.mu, self.theta, out)
        return out

    def unit_theta(self) -> np.ndarray:
        """Correlators averaged over the Z unit displacements, and their spread."""
        vals = self.theta[:, self.lattice.unit_indices]
        return vals.mean(axis=1), float(np.max(vals.max(axis=1) - vals.min(axis=1)))

    def profile(self, component: str | int, axis: int = 0) -> np.ndarray:
        """eta along a principal axis for R = 1 .. L//2."""
        c = COMPONENTS.index(component) if isinstance(component, str) else component
        idx = self.lattice.axis_indices(axis)
        return self.eta[c, idx[1 : self.lattice.extents[axis] // 2 + 1]]

    def inversion_asymmetry(self) -> float:
        inv = self.lattice.inversion_table
        eta = self.eta
        return float(np.max(np.abs(eta - eta[:, inv])))


def _tables(lattice: LatticeSpec):
    return (
        lattice.neighbor_table,
        (lattice.l1_norms == 1).astype(float),
        lattice.unit_indices,
    )


def _check_params(p: ModelParams, lattice: LatticeSpec):
    lattice.require_mfqf_extents()
    if p.dimension != lattice.dimension:
        raise ParameterError(
            f"parameters are for dimension {p.dimension}, lattice has dimension {lattice.dimension}"
        )


# ---------------------------------------------------------------------------
# right-hand sides


def mu_rate_from_correlator(mu, theta1, p: ModelParams, connectivity: float) -> np.ndarray:
    """Exact d mu/dt given the nearest-neighbor correlator, as a 3x3 matrix or in component order."""
    t1 = np.asarray(theta1, dtype=float)
    if t1.shape == (3, 3):
        t_xz, t_yz = 0.5 * (t1[0, 2] + t1[2, 0]), 0.5 * (t1[1, 2] + t1[2, 1])
    else:
        t_xz, t_yz = t1[4], t1[5]
    kz = (p.j - p.jz) * connectivity
    mx, my, mz = mu
    return np.array(
        [
            -kz * t_yz - p.delta * my - 0.5 * p.gamma * mx,
            kz * t_xz - 2 * p.omega * mz + p.delta * mx - 0.5 * p.gamma * my,
            2 * p.omega * my - p.gamma * (1 + mz),
        ]
    )


def mu_rhs_exact(state: MfqfState, p: ModelParams, *, spread_tol: float = SYMMETRY_SPREAD_TOL) -> np.ndarray:
    """Exact magnetization equations evaluated with the nearest-neighbor correlator of ``state``."""
    t1, spread = state.unit_theta()
    if spread > spread_tol:
        raise SymmetryError(
            f"unit-displacement correlators differ by {spread:.2e}; state is not in the symmetric sector"
        )
    return mu_rate_from_correlator(state.mu, t1, p, state.lattice.connectivity)


def joint_rhs(state: MfqfState, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(d mu/dt, d theta/dt) for the truncated hierarchy."""
    lat = state.lattice
    _check_params(p, lat)
    dmu = np.empty(3)
    dth = np.empty_like(state.theta)
    nbr, d1, unit = _tables(lat)
    _kernels.rhs(state.mu, state.theta, nbr, d1, unit, float(p.gamma), float(p.omega),
                 float(p.delta), float(p.j), float(p.jz), dmu, dth)
    return dmu, dth


def theta_rhs(state: MfqfState, p: ModelParams) -> np.ndarray:
    return joint_rhs(state, p)[1]


def eta_rhs(state: MfqfState, p: ModelParams) -> np.ndarray:
    """d eta/dt = d theta/dt - d(mu_a mu_b)/dt."""
    dmu, dth = joint_rhs(state, p)
    mu = state.mu
    dprod = np.array([dmu[a] * mu[b] + mu[a] * dmu[b] for a, b in PAIRS])
    out = dth - dprod[:, None]
    out[:, 0] = 0.0
    return out


# ---------------------------------------------------------------------------
# integration


def default_dt(p: ModelParams) -> float:
    """Step used unless overridden: 0.005/gamma up to J Z = 10, shrinking as 1/(|J|+|Jz|)Z beyond."""
    scale = (abs(p.j) + abs(p.jz)) * p.connectivity
    return 0.005 / p.gamma * min(1.0, 10.0 / scale) if scale > 0 else 0.005 / p.gamma


@dataclass
class MonitorRecord:
    time: float
    theta_max: np.ndarray  # (6,)
    kappa_tilde: float


@dataclass
class MfqfRun:
    state: MfqfState
    status: Classification
    monitors: list[MonitorRecord]
    times: np.ndarray
    mu: np.ndarray  # (n, 3) sampled magnetization
    spin_rate: np.ndarray  # (n,) sampled d(mu^2)/dt
    dt: float
    wall_time: float = 0.0
    message: str = ""
    cycle: LimitCycleReport | None = None

    @property
    def theta_max(self) -> np.ndarray:
        return self.monitors[-1].theta_max if self.monitors else np.zeros(6)

    @property
    def kappa_tilde(self) -> float:
        return self.monitors[-1].kappa_tilde if self.monitors else float("nan")

    @property
    def converged(self) -> bool:
        return self.status is Classification.STEADY

    def tail(self, duration: float) -> tuple[np.ndarray, np.ndarray]:
        keep = self.times >= self.times[-1] - duration
        return self.times[keep], self.mu[keep]


def mfqf_integrate(
    state0: MfqfState,
    p: ModelParams,
    t_end: float,
    dt: float | None = None,
    *,
    window: float = WINDOW,
    kappa_tol: float = KAPPA_TOL,
    stop_at_convergence: bool = True,
    sample_interval: float = 0.1,
    zero_eta: bool = False,
    breakdown_threshold: float = BREAKDOWN_THRESHOLD,
    min_time: float = 0.0,
) -> MfqfRun:
    """Fixed-step RK4 of the joint (mu, theta) system, monitored window by window.

    After each window of length ``window`` the max |eta| per component over the
    window (Theta~) and the window mean of |d mu^2/dt| (kappa~) are recorded.
    The run stops as BREAKDOWN once any Theta~ exceeds ``breakdown_threshold``,
    and as STEADY once kappa~ < ``kappa_tol`` with every Theta~ component
    changed by less than 1e-6 since the previous window.
    """
    lat = state0.lattice
    _check_params(p, lat)
    dt = default_dt(p) if dt is None else float(dt)
    started = time.perf_counter()
    st = state0.copy()
    nbr, d1, unit = _tables(lat)
    steps_per_window = max(1, int(round(window / dt)))
    dt = window / steps_per_window
    sample_every = max(1, int(round(sample_interval / dt)))
    n_samples = steps_per_window // sample_every + 1
    buf_t = np.zeros(n_samples)
    buf_mu = np.zeros((n_samples, 3))
    buf_rate = np.zeros(n_samples)
    n_windows = int(np.ceil(t_end / window - 1e-9))
    times, mus, rates, monitors = [], [], [], []
    status = Classification.NON_CONVERGED
    message = ""
    prev_theta = None
    if zero_eta:
        _kernels.fill_product(st.mu, st.theta)
    for w in range(n_windows):
        theta_max = np.zeros(6)
        t0 = st.time
        kacc, ns, finite = _kernels.advance(
            st.mu, st.theta, steps_per_window, dt, nbr, d1, unit,
            float(p.gamma), float(p.omega), float(p.delta), float(p.j), float(p.jz),
            bool(zero_eta), sample_every, buf_t, buf_mu, buf_rate, theta_max,
        )
        st.time = t0 + steps_per_window * dt
        times.append(t0 + buf_t[:ns] * dt)
        mus.append(buf_mu[:ns].copy())
        rates.append(buf_rate[:ns].copy())
        if not finite:
            monitors.append(MonitorRecord(st.time, np.full(6, np.inf), float("inf")))
            status = Classification.BREAKDOWN
            message = "state became non-finite"
            break
        final_max = st.theta_max()
        theta_max = np.maximum(theta_max, final_max)
        kt = kacc / (steps_per_window * dt)
        monitors.append(MonitorRecord(st.time, theta_max, kt))
        if np.any(theta_max > breakdown_threshold):
            status = Classification.BREAKDOWN
            worst = COMPONENTS[int(np.argmax(theta_max))]
            message = f"Theta~_{worst}={theta_max.max():.3g} > {breakdown_threshold} at t={st.time:.4g}"
            break
        if (
            stop_at_convergence
            and st.time >= min_time
            and prev_theta is not None
            and kt < kappa_tol
            and np.all(np.abs(theta_max - prev_theta) < THETA_STALL_TOL)
        ):
            status = Classification.STEADY
            break
        prev_theta = theta_max
    else:
        if (not stop_at_convergence and len(monitors) > 1 and monitors[-1].kappa_tilde < kappa_tol
                and np.all(np.abs(monitors[-1].theta_max - monitors[-2].theta_max) < THETA_STALL_TOL)):
            status = Classification.STEADY
    run = MfqfRun(
        st, status, monitors,
        np.concatenate(times) if times else np.zeros(0),
        np.concatenate(mus) if mus else np.zeros((0, 3)),
        np.concatenate(rates) if rates else np.zeros(0),
        dt, time.perf_counter() - started, message,
    )
    return run


def mfqf_step(state: MfqfState, p: ModelParams, dt: float) -> MfqfState:
    """A single RK4 step; returns a new state."""
    st = state.copy()
    nbr, d1, unit = _tables(st.lattice)
    _check_params(p, st.lattice)
    buf = np.zeros(1)
    _kernels.advance(st.mu, st.theta, 1, float(dt), nbr, d1, unit,
                     float(p.gamma), float(p.omega), float(p.delta), float(p.j), float(p.jz),
                     False, 1, buf, np.zeros((1, 3)), buf.copy(), np.zeros(6))
    st.time += dt
    return st


def step_halving_check(state0: MfqfState, p: ModelParams, t_end: float, dt: float, tol: float = 1e-6):
    """Largest change in mu at ``t_end`` when the step is halved."""
    a = mfqf_integrate(state0, p, t_end, dt, stop_at_convergence=False, window=t_end)
    b = mfqf_integrate(state0, p, t_end, dt / 2, stop_at_convergence=False, window=t_end)
    diff = float(np.max(np.abs(a.state.mu - b.state.mu)))
    return diff, diff < tol


def total_correlation(state: MfqfState) -> np.ndarray:
    """Sum of eta_ab(R) over all R != 0, per component."""
    return state.eta[:, 1:].sum(axis=1)


# ---------------------------------------------------------------------------
# classification of unfinished runs


def classify_run(run: MfqfRun, *, tail: float = 200.0) -> MfqfRun:
    """Label a run that ended without converging as a limit cycle when its tail is periodic."""
    if run.status is not Classification.NON_CONVERGED:
        return run
    t, mu = run.tail(tail)
    if len(t) < 20 or t[-1] - t[0] < 0.5 * tail:
        return run
    try:
        rep = detect_limit_cycle(t, mu)
    except ValueError:
        return run
    run.cycle = rep
    if rep.is_cycle:
        run.status = Classification.LIMIT_CYCLE
    return run


def relaxation_rate(run: MfqfRun, *, n_windows: int = 20, floor: float = 1e-13) -> float:
    """kappa from an exponential fit of the per-window kappa~ record.

    The window means of |d mu^2/dt| are smooth even when the approach is a spiral,
    so the last ``n_windows`` values above ``floor`` are regressed in log scale.
    """
    if len(run.monitors) < 3:
        return float("nan")
    t = np.array([m.time for m in run.monitors])
    k = np.array([m.kappa_tilde for m in run.monitors])
    keep = np.isfinite(k) & (k > floor)
    t, k = t[keep][-n_windows:], k[keep][-n_windows:]
    if len(t) < 3:
        return float("nan")
    slope = np.polyfit(t, np.log(k), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# branch sweeps


class Seeding(str, enum.Enum):
    CONTINUATION = "continuation"
    MF_ROOT = "mf_root"
    PRODUCT_STATE = "product_state"
    CUSTOM = "custom"


@dataclass
class SweepPoint:
    delta: float
    mu: np.ndarray
    sigma: np.ndarray
    theta_max: np.ndarray
    kappa_tilde: float
    kappa: float
    classification: Classification
    wall_time: float
    t_final: float
    message: str = ""
    state: MfqfState | None = None
    cycle: LimitCycleReport | None = None

    def row(self) -> dict:
        out = {"delta": self.delta, "mu_x": self.mu[0], "mu_y": self.mu[1], "mu_z": self.mu[2]}
        for c, v in zip(COMPONENTS, self.sigma):
            out[f"sigma_{c}"] = v
        for c, v in zip(COMPONENTS, self.theta_max):
            out[f"theta_max_{c}"] = v
        out.update(kappa_tilde=self.kappa_tilde, kappa=self.kappa,
                   classification=self.classification.value, wall_time=self.wall_time)
        return out


def _seed_state(lattice, p, seeding, root_index, custom, previous):
    if seeding is Seeding.CONTINUATION and previous is not None:
        return replace(previous.copy(), time=0.0)
    if seeding is Seeding.MF_ROOT:
        roots = mf_steady_states(p)
        k = min(root_index, len(roots) - 1)
        return MfqfState.product(lattice, roots[k].mu)
    if seeding is Seeding.CUSTOM or (seeding is Seeding.CONTINUATION and custom is not None):
        if custom is None:
            raise ValueError("custom seeding needs an initial state")
        return replace(custom.copy(), time=0.0)
    return MfqfState.product(lattice)


def branch_sweep(
    p_base: ModelParams,
    deltas: Sequence[float],
    seeding: Seeding | str = Seeding.CONTINUATION,
    *,
    lattice: LatticeSpec | None = None,
    root_index: int = 0,
    initial: MfqfState | None = None,
    t_end: float = 600.0,
    dt: float | None = None,
    keep_states: bool = False,
    cycle_tail: float = 200.0,
    progress=None,
) -> list[SweepPoint]:
    """Steady states along a monotone list of detunings.

    Under continuation each point starts from the previous point's final state
    (the first from ``initial`` or the product state); a run that broke down
    does not seed the next point, which restarts from the last good state.
    """
    seeding = Seeding(seeding)
    lattice = lattice or p_base.lattice
    if lattice is None:
        raise ValueError("a lattice is needed for correlator dynamics")
    ds = np.asarray(deltas, dtype=float)
    steps = np.diff(ds)
    if len(ds) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("sweep values must be strictly monotone")
    out = []
    previous = initial
    for d in ds:
        p = replace(p_base, delta=float(d), lattice=lattice)
        started = time.perf_counter()
        try:
            seed = _seed_state(lattice, p, seeding, root_index, initial, previous)
            run = mfqf_integrate(seed, p, t_end, dt)
            run = classify_run(run, tail=cycle_tail)
            kappa = relaxation_rate(run) if run.status in (Classification.STEADY, Classification.NON_CONVERGED) else float("nan")
            pt = SweepPoint(
                float(d), run.state.mu.copy(), total_correlation(run.state), run.theta_max,
                run.kappa_tilde, kappa, run.status, time.perf_counter() - started,
                run.state.time, run.message, run.state if keep_states else None, run.cycle,
            )
            if run.status is not Classification.BREAKDOWN:
                previous = run.state
        except (MfqfError, ParameterError, FloatingPointError) as exc:
            pt = SweepPoint(float(d), np.full(3, np.nan), np.full(6, np.nan), np.full(6, np.nan),
                            float("nan"), float("nan"), Classification.ERROR,
                            time.perf_counter() - started, 0.0, f"{type(exc).__name__}: {exc}")
        out.append(pt)
        if progress is not None:
            progress(pt)
    return out


def correlator_rows(state: MfqfState) -> Iterable[tuple]:
    """(displacement components..., eta_xx, ..., eta_yz) for every R != 0."""
    eta = state.eta
    coords = state.lattice.coords
    for i in range(1, state.lattice.site_count):
        yield (*coords[i].tolist(), *eta[:, i].tolist())
