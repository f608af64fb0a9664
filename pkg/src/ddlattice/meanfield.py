"""Mean-field limit: product-state dynamics of the uniform magnetization.

All routines see the couplings only through ``K = (J - Jz) * Z``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import brentq

from .integrate import rk4_fixed
from .params import ModelParams, ParameterError

REAL_ROOT_TOL = 1e-9
STABILITY_MARGIN = 1e-8
BLOWUP_BOUND = 1.1
MU_Y_BOUND = 1 / np.sqrt(2)

AXES = {"x": 0, "y": 1, "z": 2}


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SteadyStateSolution:
    mu: np.ndarray
    stability: Stability
    eigenvalues: np.ndarray

    @property
    def is_stable(self) -> bool:
        return self.stability is Stability.STABLE


@dataclass
class Trajectory:
    times: np.ndarray
    mu: np.ndarray  # (n, 3)

    @property
    def final(self) -> np.ndarray:
        return self.mu[-1]


def default_dt(p: ModelParams) -> float:
    """0.01/Gamma, shrunk when the coherent rates become large compared to Gamma."""
    fastest = abs(p.effective_coupling) + abs(p.delta) + 2 * abs(p.omega) + p.gamma
    return min(0.01 / p.gamma, 0.2 / fastest)


# ---------------------------------------------------------------------------
# equations of motion


def mf_rhs(mu, p: ModelParams) -> np.ndarray:
    """Time derivative of the magnetization; ``mu`` may carry leading batch axes."""
    mu = np.asarray(mu, dtype=float)
    k, d, om, g = p.effective_coupling, p.delta, p.omega, p.gamma
    mx, my, mz = mu[..., 0], mu[..., 1], mu[..., 2]
    return np.stack(
        [
            -k * my * mz - d * my - 0.5 * g * mx,
            k * mx * mz - 2 * om * mz + d * mx - 0.5 * g * my,
            2 * om * my - g * (1 + mz),
        ],
        axis=-1,
    )


def spin_length_rate(mu, gamma: float) -> np.ndarray:
    """d(mu^2)/dt along a mean-field trajectory."""
    mu = np.asarray(mu, dtype=float)
    mx, my, mz = mu[..., 0], mu[..., 1], mu[..., 2]
    return -gamma * (mx**2 + my**2 + 2 * mz**2 + 2 * mz)


def _blowup_guard(y):
    if np.max(np.abs(y)) > BLOWUP_BOUND:
        raise IntegrationError(
            f"|mu| component exceeded {BLOWUP_BOUND}; mean-field flow contracts into the "
            "unit ball, so the inputs or the step size are wrong"
        )


def mf_integrate(
    mu0,
    p: ModelParams,
    t_end: float,
    dt: float | None = None,
    *,
    record_every: int = 1,
    self_check: bool = True,
    check_tol: float = 1e-6,
    max_halvings: int = 4,
) -> Trajectory:
    """Fixed-step RK4 trajectory from ``mu0``.

    With ``self_check`` the run is repeated at half the step until the endpoint
    moves by less than ``check_tol``; the finest accepted run is returned.
    """
    dt = default_dt(p) if dt is None else float(dt)
    f = lambda y: mf_rhs(y, p)  # noqa: E731
    _blowup_guard(np.asarray(mu0, dtype=float))
    times, ys = rk4_fixed(f, mu0, t_end, dt, record_every, check=_blowup_guard)
    if self_check:
        for _ in range(max_halvings):
            _, fine = rk4_fixed(f, mu0, t_end, dt / 2, 1, check=_blowup_guard)
            if np.max(np.abs(fine[-1] - ys[-1])) < check_tol:
                break
            dt /= 2
            times, ys = rk4_fixed(f, mu0, t_end, dt, record_every, check=_blowup_guard)
        else:
            warnings.warn(f"mean-field endpoint not step-size stable to {check_tol} at dt={dt}")
    return Trajectory(times, ys)


# ---------------------------------------------------------------------------
# steady states


def steady_state_cubic(p: ModelParams) -> np.ndarray:
    """Coefficients (highest first) of the cubic satisfied by the steady-state mu_y."""
    return _cubic(p.effective_coupling, p.delta, p.omega, p.gamma)


def _cubic(k, delta, omega, gamma):
    a = 2.0 * omega / gamma
    c = delta - k
    return np.array(
        [
            (k * a) ** 2,
            2.0 * k * a * c,
            c * c + 2.0 * omega**2 + 0.25 * gamma**2,
            -gamma * omega,
        ]
    )


def cubic_discriminant(coeffs) -> float:
    a, b, c, d = coeffs
    return 18 * a * b * c * d - 4 * b**3 * d + b * b * c * c - 4 * a * c**3 - 27 * a * a * d * d


def _trim(coeffs):
    scale = np.max(np.abs(coeffs))
    if scale == 0:
        return coeffs[-1:]
    i = 0
    while i < len(coeffs) - 1 and abs(coeffs[i]) <= 1e-14 * scale:
        i += 1
    return coeffs[i:]


def _real_roots(coeffs) -> np.ndarray:
    trimmed = _trim(np.asarray(coeffs, dtype=float))
    if len(trimmed) < 2:
        return np.empty(0)
    roots = np.roots(trimmed)
    keep = np.abs(roots.imag) < REAL_ROOT_TOL * (1 + np.abs(roots.real))
    real = np.sort(roots.real[keep])
    poly = np.poly1d(trimmed)
    dpoly = poly.deriv()
    polished = []
    for r in real:
        for _ in range(3):
            slope = dpoly(r)
            if slope == 0:
                break
            step = poly(r) / slope
            if not np.isfinite(step) or abs(step) > 1e-6 * (1 + abs(r)):
                break
            r -= step
        polished.append(r)
    return np.asarray(polished)


def magnetization_from_my(my, p: ModelParams) -> np.ndarray:
    """Complete a steady state from its mu_y using the plane and x-equation relations."""
    g, om, d, k = p.gamma, p.omega, p.delta, p.effective_coupling
    my = np.asarray(my, dtype=float)
    mz = 2 * my * om / g - 1
    mx = -2 * my * (g * d - g * k + 2 * k * om * my) / g**2
    return np.stack([mx, my, mz], axis=-1)


def stability_matrix(mu, p: ModelParams) -> np.ndarray:
    k, d, om, g = p.effective_coupling, p.delta, p.omega, p.gamma
    mx, my, mz = mu
    return np.array(
        [
            [-g / 2, -k * mz - d, -k * my],
            [k * mz + d, -g / 2, k * mx - 2 * om],
            [0.0, 2 * om, -g],
        ]
    )


def classify(eigenvalues, margin: float = STABILITY_MARGIN) -> Stability:
    re = np.real(eigenvalues)
    if np.any(np.abs(re) <= margin):
        return Stability.MARGINAL
    if np.all(re < -margin):
        return Stability.STABLE
    return Stability.UNSTABLE


def mf_stability(mu, p: ModelParams) -> tuple[np.ndarray, Stability]:
    eig = np.linalg.eigvals(stability_matrix(np.asarray(mu, dtype=float), p))
    eig = eig[np.lexsort((eig.imag, eig.real))]
    return eig, classify(eig)


def mf_steady_states(p: ModelParams) -> list[SteadyStateSolution]:
    """All real steady states, sorted by ascending mu_z."""
    roots = _real_roots(steady_state_cubic(p))
    # steady states lie on an ellipsoid with |mu_y| <= 1/sqrt(2); roots beyond it come
    # from dropping a negligible leading coefficient and are not fixed points
    roots = roots[np.abs(roots) <= MU_Y_BOUND * (1 + 1e-9)]
    if roots.size == 0:
        # unreachable for gamma > 0: the cubic always has a real root
        raise ParameterError("steady-state cubic has no real root")
    out = []
    for my in roots:
        mu = magnetization_from_my(my, p)
        eig, stab = mf_stability(mu, p)
        out.append(SteadyStateSolution(mu, stab, eig))
    out.sort(key=lambda s: s.mu[2])
    return out


def fixed_point_residual(mu, p: ModelParams) -> float:
    return float(np.max(np.abs(mf_rhs(mu, p))))


# ---------------------------------------------------------------------------
# bistability region


@dataclass
class RegionMap:
    jz_products: np.ndarray
    deltas: np.ndarray
    discriminant: np.ndarray  # (n_k, n_delta)
    root_count: np.ndarray
    boundary: np.ndarray  # True where the discriminant sign differs from a grid neighbor

    @property
    def bistable(self) -> np.ndarray:
        return self.root_count == 3


def discriminant_at(jz_product: float, delta: float, omega: float, gamma: float = 1.0) -> float:
    return cubic_discriminant(_cubic(jz_product, delta, omega, gamma))


def mf_bistability_region(omega: float, gamma: float, jz_products, deltas) -> RegionMap:
    ks = np.asarray(jz_products, dtype=float)
    ds = np.asarray(deltas, dtype=float)
    if ks.size < 2 or ds.size < 2:
        raise ValueError("need at least two grid points per axis")
    disc = np.array([[discriminant_at(k, d, omega, gamma) for d in ds] for k in ks])
    cubic_degree = (ks * omega != 0)[:, None]
    count = np.where((disc > 0) & cubic_degree, 3, 1)
    pos = disc > 0
    boundary = np.zeros_like(pos)
    boundary[:-1, :] |= pos[:-1, :] != pos[1:, :]
    boundary[1:, :] |= pos[:-1, :] != pos[1:, :]
    boundary[:, :-1] |= pos[:, :-1] != pos[:, 1:]
    boundary[:, 1:] |= pos[:, :-1] != pos[:, 1:]
    return RegionMap(ks, ds, disc, count, boundary)


def bistable_windows(
    jz_product: float, omega: float, gamma: float = 1.0, *, samples: int = 4001
) -> list[tuple[float, float]]:
    """Detuning intervals with three real steady states, edges refined to machine precision."""
    span = 2 * abs(jz_product) + 4 * abs(omega) + 4 * gamma
    ds = np.linspace(-span, span, samples)
    f = lambda d: discriminant_at(jz_product, d, omega, gamma)  # noqa: E731
    vals = np.array([f(d) for d in ds])
    pos = vals > 0
    edges = []
    for i in np.nonzero(pos[1:] != pos[:-1])[0]:
        edges.append(brentq(f, ds[i], ds[i + 1], xtol=1e-13))
    if pos[0]:
        edges.insert(0, ds[0])
    if pos[-1]:
        edges.append(ds[-1])
    return [(edges[i], edges[i + 1]) for i in range(0, len(edges) - 1, 2)]


@dataclass(frozen=True)
class Cusp:
    jz_product: float
    delta: float


def locate_cusp(
    omega: float,
    gamma: float = 1.0,
    *,
    k_start: float | None = None,
    k_step: float = 0.02,
    n_fit: int = 6,
) -> Cusp:
    """Trace both fold curves toward small |J Z| until they merge.

    Near the cusp the window width scales as (K - K_c)^(3/2), so width^(2/3) and
    the window midpoint are extrapolated linearly to zero width.
    """
    k = k_start if k_start is not None else 2.0 + 3.0 * abs(2 * omega / gamma - 1) + 1.0
    traced = []
    while k > 0:
        windows = [w for w in bistable_windows(k, omega, gamma, samples=20001) if w[1] > w[0]]
        # the component on the positive-detuning side of the line J Z = -Delta
        windows = [w for w in windows if 0.5 * (w[0] + w[1]) > -k]
        if not windows:
            break
        lo, hi = windows[0]
        traced.append((k, lo, hi))
        k -= k_step
    if len(traced) < 2:
        raise ValueError("no bistability window found while tracing toward the cusp")
    tail = np.array(traced[-n_fit:])
    ks, lo, hi = tail[:, 0], tail[:, 1], tail[:, 2]
    w23 = (hi - lo) ** (2.0 / 3.0)
    slope, icpt = np.polyfit(ks, w23, 1)
    kc = -icpt / slope
    mid = np.polyfit(ks, 0.5 * (lo + hi), 2)
    return Cusp(float(kc), float(np.polyval(mid, kc)))


# ---------------------------------------------------------------------------
# basins of attraction


@numba.njit(cache=True)
def _mf_f(m, k, d, om, g, out):
    out[0] = -k * m[1] * m[2] - d * m[1] - 0.5 * g * m[0]
    out[1] = k * m[0] * m[2] - 2 * om * m[2] + d * m[0] - 0.5 * g * m[1]
    out[2] = 2 * om * m[1] - g * (1 + m[2])


@numba.njit(cache=True)
def _relax_point(m0, k, d, om, g, dt, n_max, n_window, tol):
    m = m0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    quiet = 0
    for _ in range(n_max):
        _mf_f(m, k, d, om, g, k1)
        rate = max(abs(k1[0]), abs(k1[1]), abs(k1[2]))
        if rate < tol:
            quiet += 1
            if quiet >= n_window:
                return m, 0
        else:
            quiet = 0
        for i in range(3):
            tmp[i] = m[i] + 0.5 * dt * k1[i]
        _mf_f(tmp, k, d, om, g, k2)
        for i in range(3):
            tmp[i] = m[i] + 0.5 * dt * k2[i]
        _mf_f(tmp, k, d, om, g, k3)
        for i in range(3):
            tmp[i] = m[i] + dt * k3[i]
        _mf_f(tmp, k, d, om, g, k4)
        for i in range(3):
            m[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        if abs(m[0]) > 1.1 or abs(m[1]) > 1.1 or abs(m[2]) > 1.1:
            return m, 2
    return m, 1


class BasinStatus(str, enum.Enum):
    CONVERGED = "converged"
    UNRESOLVED = "unresolved"
    EMPTY = "empty"
    DIVERGED = "diverged"


_STATUS_CODES = [BasinStatus.CONVERGED, BasinStatus.UNRESOLVED, BasinStatus.DIVERGED]


@dataclass
class BasinScan:
    axes: tuple[str, str]
    offset: float
    coords: np.ndarray  # 1D grid used on both axes
    final_mu: np.ndarray  # (n, n, 3); NaN outside the disc
    status: np.ndarray  # (n, n) of BasinStatus values (strings)

    @property
    def final_mu_z(self) -> np.ndarray:
        return self.final_mu[..., 2]

    def rows(self):
        n = len(self.coords)
        for ix in range(n):
            for iy in range(n):
                yield (ix, iy, self.coords[ix], self.coords[iy],
                       self.final_mu[ix, iy, 2], str(self.status[ix, iy]))


def mf_basin_scan(
    p: ModelParams,
    axes: Sequence[str] = ("y", "z"),
    resolution: int = 41,
    *,
    offset: float = 0.0,
    radius: float = 1.0,
    t_max: float | None = None,
    window: float | None = None,
    tol: float = 1e-9,
    dt: float | None = None,
) -> BasinScan:
    """Final magnetization for initial conditions on a planar cut through the Bloch ball.

    The grid covers [-radius, radius]^2 in the two named components; the third
    component is fixed to ``offset``. A point counts as converged once
    max|dmu/dt| stays below ``tol`` for a full ``window``.
    """
    axes = tuple(axes)
    if len(axes) != 2 or any(a not in AXES for a in axes) or axes[0] == axes[1]:
        raise ValueError(f"axes must name two distinct components of x, y, z, got {axes}")
    g = p.gamma
    t_max = 500.0 / g if t_max is None else t_max
    window = 10.0 / g if window is None else window
    dt = default_dt(p) if dt is None else dt
    n_max = int(np.ceil(t_max / dt))
    n_window = max(1, int(np.ceil(window / dt)))
    ia, ib = AXES[axes[0]], AXES[axes[1]]
    ic = 3 - ia - ib
    coords = np.linspace(-radius, radius, resolution)
    final = np.full((resolution, resolution, 3), np.nan)
    status = np.full((resolution, resolution), BasinStatus.EMPTY.value, dtype="<U10")
    k = p.effective_coupling
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            if a * a + b * b + offset * offset > radius * radius + 1e-12:
                continue
            m0 = np.zeros(3)
            m0[ia], m0[ib], m0[ic] = a, b, offset
            m, code = _relax_point(m0, k, p.delta, p.omega, g, dt, n_max, n_window, tol)
            final[i, j] = m
            status[i, j] = _STATUS_CODES[code].value
    return BasinScan((axes[0], axes[1]), offset, coords, final, status)


# ---------------------------------------------------------------------------
# inverse map and frame conversion


def params_from_magnetization(mu, gamma: float, jz_product: float, *, tol: float = 1e-9):
    """(Omega, Delta) making ``mu`` a mean-field fixed point at the given Gamma and J Z.

    Raises if mu_y vanishes (only the undriven state mu = (0, 0, -1) has mu_y = 0)
    or if ``mu`` is off the steady-state ellipse, where no such pair exists.
    """
    mx, my, mz = (float(v) for v in mu)
    if my == 0:
        raise ParameterError("mu_y = 0 requires the Omega = 0 branch (mu = (0, 0, -1))")
    omega = gamma * (1 + mz) / (2 * my)
    delta = -gamma * mx / (2 * my) - jz_product * mz
    p = ModelParams(gamma=gamma, omega=omega, delta=delta, j=jz_product / 2, dimension=1)
    if fixed_point_residual(mu, p) > tol * (1 + abs(jz_product) + abs(delta) + abs(omega)):
        raise ParameterError(
            "magnetization is not a steady state for any (Omega, Delta): it violates the "
            "steady-state ellipsoid"
        )
    return omega, delta


def lab_frame_to_rotating(omega_c: float, omega: float) -> float:
    """Detuning of the two-level splitting from the drive frequency."""
    return omega_c - omega
