"""Exact Lindblad evolution of small spin chains and rings (N <= 6).

Dense 2^N x 2^N density matrices; the basis is the tensor product of sigma^z
eigenstates with site 0 as the most significant factor and |up> = (1, 0).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .integrate import rk4_step
from .params import ModelParams

MAX_SITES = 6

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SMINUS = SPLUS.T.copy()
PAULI = (SX, SY, SZ)

UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BondList:
    n_sites: int
    bonds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not 1 <= self.n_sites <= MAX_SITES:
            raise OracleError(f"exact solver supports 1..{MAX_SITES} sites, got {self.n_sites}")
        seen = set()
        for i, j in self.bonds:
            if not (0 <= i < j < self.n_sites):
                raise OracleError(f"bond {(i, j)} must satisfy 0 <= i < j < N")
            if (i, j) in seen:
                raise OracleError(f"duplicate bond {(i, j)}")
            seen.add((i, j))

    @classmethod
    def chain(cls, n: int) -> "BondList":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def ring(cls, n: int) -> "BondList":
        if n < 3:
            raise OracleError("a ring needs at least 3 sites")
        return cls(n, tuple(sorted(tuple(sorted((i, (i + 1) % n))) for i in range(n))))

    @property
    def is_ring(self) -> bool:
        n = self.n_sites
        return n >= 3 and set(self.bonds) == {tuple(sorted((i, (i + 1) % n))) for i in range(n)}

    @property
    def connectivity(self) -> float:
        """Mean number of neighbors per site."""
        return 2 * len(self.bonds) / self.n_sites


def site_operator(op: np.ndarray, site: int, n: int) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for s in range(n):
        out = np.kron(out, op if s == site else np.eye(2))
    return out


class Liouvillian:
    """Right-hand side of the master equation for a given parameter set and bond list."""

    def __init__(self, p: ModelParams, bonds: BondList):
        self.p = p
        self.bonds = bonds
        n = bonds.n_sites
        self.n = n
        self.sigma = [[site_operator(P, s, n) for P in PAULI] for s in range(n)]
        self.lowering = [site_operator(SMINUS, s, n) for s in range(n)]
        dim = 2**n
        h = np.zeros((dim, dim), dtype=complex)
        for s in range(n):
            h += 0.5 * p.delta * self.sigma[s][2] + p.omega * self.sigma[s][0]
        for i, j in bonds.bonds:
            si, sj = self.sigma[i], self.sigma[j]
            h -= 0.5 * (p.j * (si[0] @ sj[0] + si[1] @ sj[1]) + p.jz * si[2] @ sj[2])
        self.hamiltonian = h
        loss = sum(L.conj().T @ L for L in self.lowering)
        self._h_eff = h - 0.5j * p.gamma * loss

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self._h_eff @ rho - rho @ self._h_eff.conj().T)
        for L in self.lowering:
            out += self.p.gamma * (L @ rho @ L.conj().T)
        return out


def build_liouvillian_apply(p: ModelParams, bonds: BondList) -> Liouvillian:
    return Liouvillian(p, bonds)


# ---------------------------------------------------------------------------
# states and invariants


def product_state(spins: Sequence[Sequence[float]] | Sequence[float], n: int | None = None) -> np.ndarray:
    """Product density matrix from Bloch vectors (one per site, or one shared by ``n`` sites)."""
    spins = np.asarray(spins, dtype=float)
    if spins.ndim == 1:
        if n is None:
            raise ValueError("pass n when giving a single Bloch vector")
        spins = np.tile(spins, (n, 1))
    rho = np.array([[1.0 + 0j]])
    for v in spins:
        local = 0.5 * (np.eye(2) + v[0] * SX + v[1] * SY + v[2] * SZ)
        rho = np.kron(rho, local)
    return rho


def all_down(n: int) -> np.ndarray:
    return product_state([0.0, 0.0, -1.0], n)


def random_density_matrix(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    dim = 2**n
    rank = dim if rank is None else rank
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10, pos_tol: float = 1e-10):
    herm = np.max(np.abs(rho - rho.conj().T))
    tr = abs(np.trace(rho) - 1)
    if herm > tol or tr > tol:
        raise OracleError(f"density matrix invariants broken: hermiticity {herm:.2e}, trace {tr:.2e}")
    lo = np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)))
    if lo < -pos_tol:
        raise OracleError(f"density matrix lost positivity: min eigenvalue {lo:.2e}")


@dataclass
class OracleTrajectory:
    times: np.ndarray
    states: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def oracle_evolve(
    rho0: np.ndarray,
    p: ModelParams,
    bonds: BondList,
    t_end: float,
    dt: float = 0.01,
    *,
    record_every: int = 1,
    check_every: int = 10,
    tol: float = 1e-10,
) -> OracleTrajectory:
    """RK4 evolution; trace, Hermiticity and positivity are checked every ``check_every`` steps."""
    if rho0.shape != (2**bonds.n_sites,) * 2:
        raise OracleError("rho0 dimension does not match the bond list")
    check_density_matrix(rho0, tol)
    L = Liouvillian(p, bonds)
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive multiple of dt")
    rho = rho0.astype(complex)
    times, states = [0.0], [rho.copy()]
    for i in range(1, n_steps + 1):
        rho = rk4_step(L, rho, dt)
        # loss of hermiticity is pure roundoff; project it out
        rho = 0.5 * (rho + rho.conj().T)
        if i % check_every == 0 or i == n_steps:
            try:
                check_density_matrix(rho, tol * max(1, i), pos_tol=1e-8)
            except OracleError as exc:
                raise OracleError(f"at t={i * dt:.4g}: {exc} (step too large?)") from exc
        if i % record_every == 0 or i == n_steps:
            times.append(i * dt)
            states.append(rho.copy())
    return OracleTrajectory(np.asarray(times), states)


def oracle_steady_state(
    p: ModelParams, bonds: BondList, rho0: np.ndarray | None = None, t_end: float = 80.0, dt: float = 0.01
) -> np.ndarray:
    rho0 = all_down(bonds.n_sites) if rho0 is None else rho0
    return oracle_evolve(rho0, p, bonds, t_end, dt, record_every=10**9).final


# ---------------------------------------------------------------------------
# observables


@dataclass
class Observables:
    mu: np.ndarray  # (N, 3)
    theta: np.ndarray  # (N, N, 3, 3): theta[i, j, a, b] = <s_i^a s_j^b>, diagonal unused
    zeta: dict[tuple[int, int, int], np.ndarray]  # (3, 3, 3) connected parts on requested triples

    @property
    def mean_mu(self) -> np.ndarray:
        return self.mu.mean(axis=0)

    @property
    def uniformity(self) -> float:
        """Largest deviation of any site's magnetization from the site average."""
        return float(np.max(np.abs(self.mu - self.mean_mu)))

    def eta(self, i: int, j: int) -> np.ndarray:
        return self.theta[i, j] - np.outer(self.mu[i], self.mu[j])

    def bond_theta(self, bonds: BondList) -> np.ndarray:
        """Bond-averaged nearest-neighbor correlator, symmetrized over bond orientation."""
        acc = np.zeros((3, 3))
        for i, j in bonds.bonds:
            acc += self.theta[i, j] + self.theta[j, i]
        return acc / (2 * len(bonds.bonds))

    def ring_theta(self, r: int) -> np.ndarray:
        """Translation average of <s_{i+r}^a s_i^b> on a ring."""
        n = self.mu.shape[0]
        return np.mean([self.theta[(i + r) % n, i] for i in range(n)], axis=0)

    def ring_eta(self, r: int) -> np.ndarray:
        m = self.mean_mu
        return self.ring_theta(r) - np.outer(m, m)


def _three_point(rho, sig, i, j, k):
    out = np.empty((3, 3, 3))
    for a, b, c in itertools.product(range(3), repeat=3):
        out[a, b, c] = np.real(np.trace(rho @ sig[i][a] @ sig[j][b] @ sig[k][c]))
    return out


def oracle_observables(
    rho: np.ndarray, bonds: BondList, triples: Iterable[tuple[int, int, int]] | None = None
) -> Observables:
    """Exact one-, two- and (connected) three-point functions.

    By default the connected three-point function is evaluated on consecutive
    nearest-neighbor triples (i, i+1, i+2).
    """
    n = bonds.n_sites
    sig = [[site_operator(P, s, n) for P in PAULI] for s in range(n)]
    mu = np.array([[np.real(np.trace(rho @ sig[s][a])) for a in range(3)] for s in range(n)])
    theta = np.zeros((n, n, 3, 3))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for a in range(3):
                left = rho @ sig[i][a]
                for b in range(3):
                    theta[i, j, a, b] = np.real(np.trace(left @ sig[j][b]))
    if triples is None:
        if bonds.is_ring:
            triples = [(i, (i + 1) % n, (i + 2) % n) for i in range(n)]
        else:
            triples = [(i, i + 1, i + 2) for i in range(n - 2)]
    zeta = {}
    for tri in triples:
        i, j, k = tri
        if len({i, j, k}) != 3:
            raise ValueError(f"three-point functions need distinct sites, got {tri}")
        ttt = _three_point(rho, sig, i, j, k)
        mi, mj, mk = mu[i], mu[j], mu[k]
        zeta[tri] = (
            ttt
            + 2 * np.einsum("a,b,c->abc", mi, mj, mk)
            - np.einsum("a,bc->abc", mi, theta[j, k])
            - np.einsum("b,ac->abc", mj, theta[i, k])
            - np.einsum("c,ab->abc", mk, theta[i, j])
        )
    return Observables(mu, theta, zeta)


def connected_three_point_direct(rho: np.ndarray, n: int, i: int, j: int, k: int) -> np.ndarray:
    """<(s_i - mu_i)(s_j - mu_j)(s_k - mu_k)> evaluated as a single trace."""
    sig = [[site_operator(P, s, n) for P in PAULI] for s in range(n)]
    eye = np.eye(2**n)
    mu = [[np.real(np.trace(rho @ sig[s][a])) for a in range(3)] for s in range(n)]
    out = np.empty((3, 3, 3))
    for a, b, c in itertools.product(range(3), repeat=3):
        op = (sig[i][a] - mu[i][a] * eye) @ (sig[j][b] - mu[j][b] * eye) @ (sig[k][c] - mu[k][c] * eye)
        out[a, b, c] = np.real(np.trace(rho @ op))
    return out



# ---------------------------------------------------------------------------
# hierarchy check


@dataclass
class HierarchyCheck:
    times: np.ndarray
    errors: np.ndarray  # (n, 3): |exact-equation rate - finite-difference rate|

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if len(self.errors) else 0.0


def hierarchy_check(p: ModelParams, bonds: BondList, rho0: np.ndarray | None = None,
                    t_end: float = 20.0, dt: float = 0.01) -> HierarchyCheck:
    """Compare the exact magnetization equations, fed with the measured nearest-neighbor
    correlator, against a five-point finite difference of the measured magnetization."""
    from .mfqf import mu_rate_from_correlator

    rho0 = all_down(bonds.n_sites) if rho0 is None else rho0
    traj = oracle_evolve(rho0, p, bonds, t_end, dt)
    obs = [oracle_observables(r, bonds, triples=[]) for r in traj.states]
    mu = np.array([o.mean_mu for o in obs])
    z = bonds.connectivity
    times, errs = [], []
    for i in range(2, len(obs) - 2):
        fd = (mu[i - 2] - 8 * mu[i - 1] + 8 * mu[i + 1] - mu[i + 2]) / (12 * dt)
        rate = mu_rate_from_correlator(mu[i], obs[i].bond_theta(bonds), p, z)
        times.append(traj.times[i])
        errs.append(np.abs(rate - fd))
    return HierarchyCheck(np.asarray(times), np.asarray(errs))
