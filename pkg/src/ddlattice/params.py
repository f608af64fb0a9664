"""Model parameters shared by the mean-field, correlator and exact solvers."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .lattice import LatticeSpec


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the driven-dissipative spin-1/2 lattice, in units where energies are rates.

    ``j`` is the XY (flip-flop) coupling and ``jz`` the Ising coupling, both per bond.
    The lattice only enters through its connectivity for mean-field work; when no
    lattice is attached ``dimension`` sets the connectivity.
    """

    gamma: float = 1.0
    omega: float = 0.0
    delta: float = 0.0
    j: float = 0.0
    jz: float = 0.0
    lattice: LatticeSpec | None = None
    dimension: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.lattice is not None:
            object.__setattr__(self, "dimension", self.lattice.dimension)
        if not 1 <= self.dimension <= 5:
            raise ParameterError(f"dimension must be in 1..5, got {self.dimension}")

    @classmethod
    def from_coupling_product(
        cls,
        jz_product: float,
        *,
        omega: float,
        delta: float,
        gamma: float = 1.0,
        lattice: LatticeSpec | None = None,
        dimension: int = 1,
        jz: float = 0.0,
    ) -> "ModelParams":
        """Build parameters from the product J*Z (XY coupling times connectivity)."""
        d = lattice.dimension if lattice is not None else dimension
        return cls(gamma=gamma, omega=omega, delta=delta, j=jz_product / (2 * d),
                   jz=jz, lattice=lattice, dimension=d)

    @property
    def connectivity(self) -> int:
        return 2 * self.dimension

    @property
    def effective_coupling(self) -> float:
        """(J - Jz) * Z, the only combination the mean-field equations see."""
        return (self.j - self.jz) * self.connectivity

    def with_delta(self, delta: float) -> "ModelParams":
        return replace(self, delta=float(delta))

    def with_lattice(self, lattice: LatticeSpec) -> "ModelParams":
        return replace(self, lattice=lattice)
