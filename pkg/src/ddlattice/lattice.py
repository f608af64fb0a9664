"""Periodic hypercubic lattice geometry and displacement indexing."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Translation-invariant hypercubic lattice with periodic wrap on every axis.

    Displacements are stored row-major over ``extents``; the origin has
    linear index 0.
    """

    extents: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        object.__setattr__(self, "extents", ext)
        if not 1 <= len(ext) <= 5:
            raise LatticeError(f"dimension must be in 1..5, got {len(ext)}")
        if any(e < 1 for e in ext):
            raise LatticeError(f"extents must be positive, got {ext}")
        if self.site_count < 2:
            raise LatticeError("lattice needs at least 2 sites")

    @classmethod
    def hypercube(cls, dimension: int, length: int) -> "LatticeSpec":
        return cls((length,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def connectivity(self) -> int:
        return 2 * self.dimension

    @property
    def site_count(self) -> int:
        return int(np.prod(self.extents))

    def require_mfqf_extents(self):
        if min(self.extents) < 3:
            raise LatticeError(
                f"correlator dynamics need extents >= 3 on every axis, got {self.extents}"
            )

    # -- indexing -----------------------------------------------------------

    def wrap(self, vector: Sequence[int]) -> tuple[int, ...]:
        if len(vector) != self.dimension:
            raise LatticeError(
                f"vector has {len(vector)} components, lattice has dimension {self.dimension}"
            )
        return tuple(int(v) % e for v, e in zip(vector, self.extents))

    def linear_index(self, components: Sequence[int]) -> int:
        return int(np.ravel_multi_index(self.wrap(components), self.extents))

    def components(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.site_count:
            raise LatticeError(f"index {index} out of range [0, {self.site_count})")
        return tuple(int(c) for c in np.unravel_index(index, self.extents))

    def l1_norm(self, components: Sequence[int]) -> int:
        """Minimum-image l1 norm of a wrapped displacement."""
        c = self.wrap(components)
        return sum(min(r, e - r) for r, e in zip(c, self.extents))

    def neighbors(self, components: Sequence[int]) -> list[tuple[int, ...]]:
        """The 2D displacements d +/- e_i, in axis order (+e_0, -e_0, +e_1, ...)."""
        c = self.wrap(components)
        out = []
        for axis in range(self.dimension):
            for step in (1, -1):
                v = list(c)
                v[axis] += step
                out.append(self.wrap(v))
        return out

    # -- vectorised tables, used by the correlator kernels ------------------

    @cached_property
    def coords(self) -> np.ndarray:
        """(N, D) integer array of canonical components for every linear index."""
        grids = np.indices(self.extents).reshape(self.dimension, -1)
        return grids.T.copy()

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(N, Z) linear indices of the neighbors of every displacement.

        For extent-2 axes both offsets land on the same site and appear twice.
        """
        idx = np.arange(self.site_count).reshape(self.extents)
        cols = []
        for axis in range(self.dimension):
            for step in (1, -1):
                cols.append(np.roll(idx, -step, axis=axis).ravel())
        return np.stack(cols, axis=1).astype(np.int64)

    @cached_property
    def l1_norms(self) -> np.ndarray:
        c = self.coords
        ext = np.asarray(self.extents)
        return np.minimum(c, ext - c).sum(axis=1)

    @cached_property
    def unit_indices(self) -> np.ndarray:
        """Linear indices of the Z displacements with l1 norm 1 (the origin's neighbors)."""
        return self.neighbor_table[0].copy()

    @cached_property
    def inversion_table(self) -> np.ndarray:
        """Linear index of -R for every R."""
        ext = np.asarray(self.extents)
        neg = (-self.coords) % ext
        return np.ravel_multi_index(tuple(neg.T), self.extents).astype(np.int64)

    def axis_indices(self, axis: int = 0) -> np.ndarray:
        """Linear indices of R = r * e_axis for r = 0 .. extent-1."""
        r = np.arange(self.extents[axis])
        comps = np.zeros((len(r), self.dimension), dtype=int)
        comps[:, axis] = r
        return np.ravel_multi_index(tuple(comps.T), self.extents)


def canonical_wrap(vector: Sequence[int], spec: LatticeSpec) -> tuple[int, ...]:
    return spec.wrap(vector)


def l1_norm(d: Sequence[int], spec: LatticeSpec) -> int:
    return spec.l1_norm(d)


@dataclass(frozen=True)
class Neighbor:
    components: tuple[int, ...]
    is_origin: bool


def neighbor_displacements(d: Sequence[int], spec: LatticeSpec) -> tuple[list[Neighbor], bool]:
    """Neighbor stencil of ``d`` with the origin tagged, plus whether ``|d|_1 == 1``."""
    out = [Neighbor(n, not any(n)) for n in spec.neighbors(d)]
    return out, spec.l1_norm(d) == 1
