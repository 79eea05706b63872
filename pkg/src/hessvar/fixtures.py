"""Named potentials and synthetic fields used by the CLI and test fixtures."""

from __future__ import annotations

import numpy as np

from . import symmat
from .grids import ScalarGrid, SymMatField, sample


def _zero(*X):
    return 0.0 * X[0]


def _cubic_biharmonic(*X):
    return X[0] ** 3 * X[1]


def _cubic_harmonic(*X):
    return X[0] ** 3 - 3.0 * X[0] * X[1] ** 2


def _cubic_axes(*X):
    return sum(x**3 for x in X)


def _quadratic_iso(*X):
    return 0.5 * sum(x**2 for x in X)


def _harmonic_exp(*X):
    return np.exp(X[0]) * np.cos(X[1])


POTENTIALS = {
    "zero": _zero,
    "cubic_biharmonic": _cubic_biharmonic,
    "cubic_harmonic": _cubic_harmonic,
    "cubic_axes": _cubic_axes,
    "quadratic_iso": _quadratic_iso,
    "harmonic_exp": _harmonic_exp,
}


def potential(name: str, amplitude: float = 1.0):
    """Callable ``(X1, ..., Xn) -> amplitude * u(x)`` from the registry."""
    if name not in POTENTIALS:
        known = ", ".join(sorted(POTENTIALS))
        raise KeyError(f"unknown potential {name!r}; known: {known}")
    fn = POTENTIALS[name]

    def scaled(*X):
        return amplitude * fn(*X)

    return scaled


def sample_potential(grid: ScalarGrid, name: str, amplitude: float = 1.0) -> ScalarGrid:
    return sample(grid, potential(name, amplitude))


def hyperplane_jump_field(grid_like, matrix, axis: int = 0,
                          offset: float | None = None) -> SymMatField:
    """Field +-A split by the hyperplane {x_axis = offset}.

    The default offset sits just off the node lattice so no node lands on
    the jump itself.
    """
    packed = symmat.pack(np.asarray(matrix, dtype=float))
    shift = 0.49 * grid_like.h if offset is None else offset
    X = grid_like.coords()[axis]
    vals = np.where((X > shift)[..., None], packed, -packed)
    return SymMatField(h=grid_like.h, origin=np.array(grid_like.origin),
                       values=vals)
