"""Discrete energy assembly, weak residuals, and clamped convex minimization.

The discrete energy of a potential u on a grid is

    E(u) = h^n * sum_x F(D^2_h u(x))

over every node x where the Hessian stencil is defined (one ring beyond the
interior); the unknowns are the interior node values, with the two outer
rings clamped.  The gradient of E with respect to the interior values is the
double-divergence stencil application of F^{ij}(D^2 u) — for the quadratic
integrand it is exactly the 13-point (2D) discrete bi-Laplacian at every
interior node.

Minimization is damped Newton with Armijo backtracking; the Newton systems
are symmetric positive definite by uniform convexity and are solved with
Jacobi-preconditioned conjugate gradients.  Steps are shortened until every
node Hessian stays inside the model's admissible set (margin 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models, symmat
from .grids import (
    GridError,
    ScalarGrid,
    SymMatField,
    TestFunctionSet,
    hessian_adjoint,
    hessian_field,
    shifted,
    _hessian_stencil,
)
from .models import AdmissibilityError, DoubleDivergenceModel, EnergyModel

ADMISSIBILITY_MARGIN = 1e-6


class SolverError(RuntimeError):
    """Linear-solver or line-search breakdown."""


@dataclass(frozen=True)
class ClampedBoundaryData:
    """Prescribed values on the two outer node rings (value + normal slope).

    Only the coupled encoding is supported: both rings sampled from one
    scalar function.  Independent prescriptions of the value and the normal
    derivative are rejected by construction — there is no API for them.
    """

    ring_values: np.ndarray   # full-extents array; only prescribed slots used
    boundary_width: int = 2

    def __post_init__(self):
        vals = np.asarray(self.ring_values, dtype=float)
        object.__setattr__(self, "ring_values", vals)

    @staticmethod
    def from_potential(grid: ScalarGrid, fn) -> "ClampedBoundaryData":
        vals = np.asarray(fn(*grid.coords()), dtype=float)
        if not np.all(np.isfinite(vals[grid.prescribed])):
            raise GridError("boundary data must be finite on the prescribed rings")
        return ClampedBoundaryData(ring_values=vals, boundary_width=grid.boundary_width)

    @staticmethod
    def from_grid(grid: ScalarGrid) -> "ClampedBoundaryData":
        return ClampedBoundaryData(ring_values=np.array(grid.values),
                                   boundary_width=grid.boundary_width)

    def apply(self, grid: ScalarGrid) -> ScalarGrid:
        if self.ring_values.shape != grid.extents:
            raise GridError("boundary data shape does not match the grid")
        vals = np.array(grid.values)
        rings = grid.prescribed
        vals[rings] = self.ring_values[rings]
        return grid.with_values(vals)

    def satisfied_by(self, grid: ScalarGrid, tol: float = 1e-12) -> bool:
        rings = grid.prescribed
        scale = 1.0 + np.abs(self.ring_values[rings]).max(initial=0.0)
        dev = np.abs(grid.values[rings] - self.ring_values[rings]).max(initial=0.0)
        return bool(dev <= tol * scale)


@dataclass
class SolveReport:
    """Convergence record of one clamped minimization."""

    iterations: int = 0
    grad_norm: float = np.inf
    energy: float = np.nan
    steps: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    cg_tolerances: list = field(default_factory=list)
    converged: bool = False
    grad_tol: float = np.nan

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "energy": self.energy,
            "steps": list(self.steps),
            "energies": list(self.energies),
            "cg_iterations": list(self.cg_iterations),
            "cg_tolerances": list(self.cg_tolerances),
            "converged": self.converged,
            "grad_tol": self.grad_tol,
        }


# -------------------------------------------------------------- energy

def _quadrature_region(u: ScalarGrid, H: SymMatField | None = None) -> np.ndarray:
    H = hessian_field(u) if H is None else H
    return H.valid


def _eval_on(model_fn, H: SymMatField, region: np.ndarray):
    """Evaluate a batched matrix function on the masked nodes of a field."""
    Msub = H.matrices()[region]
    try:
        return model_fn(Msub)
    except AdmissibilityError as err:
        if err.index is not None:
            node = tuple(int(v) for v in np.argwhere(region)[err.index[0]])
            raise AdmissibilityError(
                f"inadmissible Hessian at node {node}", index=node
            ) from err
        raise


def assemble_energy(u: ScalarGrid, model: EnergyModel) -> float:
    """h^n-weighted sum of F(D^2 u) over the Hessian-valid region."""
    H = hessian_field(u)
    region = _quadrature_region(u, H)
    vals = _eval_on(lambda M: models.eval_F(model, M), H, region)
    return float(u.h**u.dim * vals.sum())


def energy_gradient(u: ScalarGrid, model: EnergyModel) -> np.ndarray:
    """Exact gradient of the discrete energy in the interior node values.

    Returns a full-extents array, zero off the interior.  Entry y equals the
    weak residual against the nodal test function at y.
    """
    H = hessian_field(u)
    region = _quadrature_region(u, H)
    G = _eval_on(lambda M: models.eval_dF(model, M), H, region)
    Gpacked = np.zeros(u.extents + (symmat.packed_size(u.dim),))
    Gpacked[region] = symmat.pack(G)
    grad = u.h**u.dim * hessian_adjoint(Gpacked, region, u.h)
    grad[~(u.interior & u.valid)] = 0.0
    return grad


def _hessian_of_values(values: np.ndarray, h: float) -> np.ndarray:
    """Packed Hessian stencil applied to a raw (globally defined) array."""
    n = values.ndim
    stencils = _hessian_stencil(n, h)
    out = np.empty(values.shape + (len(stencils),))
    for a, st in enumerate(stencils):
        acc = np.zeros(values.shape)
        for off, w in st:
            acc += w * shifted(values, off, 0.0)
        out[..., a] = acc
    return out


def _composite_stencil(T0: np.ndarray, h: float) -> dict:
    """Offset -> weight map of h^n S^T T0 S for a constant tensor T0.

    Both stencil factors are symmetric convolutions, so the composition is a
    single convolution; in 2D with the identity tensor this is the classical
    13-point discrete bi-Laplacian.
    """
    n = T0.shape[0]
    stencils = _hessian_stencil(n, h)
    dup = symmat.duplication_weights(n)
    pairs = symmat.PACKED_PAIRS[n]
    weights: dict = {}
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            Tab = T0[i, j, k, l]
            if Tab == 0.0:
                continue
            coef = dup[a] * dup[b] * Tab
            for da, wa in stencils[a]:
                for db, wb in stencils[b]:
                    off = tuple(x + y for x, y in zip(da, db))
                    weights[off] = weights.get(off, 0.0) + coef * wa * wb
    return {off: h**n * w for off, w in weights.items() if w != 0.0}


class NewtonOperator:
    """Matrix-free application of the second-derivative (stiffness) operator.

    v   ->   h^n * S^T [ T(x) : S v ]  restricted to interior nodes,

    where S is the packed Hessian stencil map and T the per-node tensor of
    second derivatives of the integrand on the quadrature region.  When T is
    constant and every stencil column of an unknown node lies inside the
    quadrature region (full grids), the operator is applied as one composite
    convolution instead.
    """

    def __init__(self, Tfield: np.ndarray, region: np.ndarray,
                 unknowns: np.ndarray, h: float,
                 constant_tensor: np.ndarray | None = None):
        self.T = Tfield                 # (K, n, n, n, n) on region nodes
        self.region = region
        self.unknowns = unknowns
        self.h = h
        self.n = region.ndim
        self.m = symmat.packed_size(self.n)
        self.composite = (
            _composite_stencil(constant_tensor, h)
            if constant_tensor is not None else None
        )

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.composite is not None:
            out = np.zeros_like(v)
            for off, w in self.composite.items():
                out += w * shifted(v, off, 0.0)
            out[~self.unknowns] = 0.0
            return out
        Hv = _hessian_of_values(v, self.h)
        sig = symmat.unpack(Hv[self.region], self.n)
        W = models.tensor_apply(self.T, sig)
        Wpacked = np.zeros(v.shape + (self.m,))
        Wpacked[self.region] = symmat.pack(W)
        out = self.h**self.n * hessian_adjoint(Wpacked, self.region, self.h)
        out[~self.unknowns] = 0.0
        return out

    def jacobi_diagonal(self) -> np.ndarray:
        """Exact diagonal of the operator on the unknown nodes."""
        if self.composite is not None:
            diag = np.full(self.region.shape, self.composite[(0,) * self.n])
            diag[~self.unknowns] = 1.0
            return diag
        n, h = self.n, self.h
        stencils = _hessian_stencil(n, h)
        dup = symmat.duplication_weights(n)
        pairs = symmat.PACKED_PAIRS[n]
        diag = np.zeros(self.region.shape)
        for a, (i, j) in enumerate(pairs):
            Taa = np.zeros(self.region.shape)
            Taa[self.region] = self.T[..., i, j, i, j]
            for off, w in stencils[a]:
                diag += dup[a] ** 2 * w * w * shifted(
                    Taa, tuple(-o for o in off), 0.0
                )
        # center-offset cross terms couple distinct diagonal components
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                Tij = np.zeros(self.region.shape)
                Tij[self.region] = self.T[..., i, i, j, j]
                diag += (4.0 / h**4) * Tij
        diag = h**n * diag
        diag[~self.unknowns] = 1.0
        return diag


def conjugate_gradient(matvec, b: np.ndarray, x0: np.ndarray, rtol: float,
                       maxiter: int, diag: np.ndarray | None = None,
                       atol: float = 0.0):
    """Jacobi-preconditioned CG for SPD operators on node arrays.

    Stops when ``||r||_2 <= max(rtol * ||b||_2, atol)``.  Returns
    (x, iterations, achieved relative residual).  Raises SolverError on an
    indefinite direction or stagnation past ``maxiter``.
    """
    x = np.array(x0)
    r = b - matvec(x)
    bnorm = float(np.sqrt(np.vdot(b, b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    target = max(rtol * bnorm, atol)
    precond = (lambda v: v / diag) if diag is not None else (lambda v: v)
    z = precond(r)
    p = np.array(z)
    rz = float(np.vdot(r, z))
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0.0:
            raise SolverError(
                f"conjugate gradients met a non-positive curvature direction "
                f"(p^T A p = {pAp:g}); the operator is not positive definite"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.sqrt(np.vdot(r, r)))
        if res <= target:
            return x, it, res / bnorm
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"conjugate gradients stagnated: {maxiter} iterations, relative "
        f"residual {res / bnorm:g} > {rtol:g}"
    )


def _admissible_everywhere(u: ScalarGrid, model: EnergyModel,
                           margin: float = 0.0) -> bool:
    if not np.isfinite(model.rho_U):
        return True
    H = hessian_field(u)
    M = H.matrices()[H.valid]
    return bool(symmat.op_norm(M).max() < model.rho_U - margin)


def check_admissible(u: ScalarGrid, model: EnergyModel) -> None:
    """Raise AdmissibilityError naming the first offending node, if any."""
    if not np.isfinite(model.rho_U):
        return
    H = hessian_field(u)
    M = H.matrices()
    bad = np.zeros(u.extents, dtype=bool)
    bad[H.valid] = symmat.op_norm(M[H.valid]) >= model.rho_U
    if bad.any():
        node = tuple(int(v) for v in np.argwhere(bad)[0])
        raise AdmissibilityError(
            f"Hessian operator norm >= rho_U = {model.rho_U:g} at node {node}",
            index=node,
        )


def _build_newton_operator(u: ScalarGrid, model: EnergyModel) -> NewtonOperator:
    H = hessian_field(u)
    region = _quadrature_region(u, H)
    constant = None
    if model.kind == "quadratic" and u.valid.all():
        constant = models.identity_tensor(u.dim)
        T = np.empty((int(region.sum()),) + constant.shape)
        T[:] = constant
    else:
        T = _eval_on(lambda M: models.eval_d2F(model, M), H, region)
    return NewtonOperator(T, region, u.interior & u.valid, u.h,
                          constant_tensor=constant)


def minimize_clamped(
    model: EnergyModel,
    bc: ClampedBoundaryData,
    init: ScalarGrid,
    grad_tol: float | None = None,
    max_iter: int = 50,
    cg_rtol: float = 1e-12,
    cg_maxiter: int | None = None,
):
    """Damped Newton minimization of the clamped discrete energy.

    Returns ``(solution, SolveReport)``.  Non-convergence inside ``max_iter``
    is flagged on the report, not raised; line-search and admissibility
    breakdowns raise :class:`SolverError` / :class:`AdmissibilityError`.

    The prescribed rings of ``init`` are stamped from ``bc``, so ``init``
    only supplies the interior starting values (and must be admissible once
    stamped).
    """
    u = bc.apply(init)
    check_admissible(u, model)
    unknowns = u.interior & u.valid
    if cg_maxiter is None:
        cg_maxiter = max(2000, 12 * int(np.sqrt(unknowns.sum())) ** 2)

    report = SolveReport()
    energy = assemble_energy(u, model)
    report.energies.append(energy)
    for _ in range(max_iter):
        grad = energy_gradient(u, model)
        gnorm = float(np.abs(grad).max())
        tol = grad_tol if grad_tol is not None else 1e-10 * (1.0 + abs(energy))
        report.grad_norm = gnorm
        report.grad_tol = tol
        if gnorm <= tol:
            report.converged = True
            break
        op = _build_newton_operator(u, model)
        # the post-step gradient equals the CG residual for linear problems,
        # so solving past the Newton tolerance buys nothing
        delta, cg_iters, _ = conjugate_gradient(
            op.matvec, -grad, np.zeros_like(grad), cg_rtol, cg_maxiter,
            diag=op.jacobi_diagonal(), atol=0.4 * tol,
        )
        report.cg_iterations.append(cg_iters)
        report.cg_tolerances.append(cg_rtol)
        slope = float(np.vdot(grad, delta))
        if slope >= 0.0:
            raise SolverError("Newton direction is not a descent direction")
        # below this, energy differences drown in round-off and the Armijo
        # comparison is meaningless; convexity makes the Newton step safe
        armijo_floor = 64.0 * np.finfo(float).eps * (1.0 + abs(energy))
        t = 1.0
        accepted = False
        while t >= 1e-12:
            trial = u.with_values(np.where(unknowns, u.values + t * delta, u.values))
            if not _admissible_everywhere(trial, model, ADMISSIBILITY_MARGIN):
                t *= 0.5
                continue
            trial_energy = assemble_energy(trial, model)
            if -t * slope <= armijo_floor:
                accepted = True
                break
            if trial_energy <= energy + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise SolverError(
                "line search stalled: no admissible decreasing step found"
            )
        u = trial
        energy = trial_energy
        report.steps.append(t)
        report.energies.append(energy)
        report.iterations += 1
    else:
        grad = energy_gradient(u, model)
        report.grad_norm = float(np.abs(grad).max())
        report.converged = report.grad_norm <= report.grad_tol
    report.energy = energy
    return u, report


# -------------------------------------------------------------- weak forms

def weak_residual(u: ScalarGrid, model: EnergyModel,
                  tests: TestFunctionSet) -> np.ndarray:
    """Per test function: h^n sum_x <F^{ij}(D^2 u), D^2 eta> over the region."""
    H = hessian_field(u)
    region = _quadrature_region(u, H)
    G = _eval_on(lambda M: models.eval_dF(model, M), H, region)
    out = np.empty(len(tests))
    for k, eta in enumerate(tests):
        He = _hessian_of_values(np.asarray(eta), u.h)
        sig = symmat.unpack(He[region], u.dim)
        out[k] = u.h**u.dim * symmat.hs_inner(G, sig).sum()
    return out


def dd_weak_residual(u: ScalarGrid, model: DoubleDivergenceModel,
                     tests: TestFunctionSet) -> np.ndarray:
    """Per test: h^n sum_x a^{ij,kl}(D^2 u) u_ij eta_kl."""
    H = hessian_field(u)
    region = _quadrature_region(u, H)
    M = H.matrices()[region]
    A = model(M)
    AM = models.tensor_apply(A, M)     # a^{ij,kl} u_ij as a matrix in (k,l)
    out = np.empty(len(tests))
    for k, eta in enumerate(tests):
        He = _hessian_of_values(np.asarray(eta), u.h)
        sig = symmat.unpack(He[region], u.dim)
        out[k] = u.h**u.dim * symmat.hs_inner(AM, sig).sum()
    return out


def linearized_residual(f: ScalarGrid, b_field: np.ndarray,
                        tests: TestFunctionSet,
                        b_valid: np.ndarray | None = None) -> np.ndarray:
    """Per test: h^n sum_x b^{ij,kl}(x) f_ij eta_kl.

    ``b_field`` has shape ``extents + (n, n, n, n)`` and must be sampled on
    the same lattice as ``f``; the sum runs over nodes where both the Hessian
    of ``f`` and ``b`` are valid.
    """
    if b_field.shape[: f.dim] != f.extents:
        raise GridError("coefficient field extents do not match the grid")
    H = hessian_field(f)
    region = H.valid if b_valid is None else (H.valid & b_valid)
    if not region.any():
        raise GridError("no common valid region between f and the coefficients")
    B = b_field[region]
    Mf = H.matrices()[region]
    Bf = models.tensor_apply(B, Mf)
    out = np.empty(len(tests))
    for k, eta in enumerate(tests):
        He = _hessian_of_values(np.asarray(eta), f.h)
        sig = symmat.unpack(He[region], f.dim)
        out[k] = f.h**f.dim * symmat.hs_inner(Bf, sig).sum()
    return out


# -------------------------------------------------------------- linear BVP

def solve_constant_coeff_bvp(
    c0, bc: ClampedBoundaryData, grid: ScalarGrid,
    cg_rtol: float = 1e-12, cg_maxiter: int | None = None,
) -> ScalarGrid:
    """Clamped solve of the constant-coefficient double-divergence equation.

    Minimizes the quadratic energy (1/2) h^n sum <c0 D^2 w, D^2 w> subject to
    the two prescribed rings; the normal equations are SPD when ``c0`` passes
    the Legendre positivity check, and are solved by conjugate gradients.
    """
    T0 = c0.entries if isinstance(c0, models.Tensor4) else models.symmetrize_tensor(
        np.asarray(c0, dtype=float)
    )
    lam_min = float(models.tensor_min_eig(T0))
    if lam_min <= 0.0:
        raise models.ModelError(
            f"coefficient tensor fails the Legendre check (min eigenvalue "
            f"{lam_min:g})"
        )
    u0 = bc.apply(grid)
    H = hessian_field(u0)
    region = H.valid
    unknowns = u0.interior & u0.valid
    K = int(region.sum())
    Tfield = np.broadcast_to(T0, (K,) + T0.shape).copy()
    constant = T0 if u0.valid.all() else None
    op = NewtonOperator(Tfield, region, unknowns, u0.h, constant_tensor=constant)
    grad = op.matvec(np.array(u0.values))

    if cg_maxiter is None:
        cg_maxiter = max(2000, 12 * int(np.sqrt(unknowns.sum())) ** 2)
    delta, _, _ = conjugate_gradient(
        op.matvec, -grad, np.zeros_like(grad), cg_rtol, cg_maxiter,
        diag=op.jacobi_diagonal(),
    )
    return u0.with_values(np.where(unknowns, u0.values + delta, u0.values))
