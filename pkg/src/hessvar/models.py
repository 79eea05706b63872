"""Convex integrands of the Hessian and their matrix-derivative tensors.

An :class:`EnergyModel` packages an integrand F on symmetric n x n matrices
together with its first derivative (a symmetric matrix) and second derivative
(a fourth-order tensor), restricted to an admissible operator-norm ball
``U = { M : ||M||_op < rho_U }``.

Derivative convention: off-diagonal entries M_ij and M_ji are one variable.
``eval_dF`` returns the symmetric matrix G with ``<G, sigma> = d/dt F(M + t
sigma)`` for every symmetric ``sigma`` (Hilbert-Schmidt pairing with the full
index sum), and ``eval_d2F`` returns the tensor T with ``T^{ij,kl} sigma_ij
sigma_kl = d^2/dt^2 F(M + t sigma)``.  All contractions in the package use
this single convention.

Built-in kinds:

* ``quadratic``  F(M) = |M|^2 / 2, derivative M, constant identity tensor.
* ``area``       F(M) = sqrt(det(I + M^2)), the volume integrand of the
  gradient graph ``x -> (x, Du)``; closed-form derivatives through the
  spectral decomposition of M.
* ``custom``     user callables, with matrix finite differences (Richardson
  extrapolated, step ``delta * (1 + |M|)``) filling in missing derivatives.

Coefficient tables on a packed-entry lattice (CSV, multilinear interpolation)
can be loaded as custom models; see :func:`load_table_model`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import symmat


class AdmissibilityError(ValueError):
    """A matrix argument lies outside the model's admissible set."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ModelError(ValueError):
    """Invalid model construction or usage."""


# ---------------------------------------------------------------- tensors

def identity_tensor(n: int) -> np.ndarray:
    """T with <T sigma, sigma> = |sigma|^2 on symmetric matrices."""
    I = np.eye(n)
    return 0.5 * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))


def symmetrize_tensor(T: np.ndarray) -> np.ndarray:
    """Enforce T^{ij,kl} = T^{ji,kl} = T^{ij,lk} on the trailing 4 axes."""
    T = 0.5 * (T + np.swapaxes(T, -4, -3))
    return 0.5 * (T + np.swapaxes(T, -2, -1))


def tensor_apply(T: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """(T sigma)_kl = T^{ij,kl} sigma_ij (full index sum)."""
    return np.einsum("...ijkl,...ij->...kl", T, sigma)


def tensor_pair(T: np.ndarray, sigma: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """T^{ij,kl} sigma_ij tau_kl (full index sum)."""
    return np.einsum("...ijkl,...ij,...kl->...", T, sigma, tau)


def _orthonormal_sym_basis(n: int) -> np.ndarray:
    """(m, n, n) orthonormal basis of symmetric matrices (HS inner product)."""
    basis = []
    for i, j in symmat.PACKED_PAIRS[n]:
        E = np.zeros((n, n))
        if i == j:
            E[i, i] = 1.0
        else:
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
        basis.append(E)
    return np.stack(basis)


def tensor_form_matrix(T: np.ndarray) -> np.ndarray:
    """The (..., m, m) matrix of the quadratic form in an orthonormal basis."""
    n = T.shape[-1]
    B = _orthonormal_sym_basis(n)
    G = np.einsum("...ijkl,aij,bkl->...ab", T, B, B)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def tensor_min_eig(T: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the form sigma -> <T sigma, sigma> over |sigma| = 1."""
    return np.linalg.eigvalsh(tensor_form_matrix(T))[..., 0]


@dataclass(frozen=True)
class Tensor4:
    """A fourth-order coefficient tensor with double-divergence symmetries."""

    entries: np.ndarray  # (n, n, n, n)

    def __post_init__(self):
        E = np.asarray(self.entries, dtype=float)
        if E.ndim != 4 or len(set(E.shape)) != 1:
            raise ModelError(f"tensor must be (n,n,n,n), got shape {E.shape}")
        if not np.all(np.isfinite(E)):
            raise ModelError("tensor entries must be finite")
        dev = max(
            np.abs(E - np.swapaxes(E, 0, 1)).max(),
            np.abs(E - np.swapaxes(E, 2, 3)).max(),
        )
        if dev > 1e-10 * max(1.0, np.abs(E).max()):
            raise ModelError(f"tensor violates pair symmetries (dev {dev:g})")
        E = symmetrize_tensor(E)
        E.flags.writeable = False
        object.__setattr__(self, "entries", E)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        return tensor_apply(self.entries, sigma)

    def pair(self, sigma: np.ndarray, tau: np.ndarray) -> np.ndarray:
        return tensor_pair(self.entries, sigma, tau)

    def min_eigenvalue(self) -> float:
        return float(tensor_min_eig(self.entries))

    @staticmethod
    def identity(n: int) -> "Tensor4":
        return Tensor4(identity_tensor(n))


# ---------------------------------------------------------------- models

@dataclass(frozen=True)
class EnergyModel:
    """Integrand F with derivatives, admissible on an operator-norm ball."""

    kind: str
    n: int
    rho_U: float
    fd_step: float = 1e-5
    _F: object = None
    _dF: object = None
    _d2F: object = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ModelError(f"dimension must be 2 or 3, got {self.n}")
        if not (self.rho_U > 0):
            raise ModelError(f"rho_U must be positive, got {self.rho_U}")


def quadratic_model(n: int) -> EnergyModel:
    """F(M) = |M|^2 / 2 on all of symmetric-matrix space."""
    return EnergyModel(kind="quadratic", n=n, rho_U=np.inf)


def area_model(n: int, rho_U: float = np.inf) -> EnergyModel:
    """Volume integrand sqrt(det(I + M^2)) of a gradient graph.

    Uniform convexity holds on ``||M||_op <= 1 - eta``; pass ``rho_U = 1 -
    eta`` when that matters (solves, ellipticity estimates).  Evaluation
    itself is defined for every symmetric M.
    """
    return EnergyModel(kind="area", n=n, rho_U=rho_U)


def custom_model(n: int, F, dF=None, d2F=None, rho_U: float = np.inf,
                 fd_step: float = 1e-5, negate: bool = False) -> EnergyModel:
    """Model from user callables; missing derivatives use finite differences.

    Callables receive batched ``(..., n, n)`` arrays.  ``negate = True``
    flips the sign of F (and supplied derivatives), turning a uniformly
    concave integrand into the convex one the solver machinery expects.
    """
    if negate:
        F_orig, dF_orig, d2F_orig = F, dF, d2F
        F = lambda M: -F_orig(M)
        dF = (lambda M: -dF_orig(M)) if dF_orig is not None else None
        d2F = (lambda M: -d2F_orig(M)) if d2F_orig is not None else None
    return EnergyModel(kind="custom", n=n, rho_U=rho_U, fd_step=fd_step,
                       _F=F, _dF=dF, _d2F=d2F)


def admissible(model: EnergyModel, M: np.ndarray) -> np.ndarray:
    """Boolean batch: operator norm strictly inside rho_U."""
    if not np.isfinite(model.rho_U):
        return np.ones(np.asarray(M).shape[:-2], dtype=bool)
    return symmat.op_norm(M) < model.rho_U


def require_admissible(model: EnergyModel, M: np.ndarray) -> None:
    ok = admissible(model, M)
    if not np.all(ok):
        bad = np.argwhere(~ok)
        idx = tuple(int(v) for v in bad[0]) if bad.size else None
        worst = float(symmat.op_norm(np.asarray(M)[~ok]).max())
        raise AdmissibilityError(
            f"matrix outside admissible set (op norm {worst:g} >= "
            f"rho_U {model.rho_U:g}) at batch index {idx}",
            index=idx,
        )


# ---- finite differences along the symmetric-variable convention

def _packed_directions(n: int) -> np.ndarray:
    """(m, n, n) perturbations E_ii and E_ij + E_ji."""
    dirs = []
    for i, j in symmat.PACKED_PAIRS[n]:
        D = np.zeros((n, n))
        D[i, j] += 1.0
        D[j, i] += 1.0
        if i == j:
            D[i, i] = 1.0
        dirs.append(D)
    return np.stack(dirs)


def _richardson_central(f, M: np.ndarray, D: np.ndarray, eps):
    """Richardson-extrapolated central difference of f along direction D.

    ``eps`` is scalar or batch-shaped (matching ``M.shape[:-2]``); the output
    shape follows f, with the step divided out along the batch axes.
    """
    eps = np.asarray(eps, dtype=float)

    def central(e):
        shift = e[..., None, None] if e.ndim else e
        S = f(M + shift * D) - f(M - shift * D)
        denom = 2.0 * e
        extra = S.ndim - denom.ndim
        return S / denom.reshape(denom.shape + (1,) * extra)

    return (4.0 * central(eps / 2.0) - central(eps)) / 3.0


def _fd_dF(F, M: np.ndarray, step: float) -> np.ndarray:
    n = M.shape[-1]
    eps = step * (1.0 + symmat.hs_norm(M))
    dirs = _packed_directions(n)
    out = np.zeros(M.shape)
    for a, (i, j) in enumerate(symmat.PACKED_PAIRS[n]):
        d = _richardson_central(F, M, dirs[a], eps)
        g = d if i == j else 0.5 * d
        out[..., i, j] = g
        out[..., j, i] = g
    return out


def _fd_d2F(dF, M: np.ndarray, step: float) -> np.ndarray:
    n = M.shape[-1]
    T = np.zeros(M.shape[:-2] + (n, n, n, n))
    eps = step * (1.0 + symmat.hs_norm(M))
    for a, (k, l) in enumerate(symmat.PACKED_PAIRS[n]):
        D = _packed_directions(n)[a]
        dG = _richardson_central(dF, M, D, eps)
        slab = dG if k == l else 0.5 * dG
        T[..., :, :, k, l] = slab
        T[..., :, :, l, k] = slab
    T = 0.5 * (T + np.swapaxes(np.swapaxes(T, -4, -2), -3, -1))
    return symmetrize_tensor(T)


# ---- area closed forms

def _area_F(M: np.ndarray) -> np.ndarray:
    n = M.shape[-1]
    g = np.broadcast_to(np.eye(n), M.shape) + M @ M
    return np.sqrt(symmat.det_sym(g))


def _area_dF(M: np.ndarray) -> np.ndarray:
    n = M.shape[-1]
    g = np.broadcast_to(np.eye(n), M.shape) + M @ M
    G = _area_F(M)[..., None, None] * (M @ symmat.inv_sym(g))
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _area_d2F(M: np.ndarray) -> np.ndarray:
    """Second derivative tensor of the volume integrand.

    Through the spectral decomposition M = Q diag(lam) Q^T: in the eigenbasis
    the form splits into a diagonal block (second partials in the eigenvalues)
    and decoupled off-diagonal directions whose coefficients are the divided
    differences of the first partials, which here simplify to
    V (1 - lam_i lam_j) / ((1 + lam_i^2)(1 + lam_j^2)).
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    lam, Q = symmat.sym_eig(M)
    one = 1.0 + lam * lam                      # (..., n)
    V = np.sqrt(np.prod(one, axis=-1))         # (...,)
    e = lam / one
    # second partials in eigenvalue space
    fij = V[..., None, None] * (e[..., :, None] * e[..., None, :])
    diag = V[..., None] / (one * one)
    for i in range(n):
        fij[..., i, i] = diag[..., i]
    theta = V[..., None, None] * (
        (1.0 - lam[..., :, None] * lam[..., None, :])
        / (one[..., :, None] * one[..., None, :])
    )
    T = np.zeros(M.shape[:-2] + (n, n, n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            T[..., i, j, i, j] += 0.5 * theta[..., i, j]
            T[..., i, j, j, i] += 0.5 * theta[..., i, j]
    for i in range(n):
        for j in range(n):
            T[..., i, i, j, j] += fij[..., i, j]
    return np.einsum("...ai,...bj,...ck,...dl,...ijkl->...abcd", Q, Q, Q, Q, T)


# ---- public evaluators

def eval_F(model: EnergyModel, M: np.ndarray) -> np.ndarray:
    """Integrand value; raises AdmissibilityError off the admissible set."""
    M = np.asarray(M, dtype=float)
    require_admissible(model, M)
    if model.kind == "quadratic":
        return 0.5 * symmat.hs_inner(M, M)
    if model.kind == "area":
        return _area_F(M)
    if model.kind == "custom":
        return np.asarray(model._F(M), dtype=float)
    raise ModelError(f"unknown model kind {model.kind!r}")


def eval_dF(model: EnergyModel, M: np.ndarray) -> np.ndarray:
    """First derivative: symmetric matrix G with <G, sigma> = D_sigma F."""
    M = np.asarray(M, dtype=float)
    require_admissible(model, M)
    if model.kind == "quadratic":
        return M.copy()
    if model.kind == "area":
        return _area_dF(M)
    if model._dF is not None:
        return np.asarray(model._dF(M), dtype=float)
    return _fd_dF(model._F, M, model.fd_step)


def eval_d2F(model: EnergyModel, M: np.ndarray) -> np.ndarray:
    """Second derivative tensor (..., n, n, n, n) with full symmetries."""
    M = np.asarray(M, dtype=float)
    require_admissible(model, M)
    if model.kind == "quadratic":
        return np.broadcast_to(identity_tensor(model.n), M.shape[:-2] + (model.n,) * 4).copy()
    if model.kind == "area":
        return _area_d2F(M)
    if model._d2F is not None:
        return np.asarray(model._d2F(M), dtype=float)
    dF = model._dF if model._dF is not None else (
        lambda X: _fd_dF(model._F, X, model.fd_step)
    )
    return _fd_d2F(dF, M, model.fd_step)


# ---------------------------------------------------------------- ellipticity

@dataclass(frozen=True)
class EllipticityEstimate:
    """Sampled lower ellipticity bound (not a certificate)."""

    value: float
    convex: bool
    sample_count: int
    seed: int
    attained_at: tuple  # packed entries of the minimizing sample

    @property
    def verdict(self) -> str:
        return "uniformly convex on sampled set" if self.convex else (
            "not uniformly convex on sampled U"
        )


def ellipticity_constant(
    model: EnergyModel, sample_count: int, seed: int = 0
) -> EllipticityEstimate:
    """Minimum eigenvalue of the second-derivative form over sampled U.

    Samples are uniform in the operator-norm ball (eigenvalues uniform,
    frames Haar rotated); the zero matrix is always included.  Deterministic
    for a fixed seed.  A nonpositive estimate is reported, not raised.
    """
    if sample_count < 1:
        raise ModelError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = model.n
    radius = model.rho_U if np.isfinite(model.rho_U) else 1.0
    xi = symmat.random_sym_opnorm_ball(rng, sample_count, n, radius * (1.0 - 1e-12))
    xi = np.concatenate([np.zeros((1, n, n)), xi], axis=0)
    eigs = tensor_min_eig(eval_d2F(model, xi))
    k = int(np.argmin(eigs))
    value = float(eigs[k])
    return EllipticityEstimate(
        value=value,
        convex=value > 0.0,
        sample_count=sample_count,
        seed=seed,
        attained_at=tuple(float(v) for v in symmat.pack(xi[k])),
    )


# ---------------------------------------------------------------- linearization

def _gauss_legendre_01(quad_nodes: int):
    x, w = np.polynomial.legendre.leggauss(quad_nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def _require_segment(model_rho: float, M: np.ndarray, M_shift: np.ndarray) -> None:
    if not np.isfinite(model_rho):
        return
    for name, X in (("start", M), ("end", M_shift)):
        if np.any(symmat.op_norm(X) >= model_rho):
            raise AdmissibilityError(
                f"segment {name} point leaves the admissible ball "
                f"(rho_U = {model_rho:g})"
            )


def linearized_coefficients(
    model: EnergyModel, M: np.ndarray, M_shift: np.ndarray, quad_nodes: int = 8
) -> np.ndarray:
    """Average of the second-derivative tensor along the segment [M, M_shift].

    Gauss-Legendre quadrature in the segment parameter; this is the leading
    coefficient of the equation satisfied by a difference quotient of a
    critical point, with M and M_shift the Hessians at the two sample points.
    """
    M = np.asarray(M, dtype=float)
    M_shift = np.asarray(M_shift, dtype=float)
    _require_segment(model.rho_U, M, M_shift)
    t, w = _gauss_legendre_01(quad_nodes)
    out = None
    for tq, wq in zip(t, w):
        term = wq * eval_d2F(model, M + tq * (M_shift - M))
        out = term if out is None else out + term
    return symmetrize_tensor(out)


@dataclass(frozen=True)
class DoubleDivergenceModel:
    """Coefficient model a(M) for weak forms pairing u_ij against eta_kl."""

    n: int
    coeff: object              # callable M (..., n, n) -> (..., n, n, n, n)
    rho_U: float = np.inf
    fd_step: float = 1e-5
    name: str = "custom"

    def __call__(self, M: np.ndarray) -> np.ndarray:
        return symmetrize_tensor(np.asarray(self.coeff(np.asarray(M, dtype=float))))


def constant_dd_model(n: int, tensor: Tensor4 | np.ndarray,
                      name: str = "constant") -> DoubleDivergenceModel:
    T = tensor.entries if isinstance(tensor, Tensor4) else symmetrize_tensor(
        np.asarray(tensor, dtype=float)
    )

    def coeff(M):
        return np.broadcast_to(T, M.shape[:-2] + T.shape).copy()

    return DoubleDivergenceModel(n=n, coeff=coeff, name=name)


def linearized_coefficients_dd(
    model: DoubleDivergenceModel, M: np.ndarray, M_shift: np.ndarray,
    quad_nodes: int = 8,
) -> np.ndarray:
    """Linearized leading coefficient of a double-divergence equation.

    Along the segment A(t) = M + t (M_shift - M),

        b^{ij,kl} = integral_0^1 [ a^{ij,kl}(A(t))
                                   + (da^{pq,kl}/dM_ij)(A(t)) M_pq ] dt

    with the base Hessian M frozen in the contraction.  The inner derivative
    of ``a`` uses central matrix finite differences (symmetric-variable
    convention) unless a closed form is registered on the model.
    """
    M = np.asarray(M, dtype=float)
    M_shift = np.asarray(M_shift, dtype=float)
    _require_segment(model.rho_U, M, M_shift)
    n = model.n
    t, w = _gauss_legendre_01(quad_nodes)
    dirs = _packed_directions(n)
    out = None
    for tq, wq in zip(t, w):
        A = M + tq * (M_shift - M)
        term = np.array(model(A))
        eps = model.fd_step * (1.0 + symmat.hs_norm(A))
        for a_idx, (i, j) in enumerate(symmat.PACKED_PAIRS[n]):
            D = dirs[a_idx]
            da = _richardson_central(model, A, D, eps)
            scale = 1.0 if i == j else 0.5
            # contract the first pair of da with the frozen base Hessian
            contrib = scale * np.einsum("...pqkl,...pq->...kl", da, M)
            term[..., i, j, :, :] += contrib
            if i != j:
                term[..., j, i, :, :] += contrib
        out = wq * term if out is None else out + wq * term
    return symmetrize_tensor(out)


# ---------------------------------------------------------------- tables

def load_table_model(path, n: int, rho_U: float | None = None,
                     fd_step: float = 1e-3) -> EnergyModel:
    """Custom model from an integrand table on a packed-entry lattice.

    CSV schema::

        packed_dim,m,lo,hi,count
        2,3,-1.0,1.0,9
        flat_index,value
        0,2.0
        ...

    The lattice samples each packed entry (upper triangle, row-major; see
    :mod:`hessvar.symmat`) on ``count`` uniform points in ``[lo, hi]``;
    ``flat_index`` is row-major over the m lattice axes.  Evaluation uses
    multilinear interpolation; derivatives fall back to finite differences,
    so their fidelity is limited by the table resolution.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3 or lines[0] != "packed_dim,m,lo,hi,count":
        raise ModelError(f"{path}: missing integrand table header")
    try:
        dim_s, m_s, lo_s, hi_s, cnt_s = lines[1].split(",")
        dim, m, lo, hi, count = (int(dim_s), int(m_s), float(lo_s),
                                 float(hi_s), int(cnt_s))
    except ValueError as exc:
        raise ModelError(f"{path}: bad table metadata {lines[1]!r}") from exc
    if dim != n or m != symmat.packed_size(n):
        raise ModelError(f"{path}: table is for dimension {dim}, requested {n}")
    if count < 2 or hi <= lo:
        raise ModelError(f"{path}: degenerate lattice ({count} points in [{lo},{hi}])")
    if lines[2] != "flat_index,value":
        raise ModelError(f"{path}: expected 'flat_index,value' column header")
    rows = lines[3:]
    if len(rows) != count**m:
        raise ModelError(f"{path}: expected {count**m} rows, got {len(rows)}")
    table = np.empty(count**m)
    for row in rows:
        idx_s, val_s = row.split(",")
        table[int(idx_s)] = float(val_s)
    table = table.reshape((count,) * m)
    step = (hi - lo) / (count - 1)

    def F(M):
        p = symmat.pack(np.asarray(M, dtype=float))
        if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
            raise AdmissibilityError("matrix entries leave the table lattice")
        t = np.clip((p - lo) / step, 0.0, count - 1 - 1e-12)
        i0 = np.floor(t).astype(int)
        frac = t - i0
        out = np.zeros(p.shape[:-1])
        for corner in range(2**m):
            bits = [(corner >> a) & 1 for a in range(m)]
            weight = np.ones(p.shape[:-1])
            idx = []
            for a, bit in enumerate(bits):
                weight = weight * np.where(bit, frac[..., a], 1.0 - frac[..., a])
                idx.append(i0[..., a] + bit)
            out = out + weight * table[tuple(idx)]
        return out

    if rho_U is None:
        rho_U = min(-lo, hi)
    return EnergyModel(kind="custom", n=n, rho_U=rho_U, fd_step=fd_step, _F=F)


def write_table_model(path, model: EnergyModel, lo: float, hi: float,
                      count: int) -> None:
    """Sample ``eval_F`` on the packed lattice and write the table CSV."""
    n = model.n
    m = symmat.packed_size(n)
    axes = [np.linspace(lo, hi, count)] * m
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    vals = eval_F(model, symmat.unpack(mesh, n))
    lines = ["packed_dim,m,lo,hi,count",
             f"{n},{m},{repr(float(lo))},{repr(float(hi))},{count}",
             "flat_index,value"]
    lines += [f"{k},{repr(float(v))}" for k, v in enumerate(vals)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
