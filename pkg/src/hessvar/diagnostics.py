"""Oscillation and integrability diagnostics for symmetric-matrix fields.

Realizes the measurable side of elliptic regularity theory on discrete
Hessian fields: mean oscillation over balls and its supremum (the BMO
modulus), higher-exponent oscillation ratios, Campanato-type power-law decay
fits, reverse-Hoelder doubling constants with the Sobolev-dual exponent
2n/(n+2), a scan-based higher-integrability exponent estimate, a singular-set
detector thresholding the small-radius oscillation density, Hoelder seminorm
estimates by deterministic pair sampling, and a checker for the power-decay
iteration lemma used to propagate oscillation smallness across scales.

All ball averages are plain node means (the discrete measure h^n per node
cancels), so every quantity here is invariant under grid-preserving shifts
of the field by a constant matrix where the continuum quantity is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import symmat
from .grids import (
    Ball,
    BallFamily,
    EmptyRegionError,
    GridError,
    SymMatField,
    ball_mask,
    ball_fits,
    shifted,
)


class DiagnosticsError(ValueError):
    """Invalid diagnostics request."""


def sobolev_dual_exponent(n: int) -> float:
    """The exponent 2n/(n+2) pairing with L^2 under the Sobolev embedding."""
    return 2.0 * n / (n + 2.0)


# -------------------------------------------------------------- oscillation

def _ball_values(f: SymMatField, ball: Ball) -> np.ndarray:
    nodes = ball_mask(f, ball) & f.valid
    if not nodes.any():
        raise EmptyRegionError(f"ball {ball} contains no valid nodes")
    return f.values[nodes]


def mean_oscillation(f: SymMatField, ball: Ball, p: float = 1.0) -> float:
    """Normalized p-oscillation: mean over the ball of |f - (f)_B|^p."""
    if p < 1.0:
        raise DiagnosticsError(f"oscillation exponent must be >= 1, got {p}")
    vals = _ball_values(f, ball)
    dev = symmat.hs_norm_packed(vals - vals.mean(axis=0), f.dim)
    return float((dev**p).mean())


def mean_power(f: SymMatField, ball: Ball, p: float) -> float:
    """Mean over the ball of |f|^p (no average subtracted)."""
    vals = _ball_values(f, ball)
    return float((symmat.hs_norm_packed(vals, f.dim) ** p).mean())


@dataclass(frozen=True)
class BMOResult:
    omega: float
    ball: Ball
    family_size: int

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "ball": {"center": list(self.ball.center), "radius": self.ball.radius},
            "family_size": self.family_size,
        }


def bmo_modulus(f: SymMatField, family: BallFamily) -> BMOResult:
    """Supremum of the L^1 mean oscillation over the recorded ball family."""
    best = -1.0
    best_ball = None
    for ball in family:
        val = mean_oscillation(f, ball, 1.0)
        if val > best:
            best, best_ball = val, ball
    return BMOResult(omega=best, ball=best_ball, family_size=len(family))


@dataclass(frozen=True)
class JNEstimate:
    """Ratio bounding p-oscillation by the L^1 modulus (John-Nirenberg style)."""

    p: float
    cbar: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {"p": self.p, "cbar": self.cbar, "degenerate": self.degenerate}


def john_nirenberg_ratio(f: SymMatField, family: BallFamily, p: float) -> JNEstimate:
    """Max over the family of osc_p / omega; degenerate when omega = 0."""
    omega = bmo_modulus(f, family).omega
    if omega == 0.0:
        return JNEstimate(p=p, cbar=0.0, degenerate=True)
    ratio = max(mean_oscillation(f, b, p) / omega for b in family)
    return JNEstimate(p=p, cbar=ratio, degenerate=False)


# -------------------------------------------------------------- decay fits

@dataclass(frozen=True)
class OscillationCurve:
    center: tuple
    radii: tuple            # strictly decreasing
    values: tuple           # normalized oscillation per radius
    integrals: tuple        # un-normalized integral per radius
    p: float

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "radii": list(self.radii),
            "values": list(self.values),
            "integrals": list(self.integrals),
            "p": self.p,
        }


@dataclass(frozen=True)
class DecayFit:
    """Log-log least-squares fit of the un-normalized oscillation integral."""

    slope: float
    log_constant: float
    residual: float
    degenerate: bool
    n_radii: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "log_constant": self.log_constant,
            "residual": self.residual,
            "degenerate": self.degenerate,
            "n_radii": self.n_radii,
        }


def campanato_decay(f: SymMatField, center, radii, p: float = 2.0):
    """Oscillation curve over nested balls and its power-law fit.

    Returns ``(OscillationCurve, DecayFit)``.  The fitted slope refers to the
    un-normalized integral over B_rho against rho, so a field with linear
    variation fits n + p and solutions of the constant-coefficient comparison
    problem decay at least that fast.
    """
    radii = sorted((float(r) for r in radii), reverse=True)
    if len(radii) < 3:
        raise DiagnosticsError("decay fits need at least 3 radii")
    if len(set(radii)) != len(radii):
        raise DiagnosticsError("radii must be strictly decreasing")
    center = tuple(float(c) for c in center)
    values, integrals = [], []
    for r in radii:
        ball = Ball(center=center, radius=r)
        nodes = ball_mask(f, ball) & f.valid
        if not nodes.any():
            raise EmptyRegionError(f"radius {r} ball contains no valid nodes")
        osc = mean_oscillation(f, ball, p)
        values.append(osc)
        integrals.append(osc * f.h**f.dim * int(nodes.sum()))
    curve = OscillationCurve(center=center, radii=tuple(radii),
                             values=tuple(values), integrals=tuple(integrals), p=p)
    floor = 1e-280
    if min(integrals) <= floor:
        fit = DecayFit(slope=0.0, log_constant=0.0, residual=0.0,
                       degenerate=True, n_radii=len(radii))
        return curve, fit
    x = np.log(np.asarray(radii))
    y = np.log(np.asarray(integrals))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(x))) if res.size else 0.0
    fit = DecayFit(slope=float(coef[0]), log_constant=float(coef[1]),
                   residual=resid, degenerate=False, n_radii=len(radii))
    return curve, fit


# ---------------------------------------------------------- reverse Hoelder

@dataclass(frozen=True)
class ReverseHolderResult:
    pbar: float
    centers: tuple
    scales: tuple
    constants: tuple        # (center, scale) -> constant, NaN when degenerate
    degenerate: tuple

    def to_dict(self) -> dict:
        return {
            "pbar": self.pbar,
            "centers": [list(c) for c in self.centers],
            "scales": list(self.scales),
            "constants": [
                [None if not np.isfinite(v) else v for v in row]
                for row in self.constants
            ],
            "degenerate": [list(row) for row in self.degenerate],
        }

    def finite_constants(self) -> np.ndarray:
        arr = np.asarray(self.constants, dtype=float)
        return arr[np.isfinite(arr)]


def reverse_holder_check(f: SymMatField, centers, scales) -> ReverseHolderResult:
    """Doubling constants (mean |f|^2 on B_s)^{1/2} / (mean |f|^pbar on B_2s)^{1/pbar}.

    ``pbar = 2n/(n+2)`` is the exponent whose Sobolev dual is 2.  Each outer
    ball B_{2s} must fit the field's valid region.
    """
    n = f.dim
    pbar = sobolev_dual_exponent(n)
    centers = [tuple(float(v) for v in c) for c in centers]
    scales = [float(s) for s in scales]
    constants, degenerate = [], []
    for c in centers:
        row, drow = [], []
        for s in scales:
            outer = Ball(center=c, radius=2.0 * s)
            if not ball_fits(f, outer):
                raise GridError(
                    f"doubled ball B_{2 * s:g}({c}) leaves the valid region"
                )
            num = mean_power(f, Ball(center=c, radius=s), 2.0) ** 0.5
            den = mean_power(f, outer, pbar) ** (1.0 / pbar)
            if den == 0.0:
                row.append(np.nan)
                drow.append(True)
            else:
                row.append(num / den)
                drow.append(False)
        constants.append(tuple(row))
        degenerate.append(tuple(drow))
    return ReverseHolderResult(pbar=pbar, centers=tuple(centers),
                               scales=tuple(scales), constants=tuple(constants),
                               degenerate=tuple(degenerate))


# ------------------------------------------------------- higher integrability

DEFAULT_P_SCAN = tuple(np.round(np.arange(2.1, 4.01, 0.1), 10))


@dataclass(frozen=True)
class P0Estimate:
    p0: float | None
    scan: tuple
    required_constants: tuple   # K needed per scan exponent (NaN: impossible)
    K_max: float

    @property
    def certified(self) -> bool:
        return self.p0 is not None

    @property
    def verdict(self) -> str:
        return (f"certified p0 = {self.p0:g}" if self.certified
                else "no exponent certified")

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "scan": list(self.scan),
            "required_constants": [
                None if not np.isfinite(v) else v for v in self.required_constants
            ],
            "K_max": self.K_max,
        }


def fit_p0(f: SymMatField, center, radii, K_max: float = 10.0,
           scan=DEFAULT_P_SCAN) -> P0Estimate:
    """Largest scanned p with (mean |f|^p on B_rho)^{1/p} <= K (mean |f|^2 on B_r)^{1/2}.

    The inequality must hold with a single K <= K_max across every nested
    pair rho < r drawn from ``radii``.
    """
    radii = sorted((float(r) for r in radii), reverse=True)
    if len(radii) < 3:
        raise DiagnosticsError("higher-integrability scan needs >= 3 radii")
    center = tuple(float(c) for c in center)
    balls = [Ball(center=center, radius=r) for r in radii]
    rhs = [mean_power(f, b, 2.0) ** 0.5 for b in balls]
    required = []
    for p in scan:
        lhs = [mean_power(f, b, p) ** (1.0 / p) for b in balls]
        worst = 0.0
        for jr, r in enumerate(radii):
            for jp in range(jr + 1, len(radii)):
                num = lhs[jp]        # smaller ball, higher exponent
                den = rhs[jr]        # larger ball, L^2
                if den == 0.0:
                    if num > 0.0:
                        worst = np.inf
                    continue
                worst = max(worst, num / den)
        required.append(worst)
    certified = [p for p, K in zip(scan, required) if K <= K_max]
    p0 = max(certified) if certified else None
    return P0Estimate(p0=p0, scan=tuple(scan),
                      required_constants=tuple(required), K_max=K_max)


# ------------------------------------------------------------- singular set

@dataclass(frozen=True)
class SingularMask:
    mask: np.ndarray         # bool; True = flagged singular
    computable: np.ndarray   # bool; where the smallest balls fit
    p0: float
    radii: tuple
    tau: float

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "radii": list(self.radii),
            "tau": self.tau,
            "flagged": int(self.mask.sum()),
            "computable": int(self.computable.sum()),
        }


def _ball_offsets(radius: float, h: float, dim: int) -> list:
    reach = int(np.floor(radius / h + 1e-12))
    offs = []
    for off in np.ndindex(*(2 * reach + 1,) * dim):
        d = np.array(off) - reach
        if (d * d).sum() * h * h <= radius * radius * (1.0 + 1e-12):
            offs.append(tuple(d))
    return offs


def _oscillation_density(f: SymMatField, radius: float, p0: float):
    """Per-node r^{-n} integral of |f - (f)_{B_r}|^{p0}; NaN where incomputable."""
    offs = _ball_offsets(radius, f.h, f.dim)
    count = np.zeros(f.extents)
    total = np.zeros(f.extents + (f.values.shape[-1],))
    for off in offs:
        ok = shifted(f.valid, off, False)
        count += ok
        total += np.where(ok[..., None], shifted(f.values, off + (0,), 0.0), 0.0)
    computable = count == len(offs)
    avg = np.where(computable[..., None], total / np.maximum(count, 1.0)[..., None], 0.0)
    acc = np.zeros(f.extents)
    for off in offs:
        dev = shifted(f.values, off + (0,), np.nan) - avg
        normp = symmat.hs_norm_packed(np.where(computable[..., None], dev, 0.0), f.dim)
        acc += normp**p0
    dens = f.h**f.dim * acc / radius**f.dim
    dens[~computable] = np.nan
    return dens, computable


def singular_set(f: SymMatField, p0: float, radii, tau: float) -> SingularMask:
    """Flag nodes whose small-radius oscillation density stays above tau.

    A node is flagged when the minimum over the two smallest radii of
    ``r^{-n} integral_{B_r} |f - (f)_{B_r}|^{p0}`` exceeds ``tau`` (the
    discrete stand-in for a liminf as r -> 0).  The threshold is explicit;
    there is no default.
    """
    radii = sorted((float(r) for r in radii), reverse=True)
    if len(radii) < 2:
        raise DiagnosticsError("singular-set detection needs >= 2 radii")
    if radii[-1] < 3.0 * f.h:
        raise DiagnosticsError(
            f"smallest radius {radii[-1]:g} is under 3h = {3 * f.h:g}"
        )
    small = radii[-2:]
    d1, c1 = _oscillation_density(f, small[0], p0)
    d2, c2 = _oscillation_density(f, small[1], p0)
    computable = c1 & c2
    quantity = np.minimum(d1, d2)
    mask = np.zeros(f.extents, dtype=bool)
    mask[computable] = quantity[computable] > tau
    return SingularMask(mask=mask, computable=computable, p0=p0,
                        radii=tuple(radii), tau=tau)


def box_counting_dimension(mask: np.ndarray, sizes=None):
    """Upper box-counting dimension of a node mask, resolution limited.

    Counts occupied b-node boxes for dyadic b and fits the log-log slope.
    Returns ``(dimension, sizes, counts)``; an empty mask gives dimension 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0, (), ()
    if sizes is None:
        top = max(2, min(mask.shape) // 4)
        sizes = [b for b in (2, 4, 8, 16, 32) if b <= top]
        if len(sizes) < 2:
            sizes = [1, 2]
    counts = []
    for b in sizes:
        padded_shape = tuple(-(-s // b) * b for s in mask.shape)
        padded = np.zeros(padded_shape, dtype=bool)
        padded[tuple(slice(0, s) for s in mask.shape)] = mask
        view = padded
        for axis in range(mask.ndim):
            shape = view.shape
            view = view.reshape(
                shape[:axis] + (shape[axis] // b, b) + shape[axis + 1:]
            ).any(axis=axis + 1)
        counts.append(int(view.sum()))
    x = np.log(1.0 / np.asarray(sizes, dtype=float))
    y = np.log(np.maximum(counts, 1))
    slope = float(np.polyfit(x, y, 1)[0])
    return slope, tuple(sizes), tuple(counts)


# ------------------------------------------------------------ Hoelder norms

@dataclass(frozen=True)
class HolderEstimate:
    alpha: float
    value: float
    pair: tuple              # ((x), (y)) attaining coordinates
    pairs_used: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "seminorm": self.value,
            "pair": [list(self.pair[0]), list(self.pair[1])] if self.pair else None,
            "pairs_used": self.pairs_used,
            "seed": self.seed,
        }


def _holder_region_nodes(f: SymMatField, fraction: float) -> np.ndarray:
    usable = f.valid
    if not usable.any():
        raise EmptyRegionError("field has no valid nodes")
    idx = np.argwhere(usable)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * fraction * (hi - lo)
    keep = np.all(np.abs(idx - mid) <= half + 1e-9, axis=1)
    return idx[keep]


def holder_seminorm(f: SymMatField, alpha: float, pair_budget: int = 2000,
                    seed: int = 0, region_fraction: float = 0.75) -> HolderEstimate:
    """Max of |f(x) - f(y)| / |x - y|^alpha over sampled node pairs.

    Pairs come from a deterministic coarse sub-lattice (all pairs) topped up
    with seeded random draws, restricted to the concentric
    ``region_fraction`` sub-box of the valid region.  The seed is recorded so
    reruns are reproducible.
    """
    if not (0.0 < alpha < 1.0):
        raise DiagnosticsError(f"alpha must lie in (0, 1), got {alpha}")
    nodes = _holder_region_nodes(f, region_fraction)
    if len(nodes) < 2:
        raise EmptyRegionError("need at least two nodes for a Hoelder estimate")
    # coarse exhaustive sub-lattice: k nodes give k(k-1)/2 pairs
    k_target = max(2, int(np.sqrt(pair_budget)))
    stride = max(1, len(nodes) // k_target)
    coarse = nodes[::stride]
    pairs = [(a, b) for i, a in enumerate(coarse) for b in coarse[i + 1:]]
    rng = np.random.default_rng(seed)
    while len(pairs) < pair_budget:
        i, j = rng.integers(0, len(nodes), size=2)
        if i == j:
            continue
        pairs.append((nodes[i], nodes[j]))
    best = 0.0
    best_pair = None
    for a, b in pairs[:max(pair_budget, len(pairs))]:
        fa = f.values[tuple(a)]
        fb = f.values[tuple(b)]
        dist = f.h * float(np.sqrt(((a - b) ** 2).sum()))
        val = float(symmat.hs_norm_packed(fa - fb, f.dim)) / dist**alpha
        if val > best:
            best = val
            xa = tuple(f.origin[d] + f.h * a[d] for d in range(f.dim))
            xb = tuple(f.origin[d] + f.h * b[d] for d in range(f.dim))
            best_pair = (xa, xb)
    return HolderEstimate(alpha=alpha, value=best, pair=best_pair,
                          pairs_used=len(pairs), seed=seed)


# --------------------------------------------------------- iteration lemma

@dataclass(frozen=True)
class IterationLemmaResult:
    """Outcome of checking the power-decay iteration hypothesis on samples.

    The hypothesis phi(tau) <= A [ (tau/r)^kappa + eps ] phi(r) + B r^beta is
    tested on all sampled pairs with tau <= theta r; ``epsilon`` is the
    smallest admissible slack, compared against epsilon_0 = theta^kappa (the
    slack the absorption proof tolerates), and ``c`` is the smallest constant
    making the power-decay conclusion hold on the same pairs.
    """

    theta: float
    epsilon: float
    epsilon0: float
    c: float
    passes: bool
    pair_count: int
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "epsilon": self.epsilon,
            "epsilon0": self.epsilon0,
            "c": self.c,
            "passes": self.passes,
            "pair_count": self.pair_count,
            "message": self.message,
        }


def iteration_lemma_check(radii, phi, A: float, kappa: float, gamma: float,
                          B: float = 0.0, beta: float = 0.0) -> IterationLemmaResult:
    """Verify the scale-iteration hypothesis and extract (epsilon, c).

    ``radii``/``phi`` sample a nonnegative nondecreasing function of the
    radius.  Requires kappa > gamma > beta >= 0.  For beta = 0 the explicit
    pair-scale cutoff theta = (2A)^(-2/kappa) is used, otherwise
    theta = (2A)^(-1/(kappa - gamma)).
    """
    radii = np.asarray([float(r) for r in radii])
    phi = np.asarray([float(v) for v in phi])
    if radii.ndim != 1 or radii.shape != phi.shape or len(radii) < 2:
        raise DiagnosticsError("need matching 1-d radius and value samples")
    order = np.argsort(radii)
    radii, phi = radii[order], phi[order]
    if np.any(np.diff(phi) < -1e-12 * max(1.0, np.abs(phi).max())):
        raise DiagnosticsError("samples are not nondecreasing in the radius")
    if not (kappa > gamma > beta >= 0.0):
        raise DiagnosticsError(
            f"need kappa > gamma > beta >= 0, got ({kappa}, {gamma}, {beta})"
        )
    if A <= 0.0:
        raise DiagnosticsError("A must be positive")
    if beta == 0.0:
        theta = (2.0 * A) ** (-2.0 / kappa)
    else:
        theta = (2.0 * A) ** (-1.0 / (kappa - gamma))
    eps_needed = 0.0
    c_needed = 0.0
    pair_count = 0
    for i, tau in enumerate(radii):
        for j in range(i + 1, len(radii)):
            r = radii[j]
            if tau > theta * r * (1.0 + 1e-12):
                continue
            pair_count += 1
            ratio = tau / r
            if phi[j] > 0.0:
                eps_pair = (phi[i] - B * r**beta) / (A * phi[j]) - ratio**kappa
                eps_needed = max(eps_needed, eps_pair)
            elif phi[i] - B * r**beta > 0.0:
                eps_needed = np.inf
            denom = ratio**gamma * phi[j] + B * tau**beta
            if denom > 0.0:
                c_needed = max(c_needed, phi[i] / denom)
            elif phi[i] > 0.0:
                c_needed = np.inf
    epsilon0 = theta**kappa
    if pair_count == 0:
        return IterationLemmaResult(
            theta=theta, epsilon=np.nan, epsilon0=epsilon0, c=np.nan,
            passes=False, pair_count=0,
            message="no sampled pair satisfies tau <= theta r",
        )
    passes = eps_needed < epsilon0 and np.isfinite(c_needed)
    message = "" if passes else (
        f"required slack {eps_needed:g} >= admissible {epsilon0:g}"
        if np.isfinite(eps_needed) else "hypothesis fails at a zero sample"
    )
    return IterationLemmaResult(theta=theta, epsilon=float(eps_needed),
                                epsilon0=epsilon0, c=float(c_needed),
                                passes=bool(passes), pair_count=pair_count,
                                message=message)
