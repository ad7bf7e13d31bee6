"""Explicit reconstruction of ``gamma = beta * gamma_tilde`` from current densities.

Pipeline: Cramer coefficients of extra measurements in the basis
``(H1, H2)``; their gradients ``Z_k``; the constraint matrices
``M_k = sym(Z_k H^T J)`` which are orthogonal to ``gamma_tilde``; the
symmetric "cross product" ``B`` orthogonal to both; normalization to unit
determinant. ``beta`` then follows from the closed-form ``grad log beta`` and
a least-squares integration.

Measurement indices in this module are 0-based.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics as dg
from .fields import Grid2D, Matrix2Field, ScalarField2, SymTensor2Field, VectorField2, curl2, gradient
from .regularize import RegSpec, denoise, difference_operator
from .synth import MeasurementSet

logger = logging.getLogger(__name__)

J = np.array([[0.0, -1.0], [1.0, 0.0]])
LOG_BETA_CLIP = 700.0


class ReconError(RuntimeError):
    pass


@dataclass
class CoefficientFields:
    """Cramer coefficients ``H3 = mu1 H1 + mu2 H2`` and ``H4 = lambda1 H1 + lambda2 H2``."""

    mu1: ScalarField2
    mu2: ScalarField2
    lambda1: ScalarField2
    lambda2: ScalarField2
    mask: np.ndarray  # True where |det[H1, H2]| is below the floor


@dataclass
class ConstraintPair:
    M1: Matrix2Field
    M2: Matrix2Field


@dataclass
class BetaBC:
    """Side condition for integrating ``grad log beta``.

    ``kind="dirichlet"`` takes the boundary nodes of ``values`` (a beta array
    on the whole grid). ``kind="anchor"`` pins ``beta(point) = value`` and
    leaves the rest of the boundary free.
    """

    kind: str = "anchor"
    values: np.ndarray | None = None
    point: tuple[float, float] = (0.0, 0.0)
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "anchor"):
            raise ValueError(f"unknown beta boundary condition {self.kind!r}")
        if self.kind == "dirichlet" and self.values is None:
            raise ValueError("dirichlet beta condition needs boundary values")
        if self.kind == "anchor" and not self.value > 0:
            raise ValueError("anchor value of beta must be positive")


@dataclass
class ReconOptions:
    basis: tuple[int, int] = (0, 1)
    extra_pairs: list[tuple[int, int]] | None = None  # None: all pairs of non-basis indices
    det_floor: float | None = None  # None: det_floor_rel * max|det[H1, H2]|
    det_floor_rel: float = 1e-8
    b_floor_rel: float = 0.0
    max_masked_fraction: float = 0.5
    definite_only: bool = True
    b_shape_floor: float = 0.05
    beta_bc: BetaBC = field(default_factory=BetaBC)
    reg: dict[str, RegSpec] = field(default_factory=dict)  # keys: xi, zeta, beta
    known_anisotropy: tuple[ScalarField2, ScalarField2] | None = None
    beta_refine: int = 0  # fixed-point correction sweeps after the first beta estimate
    # anisotropy is reconstructed on the whole grid; denoising, beta and metrics on this sub-box
    region: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if self.basis[0] == self.basis[1]:
            raise ValueError("basis indices must differ")
        if self.det_floor is not None and not self.det_floor > 0:
            raise ValueError("det_floor must be positive")

    def pairs_for(self, n: int) -> list[tuple[int, int]]:
        if self.extra_pairs is not None:
            if not self.extra_pairs:
                raise ValueError("at least one extra pair is required")
            return [tuple(p) for p in self.extra_pairs]
        rest = [k for k in range(n) if k not in self.basis]
        return list(itertools.combinations(rest, 2))


@dataclass
class Anisotropy:
    xi: ScalarField2
    zeta: ScalarField2
    mask: np.ndarray
    det_basis: ScalarField2
    min_det_basis: float
    independence: ScalarField2
    pair_independence: dict = field(default_factory=dict)

    def tilde(self) -> Matrix2Field:
        return _tilde_from(self.xi, self.zeta)


@dataclass
class ReconResult:
    xi: ScalarField2
    zeta: ScalarField2
    beta: ScalarField2
    mask: np.ndarray
    report: dg.ReconReport

    @property
    def gamma_tilde(self) -> Matrix2Field:
        return _tilde_from(self.xi, self.zeta)

    def tensor(self) -> SymTensor2Field:
        return SymTensor2Field(self.xi, self.zeta, self.beta)


# -- nodewise 2x2 algebra -----------------------------------------------------

def _mm(A: Matrix2Field, B: Matrix2Field) -> Matrix2Field:
    return Matrix2Field(
        A.grid,
        A.a11 * B.a11 + A.a12 * B.a21, A.a11 * B.a12 + A.a12 * B.a22,
        A.a21 * B.a11 + A.a22 * B.a21, A.a21 * B.a12 + A.a22 * B.a22)


def _sym(A: Matrix2Field) -> Matrix2Field:
    off = 0.5 * (A.a12 + A.a21)
    return Matrix2Field.sym(A.grid, A.a11, off, A.a22)


def _tilde_from(xi: ScalarField2, zeta: ScalarField2) -> Matrix2Field:
    return Matrix2Field.sym(xi.grid, xi.values, zeta.values, (1.0 + zeta.values**2) / xi.values)


def fill_masked(a: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked entries with the value of the nearest unmasked node."""
    if not mask.any():
        return a
    if mask.all():
        raise ReconError("every node is masked")
    idx = ndi.distance_transform_edt(mask, return_distances=False, return_indices=True)
    return a[tuple(idx)]


# -- reconstruction steps -----------------------------------------------------

def _floor(H: MeasurementSet, basis, opts: ReconOptions | None):
    d = dg.det2(H[basis[0]], H[basis[1]])
    if opts is not None and opts.det_floor is not None:
        return d, opts.det_floor
    rel = opts.det_floor_rel if opts is not None else 1e-8
    return d, rel * np.abs(d).max()


def cramer(H1: VectorField2, H2: VectorField2, H3: VectorField2, floor: float = 0.0):
    """Coefficients ``(c1, c2)`` with ``H3 = c1 H1 + c2 H2``; masked nodes are NaN-free but flagged."""
    d = dg.det2(H1, H2)
    mask = np.abs(d) < floor if floor > 0 else d == 0
    safe = np.where(mask, 1.0, d)
    c1 = dg.det2(H3, H2) / safe
    c2 = dg.det2(H1, H3) / safe
    return c1, c2, mask


def basis_coefficients(H: MeasurementSet, basis=(0, 1), extra=(2, 3),
                       opts: ReconOptions | None = None) -> CoefficientFields:
    """Decompose ``H[extra[0]]`` and ``H[extra[1]]`` in the basis ``(H[basis[0]], H[basis[1]])``.

    Nodes where ``|det[H1, H2]|`` is below the floor are masked and filled
    with the nearest valid value.
    """
    H1, H2 = H[basis[0]], H[basis[1]]
    _, floor = _floor(H, basis, opts)
    mu1, mu2, mask = cramer(H1, H2, H[extra[0]], floor)
    la1, la2, _ = cramer(H1, H2, H[extra[1]], floor)
    limit = opts.max_masked_fraction if opts is not None else 1.0
    if mask.mean() > limit:
        raise ReconError(f"det[H1,H2] below floor on {mask.mean():.1%} of nodes (limit {limit:.1%})")
    g = H1.grid
    fill = lambda a: ScalarField2(g, fill_masked(a, mask))
    return CoefficientFields(fill(mu1), fill(mu2), fill(la1), fill(la2), mask)


def z_matrices(coeffs: CoefficientFields) -> tuple[Matrix2Field, Matrix2Field]:
    """``Z1 = [grad mu1, grad mu2]``, ``Z2 = [grad lambda1, grad lambda2]``."""
    Z1 = Matrix2Field.from_columns(gradient(coeffs.mu1), gradient(coeffs.mu2))
    Z2 = Matrix2Field.from_columns(gradient(coeffs.lambda1), gradient(coeffs.lambda2))
    return Z1, Z2


def constraint_matrices(Z1: Matrix2Field, Z2: Matrix2Field, H1: VectorField2, H2: VectorField2) -> ConstraintPair:
    """``M_k = sym(Z_k H^T J)`` with ``H = [H1, H2]`` and ``J = [[0, -1], [1, 0]]``."""
    g = H1.grid
    # H^T J = [[H1y, -H1x], [H2y, -H2x]]
    HtJ = Matrix2Field(g, H1.cy, -H1.cx, H2.cy, -H2.cx)
    return ConstraintPair(_sym(_mm(Z1, HtJ)), _sym(_mm(Z2, HtJ)))


def b_matrix(M: ConstraintPair) -> Matrix2Field:
    """Symmetric matrix orthogonal (Frobenius) to both ``M1`` and ``M2``."""
    A, C = M.M1, M.M2
    b11 = 2 * A.a22 * C.a12 - 2 * A.a12 * C.a22
    b12 = A.a11 * C.a22 - A.a22 * C.a11
    b22 = 2 * A.a12 * C.a11 - 2 * A.a11 * C.a12
    return Matrix2Field.sym(A.grid, b11, b12, b22)


def degeneracy(B: Matrix2Field) -> np.ndarray:
    """Scale-free ``2 |det B| / |B|_F^2``: 1 for multiples of I, 0 for rank-deficient B."""
    n2 = B.a11**2 + B.a12**2 + B.a21**2 + B.a22**2
    return np.where(n2 > 0, 2 * np.abs(B.det()) / np.where(n2 > 0, n2, 1.0), 0.0)


def orientation(B: Matrix2Field) -> np.ndarray:
    """``sign(B11)``, falling back to the sign of the trace, then to +1."""
    s = np.sign(B.a11)
    s = np.where(s == 0, np.sign(B.a11 + B.a22), s)
    return np.where(s == 0, 1.0, s)


def tilde_gamma_single(B: Matrix2Field, floor_rel: float = 1e-12):
    """``sign(B11) |det B|^{-1/2} B`` as ``(xi, zeta, mask)`` arrays.

    Nodes with ``|det B|`` below ``floor_rel * max|det B|`` (or zero) are
    masked; their ``xi, zeta`` are set to ``(1, 0)``.
    """
    d = np.abs(B.det())
    mask = (d <= floor_rel * d.max()) | (d == 0)
    s = orientation(B) / np.sqrt(np.where(mask, 1.0, d))
    xi = np.where(mask, 1.0, s * B.a11)
    zeta = np.where(mask, 0.0, s * B.a12)
    mask |= xi <= 0
    xi = np.where(mask, 1.0, xi)
    return xi, zeta, mask


def _normalize(t11, t12, t22):
    det = t11 * t22 - t12 * t12
    bad = ~(det > 0) | ~(t11 > 0)
    r = 1.0 / np.sqrt(np.where(bad, 1.0, det))
    return np.where(bad, 1.0, t11 * r), np.where(bad, 0.0, t12 * r), bad


def tilde_gamma_averaged(H: MeasurementSet, opts: ReconOptions | None = None) -> Anisotropy:
    """Weighted average over pairs: ``sum sign(B_i11) B_i / sum |det B_i|^{1/2}``, renormalized to det 1."""
    opts = opts or ReconOptions()
    basis = opts.basis
    H1, H2 = H[basis[0]], H[basis[1]]
    g = H.grid
    s11 = np.zeros(g.shape)
    s12 = np.zeros(g.shape)
    s22 = np.zeros(g.shape)
    wsum = np.zeros(g.shape)
    indep = np.ones(g.shape)
    pair_indep = {}
    det_mask = None
    for pair in opts.pairs_for(len(H)):
        coeffs = basis_coefficients(H, basis, pair, opts)
        det_mask = coeffs.mask
        Z1, Z2 = z_matrices(coeffs)
        M = constraint_matrices(Z1, Z2, H1, H2)
        ind, _ = dg.independence_field(M.M1, M.M2)
        pair_indep[pair] = ind
        indep = np.minimum(indep, ind.values)
        B = b_matrix(M)
        dB = B.det()
        d = np.abs(dB)
        ok = (d > opts.b_floor_rel * d.max()) & (degeneracy(B) >= opts.b_shape_floor)
        if opts.definite_only:
            # B parallel to an SPD matrix must itself be definite
            ok &= dB > 0
        s = np.where(ok, orientation(B), 0.0)
        s11 += s * B.a11
        s12 += s * B.a12
        s22 += s * B.a22
        wsum += np.where(ok, np.sqrt(d), 0.0)
    dead = wsum == 0
    w = np.where(dead, 1.0, wsum)
    xi, zeta, bad = _normalize(s11 / w, s12 / w, s22 / w)
    mask = dead | bad | det_mask
    xi = fill_masked(xi, mask)
    zeta = fill_masked(zeta, mask)
    det_f, mind = dg.det_basis_field(H1, H2)
    return Anisotropy(ScalarField2(g, xi), ScalarField2(g, zeta), mask, det_f, mind,
                      ScalarField2(g, indep), pair_indep)


def log_beta_gradient(H1: VectorField2, H2: VectorField2, gamma_tilde: Matrix2Field,
                      floor: float = 0.0, mask: np.ndarray | None = None) -> tuple[VectorField2, np.ndarray]:
    """``grad log beta = -J gamma_tilde H^{-T} (curl(gamma_tilde^{-1} H1), curl(gamma_tilde^{-1} H2))``.

    Returns the gradient field and the mask of nodes where ``|det H|`` is
    below ``floor`` (those nodes are filled from their nearest valid node).
    A precomputed ``mask`` replaces the floor test.
    """
    t = gamma_tilde
    tdet = t.det()
    inv = Matrix2Field(t.grid, t.a22 / tdet, -t.a12 / tdet, -t.a21 / tdet, t.a11 / tdet)
    c1 = curl2(inv.matvec(H1)).values
    c2 = curl2(inv.matvec(H2)).values
    d = dg.det2(H1, H2)
    if mask is None:
        mask = np.abs(d) < floor if floor > 0 else d == 0
    mask = mask | (d == 0)
    d = np.where(mask, 1.0, d)
    # w = H^{-T} c
    w1 = (H2.cy * c1 - H1.cy * c2) / d
    w2 = (-H2.cx * c1 + H1.cx * c2) / d
    p1 = t.a11 * w1 + t.a12 * w2
    p2 = t.a21 * w1 + t.a22 * w2
    # -J p = (p2, -p1)
    gx, gy = fill_masked(p2, mask), fill_masked(-p1, mask)
    return VectorField2(t.grid, gx, gy), mask


def recover_beta(G: VectorField2, beta_bc: BetaBC, mask: np.ndarray | None = None) -> ScalarField2:
    """Integrate ``grad log beta ~ G`` in the least-squares sense and return ``beta``.

    ``v = log beta`` minimizes ``sum_edges w_e ((v_b - v_a)/h - G_e)^2`` where
    ``G_e`` is the edge-midpoint average of ``G``; this is the 5-point
    Poisson problem ``Lap v = div G`` with natural boundary rows. Edges
    touching masked nodes are down-weighted.
    """
    grid = G.grid
    ny, nx = grid.shape
    D = difference_operator(grid.shape, grid.h)
    gy_mid = 0.5 * (G.cy[1:, :] + G.cy[:-1, :])
    gx_mid = 0.5 * (G.cx[:, 1:] + G.cx[:, :-1])
    target = np.concatenate([gy_mid.ravel(), gx_mid.ravel()])
    w = np.ones(D.shape[0])
    if mask is not None and mask.any():
        my = (mask[1:, :] | mask[:-1, :]).ravel()
        mx = (mask[:, 1:] | mask[:, :-1]).ravel()
        w[np.concatenate([my, mx])] = 1e-3
    W = sp.diags(w)
    A = (D.T @ W @ D).tocsr()
    rhs = D.T @ (w * target)
    n = grid.size
    if beta_bc.kind == "dirichlet":
        vals = np.asarray(beta_bc.values, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError("dirichlet beta values must cover the whole grid")
        fixed = grid.boundary_mask().ravel()
        fixed_vals = np.log(vals.ravel()[fixed])
    else:
        j, i = grid.nearest_index(*beta_bc.point)
        fixed = np.zeros(n, dtype=bool)
        fixed[j * nx + i] = True
        fixed_vals = np.array([np.log(beta_bc.value)])
    free = ~fixed
    Aff = A[free][:, free].tocsc()
    b = rhs[free] - A[free][:, fixed] @ fixed_vals
    try:
        vf = spla.splu(Aff).solve(b)
    except RuntimeError as exc:
        raise ReconError(f"beta integration failed: {exc}") from exc
    v = np.empty(n)
    v[fixed] = fixed_vals
    v[free] = vf
    # keep exp finite when the data are too degenerate to integrate
    return ScalarField2(grid, np.exp(np.clip(v.reshape(grid.shape), -LOG_BETA_CLIP, LOG_BETA_CLIP)))


def refine_beta(H1: VectorField2, H2: VectorField2, gamma_tilde: Matrix2Field, beta: ScalarField2,
                beta_bc: BetaBC, steps: int, mask: np.ndarray | None = None) -> ScalarField2:
    """Correct ``beta`` by re-applying the gradient formula to the data divided by ``beta``.

    ``H_i / beta`` is the current density of ``(beta_true / beta) gamma_tilde``, so
    the formula returns the gradient of the residual factor. Its discrete
    form is exact only to first order across jumps of ``beta``; shrinking the
    jumps this way removes most of the bias of a single pass at
    discontinuities. The residual is integrated with the same side condition
    made homogeneous.
    """
    g = beta.grid
    if beta_bc.kind == "dirichlet":
        unit = BetaBC("dirichlet", values=np.ones(g.shape))
    else:
        unit = BetaBC("anchor", point=beta_bc.point, value=1.0)
    keep = np.ones(g.shape, dtype=bool) if mask is None else ~mask
    last = np.inf
    for k in range(steps):
        b = beta.values
        try:
            G, _ = log_beta_gradient(VectorField2(g, H1.cx / b, H1.cy / b),
                                     VectorField2(g, H2.cx / b, H2.cy / b), gamma_tilde, mask=mask)
            corr = recover_beta(G, unit, mask).values
        except (ValueError, ReconError):
            corr = None
        # a contraction shrinks the correction every sweep; stop at the first one that does not
        size = np.sqrt(np.mean(np.log(corr)[keep] ** 2)) if corr is not None else np.inf
        if not size < last:
            logger.warning("beta refinement stopped after %d of %d sweeps (correction not shrinking)", k, steps)
            break
        last = size
        beta = ScalarField2(g, b * corr)
    return beta


def _reg(opts: ReconOptions, name: str) -> RegSpec:
    return opts.reg.get(name, RegSpec())


def reconstruct_full(H: MeasurementSet, opts: ReconOptions | None = None,
                     truth: SymTensor2Field | None = None) -> ReconResult:
    """Anisotropy first (then denoised), then ``beta`` from the reconstructed anisotropy.

    When ``truth`` is given, relative L2 errors and the anchor error are
    recorded in the report.
    """
    opts = opts or ReconOptions()
    basis = opts.basis
    _, floor = _floor(H, basis, opts)
    region = opts.region
    HR = H.restrict(*region) if region is not None else H
    g = HR.grid
    H1, H2 = HR[basis[0]], HR[basis[1]]
    det_f, mind = dg.det_basis_field(H1, H2)
    if opts.known_anisotropy is not None:
        xi, zeta = opts.known_anisotropy
        if xi.grid != g or zeta.grid != g:
            raise ReconError("known anisotropy must live on the reconstruction grid")
        aniso_mask = np.abs(dg.det2(H1, H2)) < floor
        indep = None
    else:
        if len(H) < 4:
            raise ReconError("anisotropy reconstruction needs at least 4 measurements")
        an = tilde_gamma_averaged(H, opts)
        xi, zeta, aniso_mask, indep = an.xi, an.zeta, an.mask, an.independence
        if region is not None:
            sj, si = H.grid.sub_indices(*region)
            xi, zeta, indep = xi.restrict(*region), zeta.restrict(*region), indep.restrict(*region)
            aniso_mask = aniso_mask[sj, si]
        xi = denoise(xi, _reg(opts, "xi"))
        zeta = denoise(zeta, _reg(opts, "zeta"))
        if np.any(xi.values <= 0):
            xi = ScalarField2(g, np.maximum(xi.values, 1e-6))
    tilde = _tilde_from(xi, zeta)
    G, gmask = log_beta_gradient(H1, H2, tilde, floor)
    mask = aniso_mask | gmask
    beta = recover_beta(G, opts.beta_bc, mask)
    if opts.beta_refine > 0:
        beta = refine_beta(H1, H2, tilde, beta, opts.beta_bc, opts.beta_refine, mask)
    spec = _reg(opts, "beta")
    if spec.kind != "none" and spec.rho > 0:
        logb = denoise(ScalarField2(g, np.log(beta.values)), spec)
        beta = ScalarField2(g, np.exp(logb.values))
    report = dg.ReconReport(min_det_basis=mind, det_basis_field=det_f, independence_field=indep,
                            masked_fraction=float(mask.mean()))
    result = ReconResult(xi, zeta, beta, mask, report)
    if truth is not None:
        fill_errors(result, truth, opts)
    return result


def fill_errors(result: ReconResult, truth: SymTensor2Field, opts: ReconOptions | None = None) -> None:
    rep = result.report
    g = result.beta.grid
    if truth.grid != g:
        if opts is None or opts.region is None:
            raise ReconError("truth and reconstruction live on different grids")
        truth = truth.restrict(*opts.region)
    for name in ("xi", "zeta", "beta"):
        rep.errors[name] = dg.relative_l2_error(getattr(result, name), getattr(truth, name))
    point = opts.beta_bc.point if opts is not None else (0.0, 0.0)
    try:
        j, i = g.nearest_index(*point)
    except ValueError:
        j, i = g.ny // 2, g.nx // 2
    rep.anchor_error = float(abs(np.log(result.beta.values[j, i]) - np.log(truth.beta.values[j, i])))
