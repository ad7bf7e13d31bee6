"""Finite-difference solver for ``div(gamma grad u) = 0`` and the flux ``H = gamma grad u``.

The discretization is conservative: fluxes live on cell-edge midpoints with
arithmetic-mean coefficients, and the cross term ``gamma_12`` uses the
averaged corner differences of the standard 9-point anisotropic stencil.
Dirichlet nodes are eliminated into the right-hand side. Neumann nodes carry
a first-order co-normal flux row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import Grid2D, Matrix2Field, ScalarField2, SymTensor2Field, VectorField2, gradient

logger = logging.getLogger(__name__)

EDGES = ("bottom", "top", "left", "right")


class EllipticityError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass
class EdgeCondition:
    """Dirichlet trace (``u`` values) or Neumann co-normal flux along one edge.

    Bottom/top profiles have ``nx`` samples ordered by increasing x, left/right
    profiles ``ny`` samples ordered by increasing y. Corner samples are part of
    both adjacent edges.
    """

    kind: str
    profile: np.ndarray

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown edge condition kind {self.kind!r}")
        self.profile = np.asarray(self.profile, dtype=float)
        if not np.all(np.isfinite(self.profile)):
            raise ValueError("edge profile has non-finite values")

    @classmethod
    def dirichlet(cls, profile) -> "EdgeCondition":
        return cls("dirichlet", profile)

    @classmethod
    def neumann(cls, profile) -> "EdgeCondition":
        return cls("neumann", profile)


@dataclass
class BoundarySpec:
    bottom: EdgeCondition
    top: EdgeCondition
    left: EdgeCondition
    right: EdgeCondition

    def validate(self, grid: Grid2D) -> None:
        if all(getattr(self, e).kind == "neumann" for e in EDGES):
            raise ValueError("all-Neumann boundary conditions are not supported")
        for e in EDGES:
            n = grid.nx if e in ("bottom", "top") else grid.ny
            if getattr(self, e).profile.shape != (n,):
                raise ValueError(f"{e} profile must have {n} samples")

    @classmethod
    def dirichlet_from_function(cls, grid: Grid2D, g) -> "BoundarySpec":
        """Dirichlet data on all four edges sampled from ``g(x, y)``."""
        x, y = grid.x, grid.y
        ev = lambda X, Y: np.broadcast_to(np.asarray(g(X, Y), dtype=float), np.shape(X)).copy()
        return cls(
            bottom=EdgeCondition.dirichlet(ev(x, np.full_like(x, grid.oy))),
            top=EdgeCondition.dirichlet(ev(x, np.full_like(x, grid.ymax))),
            left=EdgeCondition.dirichlet(ev(np.full_like(y, grid.ox), y)),
            right=EdgeCondition.dirichlet(ev(np.full_like(y, grid.xmax), y)),
        )


@dataclass
class SolverOptions:
    method: str = "auto"  # auto | direct | iterative
    tol: float = 1e-10
    max_iter: int = 5000
    ellipticity_check: bool = True
    kappa: float | None = None

    def __post_init__(self):
        if self.method not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class LinearSystem:
    """Assembled system ``A u[unknown] = b``.

    ``operator`` has one row per unknown node and one column per grid node,
    so ``operator @ u.ravel() - rhs`` is the discrete residual of any nodal
    field ``u`` that satisfies the Dirichlet data.
    """

    grid: Grid2D
    A: sp.csr_matrix
    b: np.ndarray
    unknown: np.ndarray
    known: np.ndarray
    known_values: np.ndarray
    operator: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.operator @ np.asarray(u, dtype=float).ravel() - self.rhs


def _as_matrix(gamma) -> Matrix2Field:
    if isinstance(gamma, SymTensor2Field):
        return gamma.tensor()
    if isinstance(gamma, Matrix2Field):
        return gamma
    raise TypeError("gamma must be a SymTensor2Field or Matrix2Field")


def check_ellipticity(gamma, kappa: float | None = None) -> float:
    """Return the ellipticity constant of ``gamma``; raise if it exceeds ``kappa``."""
    g = _as_matrix(gamma)
    if not np.array_equal(g.a12, g.a21):
        raise EllipticityError("conductivity must be symmetric")
    tr = g.a11 + g.a22
    disc = np.sqrt((g.a11 - g.a22) ** 2 / 4 + g.a12**2)
    lo, hi = tr / 2 - disc, tr / 2 + disc
    worst = np.unravel_index(np.argmin(lo), lo.shape)
    if lo.min() <= 0:
        j, i = worst
        raise EllipticityError(
            f"conductivity not positive definite at node (i={i}, j={j}): "
            f"eigenvalues [{lo[worst]:.6g}, {hi[worst]:.6g}]")
    k = float(max(1.0, hi.max(), 1.0 / lo.min()))
    if kappa is not None and k > kappa:
        j, i = worst
        raise EllipticityError(
            f"ellipticity constant {k:.6g} exceeds bound {kappa}; smallest eigenvalue "
            f"{lo.min():.6g} at node (i={i}, j={j}), largest {hi.max():.6g}")
    return k


class _Stencil:
    """COO accumulator for rows of the nodal operator."""

    def __init__(self, grid: Grid2D):
        self.nx = grid.nx
        self.rows, self.cols, self.vals = [], [], []

    def add(self, row_nodes, terms, scale):
        rj, ri = row_nodes
        r = rj * self.nx + ri
        for (jj, ii, c) in terms:
            self.rows.append(r)
            self.cols.append(jj * self.nx + ii)
            self.vals.append(scale * c)

    def matrix(self, n):
        return sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(n, n)).tocsr()


def _xface(a, b, h, J, I, tang="c"):
    """Flux ``(gamma grad u)_x`` at ``(I + 1/2, J)`` as (j, i, coef) terms."""
    aE = 0.5 * (a[J, I] + a[J, I + 1])
    bE = 0.5 * (b[J, I] + b[J, I + 1])
    t = [(J, I + 1, aE / h), (J, I, -aE / h)]
    if tang == "c":
        q = bE / (4 * h)
        t += [(J + 1, I, q), (J + 1, I + 1, q), (J - 1, I, -q), (J - 1, I + 1, -q)]
    else:
        lo, hi = (J, J + 1) if tang == "p" else (J - 1, J)
        q = bE / (2 * h)
        t += [(hi, I, q), (hi, I + 1, q), (lo, I, -q), (lo, I + 1, -q)]
    return t


def _yface(c, b, h, J, I, tang="c"):
    """Flux ``(gamma grad u)_y`` at ``(I, J + 1/2)`` as (j, i, coef) terms."""
    cN = 0.5 * (c[J, I] + c[J + 1, I])
    bN = 0.5 * (b[J, I] + b[J + 1, I])
    t = [(J + 1, I, cN / h), (J, I, -cN / h)]
    if tang == "c":
        q = bN / (4 * h)
        t += [(J, I + 1, q), (J + 1, I + 1, q), (J, I - 1, -q), (J + 1, I - 1, -q)]
    else:
        lo, hi = (I, I + 1) if tang == "p" else (I - 1, I)
        q = bN / (2 * h)
        t += [(J, hi, q), (J + 1, hi, q), (J, lo, -q), (J + 1, lo, -q)]
    return t


def _neg(terms):
    return [(j, i, -c) for (j, i, c) in terms]


def _node_kinds(grid: Grid2D, bc: BoundarySpec):
    """Per-node label: 0 interior, 1 Dirichlet, 2 Neumann; plus Dirichlet values and Neumann data."""
    ny, nx = grid.shape
    kind = np.zeros((ny, nx), dtype=int)
    dval = np.zeros((ny, nx))
    # Neumann first so that Dirichlet edges win at shared corners
    sides = {"bottom": (0, slice(None)), "top": (ny - 1, slice(None)),
             "left": (slice(None), 0), "right": (slice(None), nx - 1)}
    for e in EDGES:
        ec = getattr(bc, e)
        if ec.kind == "neumann":
            kind[sides[e]] = 2
    for e in EDGES:
        ec = getattr(bc, e)
        if ec.kind == "dirichlet":
            sl = sides[e]
            fresh = kind[sl] != 1
            kind[sl] = 1
            cur = dval[sl]
            cur[fresh] = ec.profile[fresh]
            dval[sl] = cur
    return kind, dval


def assemble(grid: Grid2D, gamma, bc: BoundarySpec, opts: SolverOptions | None = None,
             source: ScalarField2 | None = None) -> LinearSystem:
    """Assemble the discrete conductivity operator (as ``-div(gamma grad u)``).

    For ``gamma = I`` an interior row reduces to the 5-point Laplacian
    ``(4, -1, -1, -1, -1) / h**2``. An optional ``source`` turns the
    equation into ``div(gamma grad u) = source``, which is only used for
    manufactured-solution checks.
    """
    opts = opts or SolverOptions()
    g = _as_matrix(gamma)
    if g.grid != grid:
        raise ValueError("conductivity is sampled on a different grid")
    if opts.ellipticity_check:
        check_ellipticity(g, opts.kappa)
    bc.validate(grid)
    a, b, c, h = g.a11, g.a12, g.a22, grid.h
    ny, nx = grid.shape
    kind, dval = _node_kinds(grid, bc)
    st = _Stencil(grid)
    rhs = np.zeros(grid.size)
    if source is not None:
        inner = np.zeros(grid.shape, dtype=bool)
        inner[1:-1, 1:-1] = True
        rhs[inner.ravel()] = -source.values[inner]

    # interior rows
    J, I = np.meshgrid(np.arange(1, ny - 1), np.arange(1, nx - 1), indexing="ij")
    J, I = J.ravel(), I.ravel()
    s = -1.0 / h
    st.add((J, I), _xface(a, b, h, J, I), s)
    st.add((J, I), _neg(_xface(a, b, h, J, I - 1)), s)
    st.add((J, I), _yface(c, b, h, J, I), s)
    st.add((J, I), _neg(_yface(c, b, h, J - 1, I)), s)

    # Neumann rows: outward co-normal flux at the first inner half-node, scaled by 1/h
    def flux_terms(edge, J, I, tang):
        if edge == "bottom":
            return _neg(_yface(c, b, h, J, I, tang))
        if edge == "top":
            return _yface(c, b, h, J - 1, I, tang)
        if edge == "left":
            return _neg(_xface(a, b, h, J, I, tang))
        return _xface(a, b, h, J, I - 1, tang)

    def put_rhs(J, I, vals):
        np.add.at(rhs, J * nx + I, vals / h)

    for e in EDGES:
        ec = getattr(bc, e)
        if ec.kind != "neumann":
            continue
        if e in ("bottom", "top"):
            jj = 0 if e == "bottom" else ny - 1
            I = np.arange(1, nx - 1)
            I = I[kind[jj, I] == 2]
            J = np.full_like(I, jj)
            prof = ec.profile[I]
        else:
            ii = 0 if e == "left" else nx - 1
            J = np.arange(1, ny - 1)
            J = J[kind[J, ii] == 2]
            I = np.full_like(J, ii)
            prof = ec.profile[J]
        if I.size:
            st.add((J, I), flux_terms(e, J, I, "c"), 1.0 / h)
            put_rhs(J, I, prof)

    # corners shared by two Neumann edges: sum of both one-sided conditions
    for (jj, ii, ey, ex) in ((0, 0, "bottom", "left"), (0, nx - 1, "bottom", "right"),
                             (ny - 1, 0, "top", "left"), (ny - 1, nx - 1, "top", "right")):
        if kind[jj, ii] != 2:
            continue
        J, I = np.array([jj]), np.array([ii])
        st.add((J, I), flux_terms(ey, J, I, "p" if ii == 0 else "m"), 1.0 / h)
        st.add((J, I), flux_terms(ex, J, I, "p" if jj == 0 else "m"), 1.0 / h)
        put_rhs(J, I, np.array([getattr(bc, ey).profile[ii] + getattr(bc, ex).profile[jj]]))

    L = st.matrix(grid.size)
    flat = kind.ravel()
    unknown = np.flatnonzero(flat != 1)
    known = np.flatnonzero(flat == 1)
    known_values = dval.ravel()[known]
    op = L[unknown]
    A = op[:, unknown].tocsr()
    bvec = rhs[unknown] - op[:, known] @ known_values
    return LinearSystem(grid, A, bvec, unknown, known, known_values, op.tocsr(), rhs[unknown])


def _solve_system(sys_: LinearSystem, opts: SolverOptions) -> np.ndarray:
    method = opts.method
    if method == "auto":
        method = "direct" if max(sys_.grid.nx, sys_.grid.ny) <= 251 else "iterative"
    if method == "direct":
        try:
            lu = spla.splu(sys_.A.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from exc
        x = lu.solve(sys_.b)
        if not np.all(np.isfinite(x)):
            raise SolverError("singular system: non-finite solution")
        return x
    d = sys_.A.diagonal()
    if np.any(d == 0):
        raise SolverError("zero diagonal entry; cannot build Jacobi preconditioner")
    M = sp.diags(1.0 / d)
    history: list[float] = []
    bnorm = np.linalg.norm(sys_.b) or 1.0

    def cb(xk):
        history.append(float(np.linalg.norm(sys_.A @ xk - sys_.b) / bnorm))

    x, info = spla.bicgstab(sys_.A, sys_.b, rtol=opts.tol, maxiter=opts.max_iter, M=M, callback=cb)
    if info != 0:
        raise SolverError(f"iterative solver did not converge (info={info})", history)
    return x


def solve_conductivity(grid: Grid2D, gamma, bc: BoundarySpec, opts: SolverOptions | None = None,
                       source: ScalarField2 | None = None) -> ScalarField2:
    """Solve ``div(gamma grad u) = 0`` (or ``= source``) with the given edge conditions."""
    opts = opts or SolverOptions()
    sys_ = assemble(grid, gamma, bc, opts, source)
    u = np.zeros(grid.size)
    u[sys_.known] = sys_.known_values
    u[sys_.unknown] = _solve_system(sys_, opts)
    return ScalarField2(grid, u.reshape(grid.shape))


def flux(gamma, u: ScalarField2) -> VectorField2:
    """Current density ``H = gamma grad u`` evaluated nodewise."""
    g = _as_matrix(gamma)
    if g.grid != u.grid:
        raise ValueError("gamma and u live on different grids")
    return g.matvec(gradient(u))
