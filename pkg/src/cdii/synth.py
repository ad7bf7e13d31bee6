"""Phantom conductivities, illumination sets, clean measurements and the noise model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid2D, SymTensor2Field, VectorField2, sliding_average_array
from .forward import BoundarySpec, EdgeCondition, SolverOptions, flux, solve_conductivity

PHANTOMS = ("exp1_smooth", "exp2_checker", "exp3_piecewise")
ILLUMINATIONS = ("poly5", "gauss_bottom_small", "gauss_bottom_extended", "gauss_bottom_neumann")

GAUSS_SIGMA = 0.2
GAUSS_SHIFTS_SMALL = (-0.8, -0.4, 0.0, 0.4, 0.8)
GAUSS_SHIFTS_EXTENDED = (-2.8, -1.5, 0.0, 1.5, 2.8)

POLY5 = (
    ("g1", lambda x, y: x + y),
    ("g2", lambda x, y: y + 0.1 * y**2),
    ("g3", lambda x, y: 3 * x**2 + 2 * y**2),
    ("g4", lambda x, y: x**2 - 0.5 * y**2),
    ("g5", lambda x, y: x * y),
)


# -- phantoms -----------------------------------------------------------------

def exp1_xi(x, y):
    return 2 + np.sin(np.pi * x) * np.sin(np.pi * y)


def exp1_zeta(x, y):
    return 0.5 * np.sin(2 * np.pi * x)


def exp1_beta(x, y):
    return (1.8 + np.exp(-15 * (x**2 + y**2))
            + np.exp(-15 * ((x - 0.6) ** 2 + (y - 0.5) ** 2))
            - np.exp(-15 * ((x + 0.4) ** 2 + (y + 0.6) ** 2)))


# (x0, y0, columns, rows) of each family of 0.1 x 0.1 blocks
EXP2_BLOCKS = (
    (-0.4, -0.4, 10, 10),
    (-1.0, -0.4, 3, 5),
    (0.7, -0.8, 3, 5),
)
EXP2_CELL = 0.1


def _sign(r):
    # sign(0) is fixed to +1
    return np.where(r >= 0, 1.0, -1.0)


def exp2_beta(grid: Grid2D, seed: int = 0) -> np.ndarray:
    """Blockwise ``1 + (sign(random) + 1)`` on the three block families, 1 elsewhere.

    Block random numbers are drawn in family order, row-major (x fastest).
    A node on a shared block edge belongs to the block above/right of it,
    except on the outer right/top edge of a family.
    """
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    beta = np.ones(grid.shape)
    eps = 1e-9
    for (x0, y0, ncol, nrow) in EXP2_BLOCKS:
        r = rng.uniform(-1.0, 1.0, size=(nrow, ncol))
        vals = 1.0 + (_sign(r) + 1.0)
        fx = (X - x0) / EXP2_CELL
        fy = (Y - y0) / EXP2_CELL
        inside = (fx >= -eps) & (fx <= ncol + eps) & (fy >= -eps) & (fy <= nrow + eps)
        ci = np.clip(np.floor(fx + eps).astype(int), 0, ncol - 1)
        cj = np.clip(np.floor(fy + eps).astype(int), 0, nrow - 1)
        beta[inside] = vals[cj[inside], ci[inside]]
    return beta


EXP3_DISK_CENTER = (-0.3, 0.3)
EXP3_DISK_RADIUS = 0.35
EXP3_SQUARE = ((0.0, 0.6), (0.0, 0.6))


def exp3_fields(X, Y):
    """Piecewise-constant ``(xi, zeta, beta)``: disk, diagonal split, off-centre square."""
    cx, cy = EXP3_DISK_CENTER
    xi = np.where((X - cx) ** 2 + (Y - cy) ** 2 < EXP3_DISK_RADIUS**2, 1.5, 2.5)
    zeta = np.where(Y > X, -0.4, 0.2)
    (sx0, sx1), (sy0, sy1) = EXP3_SQUARE
    beta = np.where((X >= sx0) & (X <= sx1) & (Y >= sy0) & (Y <= sy1), 2.5, 1.0)
    return xi, zeta, beta


def make_phantom(name: str, grid: Grid2D, seed: int = 0) -> SymTensor2Field:
    """Sample one of the named phantoms at the grid nodes."""
    X, Y = grid.mesh()
    if name == "exp1_smooth":
        xi, zeta, beta = exp1_xi(X, Y), exp1_zeta(X, Y), exp1_beta(X, Y)
    elif name == "exp2_checker":
        xi, zeta, beta = exp1_xi(X, Y), exp1_zeta(X, Y), exp2_beta(grid, seed)
    elif name == "exp3_piecewise":
        xi, zeta, beta = exp3_fields(X, Y)
    else:
        raise ValueError(f"unknown phantom {name!r}; expected one of {PHANTOMS}")
    return SymTensor2Field.from_arrays(grid, xi, zeta, beta)


# -- illuminations ------------------------------------------------------------

@dataclass
class IlluminationSet:
    conditions: list[BoundarySpec]
    labels: list[str]

    def __len__(self):
        return len(self.conditions)

    def __iter__(self):
        return iter(zip(self.labels, self.conditions))


def gaussian_profile(x, shift, sigma=GAUSS_SIGMA):
    return (2 * np.pi * sigma**2) ** -0.5 * np.exp(-((x + shift) ** 2) / (2 * sigma**2))


def _bottom_gaussians(grid: Grid2D, shifts, neumann: bool) -> IlluminationSet:
    conds, labels = [], []
    zeros_x, zeros_y = np.zeros(grid.nx), np.zeros(grid.ny)
    other = EdgeCondition.neumann if neumann else EdgeCondition.dirichlet
    for k, s in enumerate(shifts, 1):
        conds.append(BoundarySpec(
            bottom=EdgeCondition.dirichlet(gaussian_profile(grid.x, s)),
            top=other(zeros_x), left=other(zeros_y), right=other(zeros_y)))
        labels.append(f"gauss{k}({s:+g})")
    return IlluminationSet(conds, labels)


def make_illuminations(kind: str, grid: Grid2D) -> IlluminationSet:
    """Boundary conditions for the named illumination family.

    ``poly5`` gives Dirichlet traces of the five polynomials on all edges.
    The Gaussian families prescribe bumps on the bottom edge only, with zero
    Dirichlet (or zero Neumann for ``gauss_bottom_neumann``) data elsewhere.
    """
    if kind == "poly5":
        return IlluminationSet([BoundarySpec.dirichlet_from_function(grid, g) for _, g in POLY5],
                               [n for n, _ in POLY5])
    if kind == "gauss_bottom_small":
        return _bottom_gaussians(grid, GAUSS_SHIFTS_SMALL, neumann=False)
    if kind == "gauss_bottom_extended":
        return _bottom_gaussians(grid, GAUSS_SHIFTS_EXTENDED, neumann=False)
    if kind == "gauss_bottom_neumann":
        return _bottom_gaussians(grid, GAUSS_SHIFTS_EXTENDED, neumann=True)
    raise ValueError(f"unknown illumination kind {kind!r}; expected one of {ILLUMINATIONS}")


# -- measurements -------------------------------------------------------------

@dataclass
class NoiseSpec:
    alpha: float = 0.0
    seed: int = 0
    smoothing_passes: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("noise level alpha must be non-negative")
        if self.smoothing_passes < 0:
            raise ValueError("smoothing_passes must be non-negative")


@dataclass
class MeasurementSet:
    fields: list[VectorField2]
    labels: list[str]
    provenance: dict = field(default_factory=lambda: {"kind": "clean"})

    def __post_init__(self):
        if len(self.fields) < 2:
            raise ValueError("a measurement set needs at least two current densities")
        if len(self.labels) != len(self.fields):
            raise ValueError("one label per measurement required")
        g = self.fields[0].grid
        if any(f.grid != g for f in self.fields):
            raise ValueError("all measurements must share one grid")

    @property
    def grid(self) -> Grid2D:
        return self.fields[0].grid

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, i) -> VectorField2:
        return self.fields[i]

    def scaled(self, c: float) -> "MeasurementSet":
        return MeasurementSet([f.scaled(c) for f in self.fields], list(self.labels), dict(self.provenance))

    def restrict(self, x_range, y_range) -> "MeasurementSet":
        return MeasurementSet([f.restrict(x_range, y_range) for f in self.fields],
                              list(self.labels), dict(self.provenance))


def generate_measurements(gamma: SymTensor2Field, illums: IlluminationSet,
                          opts: SolverOptions | None = None) -> MeasurementSet:
    """Clean current densities ``H_i = gamma grad u_i``, one per illumination."""
    fields = []
    for _, bc in illums:
        u = solve_conductivity(gamma.grid, gamma, bc, opts)
        fields.append(flux(gamma, u))
    return MeasurementSet(fields, list(illums.labels), {"kind": "clean"})


def add_noise(H: MeasurementSet, spec: NoiseSpec) -> MeasurementSet:
    """Multiplicative noise ``H * (1 + alpha * r)`` per component.

    ``r`` is uniform on ``[-1, 1]`` at each node, low-pass filtered by the
    5-point sliding average. Each component of each measurement gets its own
    child stream of ``SeedSequence(seed)``, so results do not depend on order
    of evaluation.
    """
    if spec.alpha == 0:
        return MeasurementSet([VectorField2(f.grid, f.cx.copy(), f.cy.copy()) for f in H.fields],
                              list(H.labels), dict(H.provenance))
    streams = np.random.SeedSequence(spec.seed).spawn(2 * len(H))
    out = []
    for k, f in enumerate(H.fields):
        comps = []
        for c, comp in enumerate((f.cx, f.cy)):
            rng = np.random.Generator(np.random.PCG64(streams[2 * k + c]))
            r = rng.uniform(-1.0, 1.0, size=comp.shape)
            r = sliding_average_array(r, spec.smoothing_passes)
            comps.append(comp * (1.0 + spec.alpha * r))
        out.append(VectorField2(f.grid, *comps))
    prov = {"kind": "noisy", "alpha": spec.alpha, "seed": spec.seed,
            "smoothing_passes": spec.smoothing_passes}
    return MeasurementSet(out, list(H.labels), prov)

