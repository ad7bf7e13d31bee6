"""Uniform grids, node-sampled fields and the discrete operators built on them.

Arrays are stored with shape ``(ny, nx)``: axis 0 runs along y, axis 1
along x, so ``values[j, i]`` is the node at ``(ox + i*h, oy + j*h)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Uniform node grid with isotropic spacing ``h``."""

    nx: int
    ny: int
    h: float
    ox: float = 0.0
    oy: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise GridError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise GridError(f"spacing must be positive, got {self.h}")

    @classmethod
    def square(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> "Grid2D":
        """``(n+1) x (n+1)`` grid on ``[lo, hi]^2``."""
        return cls(n + 1, n + 1, (hi - lo) / n, lo, lo)

    @classmethod
    def box(cls, n: int, x_range: tuple[float, float], y_range: tuple[float, float]) -> "Grid2D":
        """``(n+1) x (n+1)`` grid on a square box given by its x and y ranges."""
        lx = x_range[1] - x_range[0]
        ly = y_range[1] - y_range[0]
        if not np.isclose(lx, ly):
            raise GridError("box must be square for an isotropic (n+1)x(n+1) grid")
        return cls(n + 1, n + 1, lx / n, x_range[0], y_range[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return self.ox + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.oy + self.h * np.arange(self.ny)

    @property
    def xmax(self) -> float:
        return self.ox + (self.nx - 1) * self.h

    @property
    def ymax(self) -> float:
        return self.oy + (self.ny - 1) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def sample(self, fn) -> np.ndarray:
        X, Y = self.mesh()
        return np.broadcast_to(np.asarray(fn(X, Y), dtype=float), self.shape).copy()

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m

    def nearest_index(self, x: float, y: float) -> tuple[int, int]:
        """``(j, i)`` of the node closest to ``(x, y)``; raises outside the grid."""
        tol = 1e-9 * self.h
        if not (self.ox - tol <= x <= self.xmax + tol and self.oy - tol <= y <= self.ymax + tol):
            raise GridError(f"point ({x}, {y}) lies outside the grid")
        i = int(np.clip(np.rint((x - self.ox) / self.h), 0, self.nx - 1))
        j = int(np.clip(np.rint((y - self.oy) / self.h), 0, self.ny - 1))
        return j, i

    def sub_indices(self, x_range, y_range) -> tuple[slice, slice]:
        """Slices selecting the nodes inside a closed sub-box, snapped to the grid."""
        j0, i0 = self.nearest_index(x_range[0], y_range[0])
        j1, i1 = self.nearest_index(x_range[1], y_range[1])
        return slice(j0, j1 + 1), slice(i0, i1 + 1)

    def subgrid(self, x_range, y_range) -> "Grid2D":
        sj, si = self.sub_indices(x_range, y_range)
        return Grid2D(si.stop - si.start, sj.stop - sj.start, self.h,
                      self.ox + si.start * self.h, self.oy + sj.start * self.h)


def _check(grid: Grid2D, name: str, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != grid.shape:
        raise ValueError(f"{name}: expected shape {grid.shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite values")
    return a


@dataclass
class ScalarField2:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = _check(self.grid, "values", self.values)

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField2":
        return cls(grid, grid.sample(fn))

    @classmethod
    def constant(cls, grid: Grid2D, c: float) -> "ScalarField2":
        return cls(grid, np.full(grid.shape, float(c)))

    def restrict(self, x_range, y_range) -> "ScalarField2":
        sj, si = self.grid.sub_indices(x_range, y_range)
        return ScalarField2(self.grid.subgrid(x_range, y_range), self.values[sj, si].copy())


@dataclass
class VectorField2:
    grid: Grid2D
    cx: np.ndarray
    cy: np.ndarray

    def __post_init__(self):
        self.cx = _check(self.grid, "cx", self.cx)
        self.cy = _check(self.grid, "cy", self.cy)

    def scaled(self, c: float) -> "VectorField2":
        return VectorField2(self.grid, c * self.cx, c * self.cy)

    def restrict(self, x_range, y_range) -> "VectorField2":
        sj, si = self.grid.sub_indices(x_range, y_range)
        return VectorField2(self.grid.subgrid(x_range, y_range),
                            self.cx[sj, si].copy(), self.cy[sj, si].copy())


@dataclass
class Matrix2Field:
    """Nodewise 2x2 matrices ``[[a11, a12], [a21, a22]]``."""

    grid: Grid2D
    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            setattr(self, name, _check(self.grid, name, getattr(self, name)))
        if self.symmetric and not np.array_equal(self.a12, self.a21):
            raise ValueError("matrix field flagged symmetric but a12 != a21")

    @classmethod
    def from_columns(cls, c1: VectorField2, c2: VectorField2) -> "Matrix2Field":
        """Matrix whose first column is ``c1`` and second column is ``c2``."""
        return cls(c1.grid, c1.cx, c2.cx, c1.cy, c2.cy)

    @classmethod
    def sym(cls, grid, a11, a12, a22) -> "Matrix2Field":
        a12 = np.asarray(a12, dtype=float)
        return cls(grid, a11, a12, a12.copy(), a22, symmetric=True)

    def det(self) -> np.ndarray:
        return self.a11 * self.a22 - self.a12 * self.a21

    def stack(self) -> np.ndarray:
        """Values as an array of shape ``(ny, nx, 2, 2)``."""
        return np.stack([np.stack([self.a11, self.a12], -1),
                         np.stack([self.a21, self.a22], -1)], -2)

    def matvec(self, v: VectorField2) -> VectorField2:
        return VectorField2(self.grid, self.a11 * v.cx + self.a12 * v.cy,
                            self.a21 * v.cx + self.a22 * v.cy)


@dataclass
class SymTensor2Field:
    """Conductivity ``beta * [[xi, zeta], [zeta, (1 + zeta**2) / xi]]``.

    The unit-determinant factor is carried by ``(xi, zeta)`` and the scale by
    ``beta = sqrt(det gamma)``.
    """

    xi: ScalarField2
    zeta: ScalarField2
    beta: ScalarField2

    def __post_init__(self):
        if not (self.xi.grid == self.zeta.grid == self.beta.grid):
            raise ValueError("xi, zeta and beta must share one grid")
        if np.any(self.xi.values <= 0):
            raise ValueError("xi must be positive at every node")
        if np.any(self.beta.values <= 0):
            raise ValueError("beta must be positive at every node")

    @property
    def grid(self) -> Grid2D:
        return self.xi.grid

    @classmethod
    def from_arrays(cls, grid: Grid2D, xi, zeta, beta) -> "SymTensor2Field":
        return cls(ScalarField2(grid, xi), ScalarField2(grid, zeta), ScalarField2(grid, beta))

    @classmethod
    def from_matrix(cls, gamma: Matrix2Field) -> "SymTensor2Field":
        """Decompose a symmetric positive tensor field into ``(xi, zeta, beta)``."""
        d = gamma.det()
        if np.any(d <= 0):
            raise ValueError("tensor field is not positive definite")
        beta = np.sqrt(d)
        return cls.from_arrays(gamma.grid, gamma.a11 / beta, gamma.a12 / beta, beta)

    def restrict(self, x_range, y_range) -> "SymTensor2Field":
        return SymTensor2Field(self.xi.restrict(x_range, y_range), self.zeta.restrict(x_range, y_range),
                               self.beta.restrict(x_range, y_range))

    def tilde(self) -> Matrix2Field:
        xi, zeta = self.xi.values, self.zeta.values
        return Matrix2Field.sym(self.grid, xi, zeta, (1.0 + zeta**2) / xi)

    def tensor(self) -> Matrix2Field:
        t, b = self.tilde(), self.beta.values
        return Matrix2Field.sym(self.grid, b * t.a11, b * t.a12, b * t.a22)

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodewise ``(lambda_min, lambda_max)`` of the full tensor."""
        g = self.tensor()
        tr = g.a11 + g.a22
        disc = np.sqrt(np.maximum((g.a11 - g.a22) ** 2 / 4 + g.a12**2, 0.0))
        return tr / 2 - disc, tr / 2 + disc

    def kappa(self) -> float:
        """Smallest ``kappa >= 1`` with ``kappa^-1 |v|^2 <= v.gamma v <= kappa |v|^2``."""
        lo, hi = self.eigenvalues()
        return float(max(1.0, hi.max(), 1.0 / lo.min()))


# -- discrete operators -------------------------------------------------------

def _d(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    # centered in the interior, second-order one-sided at the two ends
    if values.shape[axis] < 3:
        raise GridError("need at least 3 nodes along each axis to differentiate")
    return np.gradient(values, h, axis=axis, edge_order=2)


def ddx(values: np.ndarray, h: float) -> np.ndarray:
    return _d(values, h, axis=1)


def ddy(values: np.ndarray, h: float) -> np.ndarray:
    return _d(values, h, axis=0)


def gradient(f: ScalarField2) -> VectorField2:
    """Second-order nodal gradient (centered inside, one-sided on edges)."""
    h = f.grid.h
    return VectorField2(f.grid, ddx(f.values, h), ddy(f.values, h))


def divergence(F: VectorField2) -> ScalarField2:
    h = F.grid.h
    return ScalarField2(F.grid, ddx(F.cx, h) + ddy(F.cy, h))


def curl2(F: VectorField2) -> ScalarField2:
    """Scalar curl ``d1 F2 - d2 F1`` with the gradient stencils."""
    h = F.grid.h
    return ScalarField2(F.grid, ddx(F.cy, h) - ddy(F.cx, h))


def sliding_average_array(a: np.ndarray, passes: int = 1) -> np.ndarray:
    if passes < 0:
        raise ValueError("passes must be non-negative")
    a = np.array(a, dtype=float)
    if passes == 0:
        return a
    ones = np.ones_like(a)

    def box(v):
        s = v.copy()
        s[1:, :] += v[:-1, :]
        s[:-1, :] += v[1:, :]
        s[:, 1:] += v[:, :-1]
        s[:, :-1] += v[:, 1:]
        return s

    count = box(ones)
    for _ in range(passes):
        a = box(a) / count
    return a


def sliding_average(f: ScalarField2, passes: int = 1) -> ScalarField2:
    """5-point moving average; edge nodes average over the neighbours that exist."""
    return ScalarField2(f.grid, sliding_average_array(f.values, passes))


@dataclass
class Section:
    """A field restricted to one grid line."""

    axis: str
    coordinate: float
    abscissa: np.ndarray
    values: np.ndarray = field(repr=False)


def cross_section(f: ScalarField2, axis: str, coordinate: float) -> Section:
    """Restrict ``f`` to the grid line ``y = coordinate`` (axis "y") or ``x = coordinate`` (axis "x").

    The coordinate is snapped to the nearest grid line; the returned
    ``coordinate`` is the snapped value.
    """
    g = f.grid
    if axis == "y":
        j, _ = g.nearest_index(g.ox, coordinate)
        return Section("y", float(g.y[j]), g.x.copy(), f.values[j, :].copy())
    if axis == "x":
        _, i = g.nearest_index(coordinate, g.oy)
        return Section("x", float(g.x[i]), g.y.copy(), f.values[:, i].copy())
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
