"""Post-reconstruction denoising: Tikhonov and anisotropic TV (split Bregman).

Both act on 1-D or 2-D arrays (or ``ScalarField2``) and use the forward
difference gradient ``M`` with spacing ``h``; ``M`` has no boundary rows, so
``M.T @ M`` is the Neumann graph Laplacian and constants lie in its kernel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import ScalarField2

logger = logging.getLogger(__name__)

KINDS = ("none", "l2", "l1_tv")


@dataclass
class RegSpec:
    kind: str = "none"
    rho: float = 0.0
    inner_iter: int = 1
    outer_iter: int = 2000
    tol: float = 1e-6
    bregman_lambda: float | None = None  # None: chosen from rho and h

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularization kind {self.kind!r}; expected one of {KINDS}")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.inner_iter < 1 or self.outer_iter < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class TVInfo:
    iterations: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list)


def difference_operator(shape, h: float = 1.0) -> sp.csr_matrix:
    """Forward differences along every axis of an array of ``shape``, stacked."""
    shape = tuple(shape)
    eyes = [sp.identity(n, format="csr") for n in shape]
    blocks = []
    for ax, n in enumerate(shape):
        d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
        op = None
        for k in range(len(shape)):
            m = d1 if k == ax else eyes[k]
            op = m if op is None else sp.kron(op, m)
        blocks.append(op)
    return sp.vstack(blocks).tocsr()


def _unwrap(f, h):
    if isinstance(f, ScalarField2):
        return f.values, (f.grid.h if h is None else h), f
    return np.asarray(f, dtype=float), (1.0 if h is None else h), None


def _wrap(g, like):
    return ScalarField2(like.grid, g) if like is not None else g


def tikhonov_denoise(f, spec: RegSpec, h: float | None = None):
    """Solve ``(I + rho M^T M) g = f``.

    This is the minimizer of ``1/2 |g - f|^2 + rho/2 |M g|^2``.
    """
    a, h, like = _unwrap(f, h)
    if spec.rho == 0:
        return _wrap(a.copy(), like)
    D = difference_operator(a.shape, h)
    A = (sp.identity(a.size) + spec.rho * (D.T @ D)).tocsc()
    g = spla.splu(A).solve(a.ravel())
    res = np.linalg.norm(A @ g - a.ravel()) / max(np.linalg.norm(a), 1e-300)
    if res > max(spec.tol, 1e-8):
        raise RuntimeError(f"Tikhonov solve residual {res:.3g} above tolerance")
    return _wrap(g.reshape(a.shape), like)


def shrink(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def tv_denoise(f, spec: RegSpec, h: float | None = None, info: TVInfo | None = None):
    """Anisotropic TV denoising, ``argmin 1/2 |g - f|^2 + rho |M g|_1``, by split Bregman.

    Parameters
    ----------
    f : ndarray or ScalarField2
        Data to denoise.
    spec : RegSpec
        ``rho`` is the TV weight, ``bregman_lambda`` the quadratic penalty
        coupling ``d = M g``. Iteration stops when the relative change of
        ``g`` falls below ``tol`` or after ``outer_iter`` Bregman updates,
        each preceded by ``inner_iter`` alternating sweeps.
    h : float, optional
        Grid spacing; taken from the field when ``f`` is a ``ScalarField2``.
    info : TVInfo, optional
        Filled with the iteration count, convergence flag and history.

    Returns
    -------
    ndarray or ScalarField2
        The last iterate, of the same kind as ``f``.
    """
    a, h, like = _unwrap(f, h)
    info = info if info is not None else TVInfo()
    if spec.rho <= 0:
        raise ValueError("TV denoising needs rho > 0")
    lam = spec.bregman_lambda
    if lam is None:
        lam = default_bregman_lambda(spec.rho, h)
    D = difference_operator(a.shape, h)
    fv = a.ravel()
    solve = spla.splu((sp.identity(a.size) + lam * (D.T @ D)).tocsc()).solve
    thresh = spec.rho / lam
    g = fv.copy()
    d = np.zeros(D.shape[0])
    b = np.zeros_like(d)
    for k in range(spec.outer_iter):
        g_old = g
        for _ in range(spec.inner_iter):
            g = solve(fv + lam * (D.T @ (d - b)))
            Dg = D @ g
            d = shrink(Dg + b, thresh)
        b = b + Dg - d
        change = np.linalg.norm(g - g_old) / max(np.linalg.norm(g_old), 1e-300)
        info.history.append(float(change))
        info.iterations = k + 1
        if change <= spec.tol:
            info.converged = True
            break
    if not info.converged:
        warnings.warn(f"split Bregman stopped after {info.iterations} iterations "
                      f"(last relative change {info.history[-1]:.3g})", RuntimeWarning, stacklevel=2)
    return _wrap(g.reshape(a.shape), like)


def default_bregman_lambda(rho: float, h: float) -> float:
    # on the unit-spacing problem (rho -> rho/h, lambda -> lambda/h^2) this is lambda = 10 rho
    return 10.0 * rho * h


def tv_objective(g, f, rho: float, h: float = 1.0) -> float:
    g = np.asarray(g, dtype=float)
    f = np.asarray(f, dtype=float)
    D = difference_operator(g.shape, h)
    return 0.5 * float(np.sum((g - f) ** 2)) + rho * float(np.abs(D @ g.ravel()).sum())


def denoise(f, spec: RegSpec, h: float | None = None):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "none" or spec.rho == 0:
        a, _, like = _unwrap(f, h)
        return _wrap(a.copy(), like)
    if spec.kind == "l2":
        return tikhonov_denoise(f, spec, h)
    return tv_denoise(f, spec, h)
