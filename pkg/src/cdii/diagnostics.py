"""Data-side reconstructibility checks and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Matrix2Field, ScalarField2, VectorField2


def det2(F1: VectorField2, F2: VectorField2) -> np.ndarray:
    """Signed ``det[F1, F2]`` (columns) at every node."""
    return F1.cx * F2.cy - F1.cy * F2.cx


def det_basis_field(H1: VectorField2, H2: VectorField2) -> tuple[ScalarField2, float]:
    """``|det[H1, H2]|`` nodewise together with its infimum over the grid."""
    if H1.grid != H2.grid:
        raise ValueError("H1 and H2 live on different grids")
    d = np.abs(det2(H1, H2))
    return ScalarField2(H1.grid, d), float(d.min())


def frobenius(A: Matrix2Field, B: Matrix2Field) -> np.ndarray:
    return A.a11 * B.a11 + A.a12 * B.a12 + A.a21 * B.a21 + A.a22 * B.a22


def independence_field(M1: Matrix2Field, M2: Matrix2Field) -> tuple[ScalarField2, np.ndarray]:
    """Normalized inner product ``|M1:M2| / (|M1| |M2|)``.

    0 means orthogonal, 1 means linearly dependent. Nodes where either
    matrix vanishes are returned as 1 and flagged in the mask.
    """
    n1 = np.sqrt(frobenius(M1, M1))
    n2 = np.sqrt(frobenius(M2, M2))
    bad = (n1 == 0) | (n2 == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.abs(frobenius(M1, M2)) / (n1 * n2)
    v = np.where(bad, 1.0, np.clip(v, 0.0, 1.0))
    return ScalarField2(M1.grid, v), bad


def _values(f):
    return f.values if isinstance(f, ScalarField2) else np.asarray(f, dtype=float)


def relative_l2_error(f, f_true, mask=None) -> float:
    """``|f - f_true|_2 / |f_true|_2`` over the nodes where ``mask`` is False."""
    a, b = _values(f), _values(f_true)
    if a.shape != b.shape:
        raise ValueError("fields have different shapes")
    keep = np.ones(a.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    den = np.linalg.norm(b[keep])
    if den == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm((a - b)[keep]) / den)


def max_error(f, f_true, mask=None) -> float:
    a, b = _values(f), _values(f_true)
    keep = np.ones(a.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    return float(np.abs(a - b)[keep].max())


@dataclass
class ReconReport:
    min_det_basis: float = float("nan")
    det_basis_field: ScalarField2 | None = None
    independence_field: ScalarField2 | None = None
    masked_fraction: float = 0.0
    errors: dict[str, float] = field(default_factory=dict)
    anchor_error: float = float("nan")
    extra: dict[str, float] = field(default_factory=dict)

    def condition_b_ok(self, threshold: float = 1e-3) -> np.ndarray:
        """Nodes where ``1 - independence >= threshold``."""
        if self.independence_field is None:
            raise ValueError("no independence field recorded")
        return 1.0 - self.independence_field.values >= threshold

    def as_dict(self) -> dict[str, str]:
        out = {
            "min_det_basis": _fmt(self.min_det_basis),
            "masked_fraction": _fmt(self.masked_fraction),
            "anchor_error": _fmt(self.anchor_error),
        }
        for k in sorted(self.errors):
            out[f"error.{k}"] = _fmt(self.errors[k])
        for k in sorted(self.extra):
            out[k] = _fmt(self.extra[k])
        return out


def _fmt(v) -> str:
    return format(float(v), ".17g")


def max_pairwise_log_det(H: list[VectorField2]) -> np.ndarray:
    """``max_{i<j} log10 |det[H_i, H_j]|`` at every node."""
    best = np.full(H[0].grid.shape, -np.inf)
    for i in range(len(H)):
        for j in range(i + 1, len(H)):
            with np.errstate(divide="ignore"):
                best = np.maximum(best, np.log10(np.abs(det2(H[i], H[j]))))
    return best
