"""Experiment runner: phantom, forward solves, noise, reconstruction, metrics and artifacts."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import fieldio
from .config import DOMAINS, ExperimentConfig
from .fields import ScalarField2, SymTensor2Field, VectorField2, cross_section
from .recon import ReconResult, reconstruct_full
from .synth import (MeasurementSet, add_noise, generate_measurements, make_illuminations,
                    make_phantom)

logger = logging.getLogger(__name__)

DECAY_LINES = (0.0, -0.5, 0.5)
LOG_DET_FLOOR = -300.0


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass
class ExperimentOutcome:
    config: ExperimentConfig
    truth: SymTensor2Field
    measurements: MeasurementSet
    result: ReconResult
    report: dict[str, str]
    log_det: np.ndarray | None = None  # max pairwise log10|det|, Gaussian illuminations only


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def section_line(cfg: ExperimentConfig) -> float:
    """``y`` of the horizontal cross-section drawn for this experiment."""
    return -0.5 if cfg.phantom == "exp3_piecewise" else 0.0


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentOutcome:
    """Run the whole pipeline for a resolved config; write artifacts when ``out_dir`` is set."""
    grid = _stage("grid", cfg.grid)
    truth = _stage("phantom", make_phantom, cfg.phantom, grid, cfg.phantom_seed)
    illums = _stage("illuminations", make_illuminations, cfg.illuminations, grid)
    clean = _stage("forward", generate_measurements, truth, illums, cfg.solver)
    H = _stage("noise", add_noise, clean, cfg.noise)
    region = cfg.region()
    local_truth = truth.restrict(*region) if region is not None else truth
    opts = _stage("options", cfg.recon_options, local_truth.beta.values)
    if cfg.known_anisotropy:
        opts.known_anisotropy = (local_truth.xi, local_truth.zeta)
    result = _stage("reconstruct", reconstruct_full, H, opts, truth)
    log_det = None
    if cfg.illuminations.startswith("gauss"):
        # collinear gradients give log10(0) = -inf; clamp so FLD2 stays finite
        log_det = np.maximum(dg.max_pairwise_log_det(H.fields), LOG_DET_FLOOR)
    report = build_report(cfg, result, local_truth, log_det)
    outcome = ExperimentOutcome(cfg, truth, H, result, report, log_det)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        _stage("write", write_outputs, outcome, out_dir)
    return outcome


def build_report(cfg: ExperimentConfig, result: ReconResult, truth: SymTensor2Field,
                 log_det: np.ndarray | None = None) -> dict[str, str]:
    g = result.beta.grid
    rep = result.report
    out = {
        "experiment": cfg.experiment,
        "phantom": cfg.phantom,
        "illuminations": cfg.illuminations,
        "grid": f"{g.nx} {g.ny} {_g(g.h)} {_g(g.ox)} {_g(g.oy)}",
        "noise.alpha": _g(cfg.noise.alpha),
        "noise.seed": str(cfg.noise.seed),
    }
    out.update(rep.as_dict())
    for name in ("xi", "zeta", "beta"):
        out[f"max_error.{name}"] = _g(dg.max_error(getattr(result, name), getattr(truth, name)))
    if rep.independence_field is not None:
        out["condition_b_fail_fraction"] = _g(1.0 - rep.condition_b_ok(cfg.independence_threshold).mean())
    if log_det is not None:
        q = quarter_medians(cfg.grid(), log_det)
        out["log_det.median_bottom_quarter"] = _g(q[0])
        out["log_det.median_top_quarter"] = _g(q[1])
    return out


def quarter_medians(grid, log_det: np.ndarray) -> tuple[float, float]:
    """Median of ``log_det`` over the bottom and top quarters of ``X = [-1, 1]^2``."""
    X, Y = grid.mesh()
    inside = (np.abs(X) <= 1 + 1e-9) & (np.abs(Y) <= 1 + 1e-9)
    bottom = inside & (Y <= -0.5 + 1e-9)
    top = inside & (Y >= 0.5 - 1e-9)
    return float(np.median(log_det[bottom])), float(np.median(log_det[top]))


def _g(v) -> str:
    return format(float(v), ".17g")


# -- artifacts ----------------------------------------------------------------

def save_measurements(H: MeasurementSet, directory) -> None:
    d = fieldio.ensure_dir(directory)
    manifest = {"count": str(len(H))}
    for k, (label, f) in enumerate(zip(H.labels, H.fields), 1):
        fieldio.save(d / f"H{k}.fld", f)
        manifest[f"label.{k}"] = label
    for k in sorted(H.provenance):
        manifest[f"provenance.{k}"] = str(H.provenance[k])
    (d / "manifest").write_text(fieldio.dump_kv(manifest))


def load_measurements(directory) -> MeasurementSet:
    d = Path(directory)
    manifest = fieldio.parse_kv((d / "manifest").read_text())
    n = int(manifest["count"])
    fields = []
    for k in range(1, n + 1):
        f = fieldio.load(d / f"H{k}.fld")
        if not isinstance(f, VectorField2):
            raise fieldio.FormatError(f"H{k}.fld is not a vector field")
        fields.append(f)
    labels = [manifest.get(f"label.{k}", f"H{k}") for k in range(1, n + 1)]
    prov = {k.split(".", 1)[1]: v for k, v in manifest.items() if k.startswith("provenance.")}
    return MeasurementSet(fields, labels, prov)


def save_tensor(t: SymTensor2Field, directory) -> None:
    d = fieldio.ensure_dir(directory)
    for name in ("xi", "zeta", "beta"):
        fieldio.save(d / f"{name}.fld", getattr(t, name))


def load_tensor(directory) -> SymTensor2Field:
    d = Path(directory)
    return SymTensor2Field(*(fieldio.load(d / f"{n}.fld") for n in ("xi", "zeta", "beta")))


def save_result(result: ReconResult, directory) -> None:
    """``xi.fld``, ``zeta.fld``, ``beta.fld``, ``mask.fld`` plus diagnostic fields and ``diagnostics``."""
    d = fieldio.ensure_dir(directory)
    for name in ("xi", "zeta", "beta"):
        fieldio.save(d / f"{name}.fld", getattr(result, name))
    g = result.beta.grid
    fieldio.save_mask(d / "mask.fld", g, result.mask)
    rep = result.report
    if rep.det_basis_field is not None:
        fieldio.save(d / "det_basis.fld", rep.det_basis_field)
    if rep.independence_field is not None:
        fieldio.save(d / "independence.fld", rep.independence_field)
    (d / "diagnostics").write_text(fieldio.dump_kv(rep.as_dict()))


def write_sections(outcome: ExperimentOutcome, directory) -> None:
    d = fieldio.ensure_dir(directory)
    res, cfg = outcome.result, outcome.config
    region = cfg.region()
    truth = outcome.truth.restrict(*region) if region is not None else outcome.truth
    y0 = section_line(cfg)
    for name in ("xi", "zeta", "beta"):
        for tag, f in (("recon", getattr(res, name)), ("true", getattr(truth, name))):
            s = cross_section(f, "y", y0)
            fieldio.write_section_csv(d / f"{name}_{tag}_y{s.coordinate:+g}.csv", s.abscissa, s.values)
    if outcome.log_det is not None:
        f = ScalarField2(outcome.measurements.grid, outcome.log_det)
        for x0 in DECAY_LINES:
            s = cross_section(f, "x", x0)
            fieldio.write_section_csv(d / f"log_det_x{s.coordinate:+g}.csv", s.abscissa, s.values)


def write_outputs(outcome: ExperimentOutcome, out_dir) -> Path:
    out = fieldio.ensure_dir(out_dir)
    (out / "config.txt").write_text(outcome.config.to_text())
    save_tensor(outcome.truth, out / "truth")
    save_measurements(outcome.measurements, out / "measurements")
    save_result(outcome.result, out / "recon")
    if outcome.log_det is not None:
        fieldio.save(out / "recon" / "log_det.fld", ScalarField2(outcome.measurements.grid, outcome.log_det))
    write_sections(outcome, out / "sections")
    (out / "report.txt").write_text(fieldio.dump_kv(outcome.report))
    return out

