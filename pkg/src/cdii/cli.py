"""Command-line entry point: ``cdii <command> [--config PATH] [--out DIR] [--seed N] [--noise A]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import fieldio
from .config import ConfigError, ExperimentConfig, parse_config
from .fields import ScalarField2, cross_section
from .forward import flux, solve_conductivity
from .harness import (DECAY_LINES, LOG_DET_FLOOR, StageError, build_report, load_measurements,
                      load_tensor, quarter_medians, run_experiment, save_measurements, save_result,
                      save_tensor)
from .recon import basis_coefficients, constraint_matrices, reconstruct_full, z_matrices
from .synth import NoiseSpec, add_noise, generate_measurements, make_illuminations, make_phantom

logger = logging.getLogger("cdii")


def _config(args, **extra) -> ExperimentConfig:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {k: v for k, v in extra.items() if v is not None}
    if args.seed is not None:
        overrides["noise.seed"] = str(args.seed)
    if args.noise is not None:
        overrides["noise.alpha"] = str(args.noise)
    return parse_config(text, overrides)


def _out(args, default: str) -> Path:
    return fieldio.ensure_dir(args.out or default)


def cmd_experiment(args) -> int:
    cfg = _config(args, experiment=args.number)
    out = args.out or cfg.out_dir or f"exp{args.number}_out"
    outcome = run_experiment(cfg, out)
    for k, v in outcome.report.items():
        print(f"{k}={v}")
    return 0


def cmd_forward(args) -> int:
    cfg = _config(args)
    out = _out(args, "forward_out")
    grid = cfg.grid()
    gamma = make_phantom(cfg.phantom, grid, cfg.phantom_seed)
    save_tensor(gamma, out / "truth")
    for k, (label, bc) in enumerate(make_illuminations(cfg.illuminations, grid), 1):
        u = solve_conductivity(grid, gamma, bc, cfg.solver)
        fieldio.save(out / f"u{k}.fld", u)
        fieldio.save(out / f"H{k}.fld", flux(gamma, u))
        print(f"u{k} ({label}) written")
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out(args, "synth_out")
    grid = cfg.grid()
    gamma = make_phantom(cfg.phantom, grid, cfg.phantom_seed)
    H = generate_measurements(gamma, make_illuminations(cfg.illuminations, grid), cfg.solver)
    H = add_noise(H, cfg.noise)
    save_tensor(gamma, out / "truth")
    save_measurements(H, out / "measurements")
    print(f"{len(H)} measurements on a {grid.nx}x{grid.ny} grid written to {out}")
    return 0


def cmd_noise(args) -> int:
    H = load_measurements(args.input)
    spec = NoiseSpec(args.noise or 0.0, args.seed or 0)
    save_measurements(add_noise(H, spec), _out(args, "noisy_out"))
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    H = load_measurements(args.input)
    truth = load_tensor(args.truth) if args.truth else None
    region = cfg.region()
    local = truth.restrict(*region) if (truth is not None and region is not None) else truth
    opts = cfg.recon_options(local.beta.values if local is not None else None)
    if cfg.known_anisotropy:
        if local is None:
            raise ConfigError("recon.known_anisotropy needs --truth")
        opts.known_anisotropy = (local.xi, local.zeta)
    result = reconstruct_full(H, opts, truth)
    out = _out(args, "recon_out")
    save_result(result, out)
    if truth is not None:
        report = build_report(cfg, result, local)
        (out / "report.txt").write_text(fieldio.dump_kv(report))
        for k, v in report.items():
            print(f"{k}={v}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    H = load_measurements(args.input)
    opts = cfg.algebra_options()
    out = _out(args, "diagnose_out")
    i, j = opts.basis
    det_f, mind = dg.det_basis_field(H[i], H[j])
    fieldio.save(out / "det_basis.fld", det_f)
    log_det = np.maximum(dg.max_pairwise_log_det(H.fields), LOG_DET_FLOOR)
    fieldio.save(out / "log_det.fld", ScalarField2(H.grid, log_det))
    info = {"min_det_basis": format(mind, ".17g")}
    indep = np.ones(H.grid.shape)
    for pair in opts.pairs_for(len(H)):
        M = constraint_matrices(*z_matrices(basis_coefficients(H, opts.basis, pair, opts)), H[i], H[j])
        f, _ = dg.independence_field(M.M1, M.M2)
        indep = np.minimum(indep, f.values)
        tag = f"{pair[0] + 1}{pair[1] + 1}"
        fieldio.save(out / f"independence_{tag}.fld", f)
    info["condition_b_fail_fraction"] = format(float((1 - indep < cfg.independence_threshold).mean()), ".17g")
    try:
        lo, hi = quarter_medians(H.grid, log_det)
        info["log_det.median_bottom_quarter"] = format(lo, ".17g")
        info["log_det.median_top_quarter"] = format(hi, ".17g")
    except (ValueError, IndexError):
        pass
    sec = fieldio.ensure_dir(out / "sections")
    f = ScalarField2(H.grid, log_det)
    for x0 in DECAY_LINES:
        try:
            s = cross_section(f, "x", x0)
        except ValueError:
            continue
        fieldio.write_section_csv(sec / f"log_det_x{s.coordinate:+g}.csv", s.abscissa, s.values)
    (out / "diagnostics").write_text(fieldio.dump_kv(info))
    for k, v in info.items():
        print(f"{k}={v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="noise seed")
    common.add_argument("--noise", type=float, help="noise level alpha")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cdii", description="Current density impedance imaging lab")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common], help="solve the forward problems and write u_k, H_k")
    sub.add_parser("synth", parents=[common], help="write a (noisy) measurement set and the true tensor")
    s = sub.add_parser("noise", parents=[common], help="add noise to a measurement set")
    s.add_argument("--input", required=True, help="measurement-set directory")
    s = sub.add_parser("reconstruct", parents=[common], help="reconstruct from a measurement set")
    s.add_argument("--input", required=True, help="measurement-set directory")
    s.add_argument("--truth", help="directory with the true xi/zeta/beta (enables errors and Dirichlet beta)")
    s = sub.add_parser("diagnose", parents=[common], help="check the reconstructibility conditions")
    s.add_argument("--input", required=True, help="measurement-set directory")
    s = sub.add_parser("experiment", parents=[common], help="run a preset experiment")
    s.add_argument("number", choices=["1", "2", "3", "4", "5", "custom"])
    return p


COMMANDS = {"forward": cmd_forward, "synth": cmd_synth, "noise": cmd_noise, "reconstruct": cmd_reconstruct,
            "diagnose": cmd_diagnose, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, fieldio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
