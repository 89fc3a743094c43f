"""Command-line front end: simulate, model build, das, compound, solve,
metrics, export-png, compose through container files.

Exit codes: 0 success, 2 usage error (argparse), 3 missing input file,
4 invalid data or configuration, 5 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import pipeline
from .beamform import BModeImage, RfImage, compound, envelope, export_png, log_compress
from .config import ConfigError, load_run_config, preset_solver_config
from .io import ContainerError, ingest_picmus, read_container, write_container
from .metrics import disc_mask, gcnr, cnr
from .solver import SolverError, solve

EXIT_OK = 0
EXIT_MISSING_INPUT = 3
EXIT_INVALID = 4
EXIT_SOLVER = 5


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pwrecon",
        description="Plane-wave ultrasound reconstruction toolbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize phantom channel data")
    p.add_argument("--config", required=True, help="run config path or builtin:<name>")
    p.add_argument("--out", required=True, help="output channel container")
    p.add_argument("--phantom-out", help="also write the ground-truth phantom")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("model", help="system-matrix operations")
    msub = p.add_subparsers(dest="model_command", required=True)
    pb = msub.add_parser("build", help="assemble and store the system matrix")
    pb.add_argument("--config", required=True)
    pb.add_argument("--out", required=True, help="output matrix file")
    pb.set_defaults(func=_cmd_model_build)

    p = sub.add_parser("das", help="delay-and-sum beamforming")
    p.add_argument("--config", required=True)
    p.add_argument("--channel", required=True, help="channel container")
    p.add_argument("--out", required=True, help="output RF image container")
    p.set_defaults(func=_cmd_das)

    p = sub.add_parser("compound", help="coherently average RF images")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+", help="RF image containers")
    p.set_defaults(func=_cmd_compound)

    p = sub.add_parser("solve", help="iterative reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--channel", help="channel container (data-fidelity term)")
    p.add_argument("--das", help="reference RF image container (blur term)")
    p.add_argument("--psf", help="PSF container; defaults to the config choice")
    p.add_argument(
        "--mode",
        choices=("joint", "beamform", "deconv", "sequential"),
        help="override the config's reconstruction mode",
    )
    p.add_argument("--preset", help="hyperparameter preset (sr, er, sc, ec, cc, cl)")
    p.add_argument("--out", required=True, help="output RF image container")
    p.add_argument("--report", help="write convergence report JSON")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("metrics", help="quality indexes of a reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--image", required=True, help="RF image container to score")
    p.add_argument("--phantom", help="phantom container with annotations")
    p.add_argument("--reference", help="reference RF image (histogram matching)")
    p.add_argument("--kind", choices=("point", "cyst"))
    p.add_argument("--roi", help="explicit ROI disc 'z,x,r' in meters")
    p.add_argument("--background", help="explicit background disc 'z,x,r' in meters")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("export-png", help="render a container to 8-bit grayscale PNG")
    p.add_argument("--input", required=True, help="rfimage or bmode container")
    p.add_argument("--out", required=True)
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.set_defaults(func=_cmd_export_png)

    p = sub.add_parser("ingest-picmus", help="convert a PICMUS HDF5 file")
    p.add_argument("--file", required=True)
    p.add_argument("--angle-index", type=int, default=None)
    p.add_argument("--out", required=True, help="output channel container")
    p.set_defaults(func=_cmd_ingest)

    return parser


_MODE_FLAG = {
    "joint": "joint",
    "beamform": "beamform_only",
    "deconv": "deconv_only",
    "sequential": "sequential",
}


def _cmd_simulate(args):
    cfg = load_run_config(args.config)
    model = pipeline.build_model(cfg)
    phantom = pipeline.make_phantom(cfg)
    ch = pipeline.simulate(cfg, phantom, model)
    write_container(ch, args.out)
    if args.phantom_out:
        write_container(phantom, args.phantom_out)
    return EXIT_OK


def _cmd_model_build(args):
    cfg = load_run_config(args.config)
    probe, num_samples = cfg.resolve_time_window()
    from .forward_model import build_system_matrix

    model = build_system_matrix(probe, cfg.grid, cfg.tx(), num_samples, cfg.apodization)
    write_container(model, args.out)
    return EXIT_OK


def _cmd_das(args):
    cfg = load_run_config(args.config)
    ch = read_container(args.channel)
    from .beamform import das_beamform

    img = das_beamform(ch, cfg.grid, cfg.apodization)
    write_container(img, args.out)
    return EXIT_OK


def _cmd_compound(args):
    images = [read_container(p) for p in args.inputs]
    for img in images:
        if not isinstance(img, RfImage):
            raise ContainerError("compound expects rfimage containers")
    write_container(compound(images), args.out)
    return EXIT_OK


def _cmd_solve(args):
    cfg = load_run_config(args.config)
    scfg = cfg.solver
    mode = _MODE_FLAG[args.mode] if args.mode else scfg.mode
    if args.preset:
        scfg = preset_solver_config(mode, args.preset)
    elif args.mode:
        from dataclasses import replace

        if mode == "beamform_only":
            scfg = replace(scfg, mode=mode, gamma_d=0.0, gamma_b=scfg.gamma_b or 1.0)
        elif mode == "deconv_only":
            scfg = replace(scfg, mode=mode, gamma_b=0.0, gamma_d=scfg.gamma_d or 1.0)
        else:
            scfg = replace(scfg, mode=mode)

    ch = read_container(args.channel) if args.channel else None
    y_das = read_container(args.das) if args.das else None
    psf = read_container(args.psf) if args.psf else None
    model = None
    needs_model = scfg.gamma_b > 0 or scfg.mode == "sequential"
    if needs_model:
        if ch is None:
            raise ConfigError("mode %r needs --channel data" % scfg.mode)
        model = pipeline.build_model(cfg)
    needs_blur = scfg.gamma_d > 0 or scfg.mode == "sequential"
    if needs_blur:
        if y_das is None:
            if ch is None:
                raise ConfigError("mode %r needs --das or channel data" % scfg.mode)
            if model is None:
                model = pipeline.build_model(cfg)
            y_das = pipeline.reference_das(model, ch)
        if psf is None:
            psf = pipeline.resolve_psf(cfg, model=model)
    report = solve(scfg, model=model, y_ch=ch, psf=psf, y_das=y_das)
    write_container(report.result, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, indent=2, sort_keys=True)
    print(
        "solved mode=%s iterations=%d converged=%s"
        % (scfg.mode, report.iterations, report.converged)
    )
    return EXIT_OK


def _parse_disc(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ConfigError("disc spec must be 'z,x,r' in meters")
    return (parts[0], parts[1]), parts[2]


def _cmd_metrics(args):
    cfg = load_run_config(args.config)
    image = read_container(args.image)
    if not isinstance(image, RfImage):
        raise ContainerError("metrics expects an rfimage container")
    reference = read_container(args.reference) if args.reference else None
    if args.roi and args.background:
        # explicit discs bypass phantom annotations
        bmode = log_compress(envelope(image), cfg.dynamic_range)
        (rc, rr) = _parse_disc(args.roi)
        (bc, br) = _parse_disc(args.background)
        roi = disc_mask(cfg.grid, rc, rr)
        bg = disc_mask(cfg.grid, bc, br)
        if reference is not None and not np.array_equal(roi, bg):
            ref_bmode = log_compress(envelope(reference), cfg.dynamic_range)
            from .metrics import histogram_match

            bmode = histogram_match(bmode, ref_bmode, bg)
        doc = {
            "cnr_db": [cnr(bmode, (roi, bg))],
            "gcnr": [gcnr(bmode, (roi, bg))],
        }
        text = json.dumps(doc, indent=2, sort_keys=True)
    else:
        if not args.phantom:
            raise ConfigError("metrics needs --phantom or explicit --roi/--background")
        phantom = read_container(args.phantom)
        if args.kind:
            cfg.metrics["kind"] = args.kind
        report = pipeline.measure(cfg, phantom, image, reference=reference)
        print(report.to_text())
        text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_export_png(args):
    obj = read_container(args.input)
    if isinstance(obj, RfImage):
        obj = log_compress(envelope(obj), args.dynamic_range)
    if not isinstance(obj, BModeImage):
        raise ContainerError("export-png expects an rfimage or bmode container")
    export_png(obj, args.out)
    return EXIT_OK


def _cmd_ingest(args):
    ch, _probe = ingest_picmus(args.file, angle_index=args.angle_index)
    write_container(ch, args.out)
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ContainerError, ConfigError, ValueError) as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_INVALID
    except SolverError as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
