"""Batch CLI wiring the pipeline: phantom generation, propagation,
skeletonization, loss evaluation, metrics, and format conversion.

Exit codes: 0 success, 1 usage error (bad flags or parameter
combinations, rejected before any IO), 2 data error (unreadable or
malformed inputs).

Every output file gets a plain-text ``<file>.manifest.txt`` sidecar with
the resolved parameters, input content hashes, tool version, and wall
clock duration. Parameter precedence: command line > ``--config`` file >
built-in defaults. ``SKELPROP_OUTPUT_DIR`` sets the default output
directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .distance import INVERSE_GEODESIC, DistanceMap, GeodesicParams
from .iggd import InverseParams, inverse_geodesic
from .losses import LossWeights, PredictionVolume, evaluate_losses
from .metrics import compute_metrics, largest_component
from .phantom import PhantomSpec, generate
from .propagation import MaskProposal, PropagationParams, propagate
from .skeleton import build_graph, skeletonize, write_edge_list
from .smoothing import GaussianParams
from .volume import (
    BinaryMask,
    DataError,
    ScalarVolume,
    VolumeGeometry,
    _atomic_write,
    load_mask,
    load_volume,
    save_volume,
    skeleton_from_mask_file,
)

# name -> (type, default, help with the method's symbol)
_PARAMS = {
    "sigma": (float, 1.0, "Gaussian sigma in voxels applied before the geodesic transform"),
    "delta1": (float, 0.01, "foreground buffer: delta1 fraction of the max geodesic distance"),
    "delta2": (float, 0.07, "background buffer: delta2 fraction of the max geodesic distance"),
    "gamma": (float, 0.05, "Euclidean background buffer: gamma fraction of the max distance"),
    "connectivity": (int, 26, "voxel graph neighborhood for the geodesic transform"),
    "spatial_weight": (float, 0.0, "mm step length mixed into the geodesic edge cost"),
    "units": (str, "mm", "distance units for the Euclidean buffer"),
    "lambda1": (float, 1.5, "lambda1 weight of the entropy term in the total loss"),
    "lambda2": (float, 20.0, "lambda2 weight of the inverse-distance MSE in the total loss"),
    "em_mode": (str, "binary", "entropy form: binary (both terms) or literal (p*log p only)"),
    "threads": (int, 1, "worker cap; kernels are sequential so results do not change"),
    "seed": (int, 0, "phantom RNG seed (PCG64)"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_param(parser, name, choices=None, metavar=None):
    typ, default, help_text = _PARAMS[name]
    parser.add_argument(
        f"--{name.replace('_', '-')}",
        dest=name,
        type=typ,
        default=None,
        choices=choices,
        metavar=metavar,
        help=f"{help_text} (default: {default})",
    )


def _read_config(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{ln}: expected key=value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _PARAMS:
                raise DataError(f"{path}:{ln}: unknown parameter {key!r}")
            values[key] = _PARAMS[key][0](val)
    return values


def _resolve(args, names) -> dict:
    config = _read_config(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for name in names:
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            resolved[name] = cli_val
        elif name in config:
            resolved[name] = config[name]
        else:
            resolved[name] = _PARAMS[name][1]
    return resolved


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path, command, params, inputs, started, extras=None):
    lines = [
        f"command={command}",
        f"version={__version__}",
        f"backend={kernels.backend()}",
        f"output={os.path.basename(out_path)}",
        f"duration_s={time.time() - started:.3f}",
    ]
    for key in sorted(params):
        lines.append(f"param.{key}={params[key]}")
    for name in sorted(inputs):
        lines.append(f"input.{name}={inputs[name]}")
        lines.append(f"input.{name}.sha256={_sha256(inputs[name])}")
    for key in sorted(extras or {}):
        lines.append(f"extra.{key}={extras[key]}")
    _atomic_write(f"{out_path}.manifest.txt", ("\n".join(lines) + "\n").encode())


def _out_dir(args) -> str:
    d = args.out_dir or os.environ.get("SKELPROP_OUTPUT_DIR") or "."
    os.makedirs(d, exist_ok=True)
    return d


def _apply_threads(threads: int):
    # kernels are sequential, so this caps the compiled runtime's worker
    # pool without ever changing results
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    if threads > 1 and kernels.NUMBA_ENABLED:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _print_report(pairs, json_path=None, out_path=None, command="", params=None,
                  inputs=None, started=0.0):
    text = "\n".join(f"{k}={v}" for k, v in pairs) + "\n"
    sys.stdout.write(text)
    if out_path:
        _atomic_write(out_path, text.encode())
        _write_manifest(out_path, command, params or {}, inputs or {}, started)
    if json_path:
        _atomic_write(json_path, (json.dumps(dict(pairs), indent=2) + "\n").encode())
        _write_manifest(json_path, command, params or {}, inputs or {}, started)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_propagate(args) -> int:
    params = _resolve(args, ["sigma", "delta1", "delta2", "gamma", "connectivity",
                             "spatial_weight", "units", "threads"])
    try:
        prop_params = PropagationParams(
            delta1=params["delta1"],
            delta2=params["delta2"],
            gamma=params["gamma"],
            gaussian=GaussianParams(sigma=params["sigma"]),
            geodesic=GeodesicParams(
                connectivity=params["connectivity"],
                spatial_weight=params["spatial_weight"],
            ),
            units=params["units"],
        )
        _apply_threads(params["threads"])
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1

    started = time.time()
    volume = load_volume(args.volume)
    seeds = skeleton_from_mask_file(args.annotation)
    proposal, d_ggd = propagate(volume, seeds, prop_params)
    d_iggd = inverse_geodesic(d_ggd, InverseParams())

    out = _out_dir(args)
    inputs = {"volume": args.volume, "annotation": args.annotation}
    extras = {
        "conflicts": proposal.conflicts,
        "n_foreground": int(proposal.foreground.sum()),
        "n_background": int(proposal.background.sum()),
        "n_unknown": int(proposal.unknown.sum()),
    }
    for name, obj in (
        ("proposal.rvol", proposal),
        ("dggd.rvol", d_ggd),
        ("diggd.rvol", d_iggd),
    ):
        path = os.path.join(out, name)
        save_volume(obj, path)
        _write_manifest(path, "propagate", params, inputs, started, extras)
    print(f"propagate: wrote proposal.rvol dggd.rvol diggd.rvol to {out} "
          f"({extras['conflicts']} fusion conflicts)")
    return 0


def _cmd_skeletonize(args) -> int:
    params = _resolve(args, ["threads"])
    try:
        _apply_threads(params["threads"])
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    started = time.time()
    mask = load_mask(args.mask)
    skeleton = skeletonize(mask)
    fraction = len(skeleton) / mask.n_foreground
    save_volume(skeleton.to_mask(), args.out)
    extras = {
        "n_skeleton_voxels": len(skeleton),
        "n_mask_voxels": mask.n_foreground,
        "skeleton_fraction": f"{fraction:.6f}",
    }
    _write_manifest(args.out, "skeletonize", params, {"mask": args.mask}, started, extras)
    if args.graph_out:
        graph = build_graph(skeleton)
        write_edge_list(graph, args.graph_out)
        _write_manifest(args.graph_out, "skeletonize", params, {"mask": args.mask},
                        started, {"n_branches": graph.n_branches})
    print(f"skeletonize: {len(skeleton)} voxels "
          f"({100.0 * fraction:.2f}% of the mask foreground) -> {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    params = _resolve(args, ["units", "threads"])
    try:
        _apply_threads(params["threads"])
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    started = time.time()
    pred = load_mask(args.pred)
    ref = load_mask(args.ref)
    inputs = {"pred": args.pred, "ref": args.ref}
    if args.ref_skeleton:
        skeleton = skeleton_from_mask_file(args.ref_skeleton)
        if skeleton.geometry.dims != ref.geometry.dims:
            raise DataError("reference skeleton geometry differs from reference mask")
        inputs["ref_skeleton"] = args.ref_skeleton
    else:
        skeleton = skeletonize(ref)
    if params["units"] == "voxels":
        geom = VolumeGeometry(ref.geometry.dims, (1.0, 1.0, 1.0))
        pred = BinaryMask(geom, pred.data)
        ref = BinaryMask(geom, ref.data)
        skeleton = type(skeleton)(geom, skeleton.linear)
    if not args.keep_all_components:
        pred = largest_component(pred)
    graph = build_graph(skeleton, ref.geometry)
    report = compute_metrics(pred, ref, graph)
    pairs = [(k, v) for k, v in report.as_dict().items()]
    _print_report(pairs, args.json, args.out, "metrics", params, inputs, started)
    return 0


def _cmd_losses(args) -> int:
    params = _resolve(args, ["lambda1", "lambda2", "em_mode", "threads"])
    if (args.iggd_pred is None) != (args.iggd_target is None):
        sys.stderr.write("error: --iggd-pred and --iggd-target must be given together\n")
        return 1
    try:
        weights = LossWeights(lambda1=params["lambda1"], lambda2=params["lambda2"])
        _apply_threads(params["threads"])
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    started = time.time()
    pred_vol = load_volume(args.pred)
    pred = PredictionVolume(pred_vol.geometry, pred_vol.data)
    prop_vol = load_volume(args.proposal)
    codes = prop_vol.data
    if not np.isin(codes, (0.0, 1.0, 2.0)).all():
        raise DataError(f"{args.proposal}: proposal voxels must be codes 0, 1 or 2")
    proposal = MaskProposal(prop_vol.geometry, codes.astype(np.uint8))
    inputs = {"pred": args.pred, "proposal": args.proposal}
    iggd_pred = iggd_target = None
    if args.iggd_pred:
        ip = load_volume(args.iggd_pred)
        iggd_pred = PredictionVolume(ip.geometry, ip.data)
        it = load_volume(args.iggd_target)
        iggd_target = DistanceMap(it.geometry, it.data, INVERSE_GEODESIC)
        inputs.update({"iggd_pred": args.iggd_pred, "iggd_target": args.iggd_target})
    report = evaluate_losses(pred, proposal, iggd_pred, iggd_target, weights,
                             em_mode=params["em_mode"])
    pairs = list(report.as_dict().items())
    _print_report(pairs, args.json, args.out, "losses", params, inputs, started)
    return 0


def _cmd_phantom(args) -> int:
    params = _resolve(args, ["seed", "threads"])
    try:
        _apply_threads(params["threads"])
        dims = tuple(args.dims) if args.dims else (args.size,) * 3
        spec = PhantomSpec(
            geometry=VolumeGeometry(dims, tuple(args.spacing)),
            depth=args.depth,
            root_radius=args.root_radius,
            radius_decay=args.radius_decay,
            branch_length=tuple(args.length_range),
            branch_angle=tuple(args.angle_range),
            intensity_fg=args.fg,
            intensity_bg=args.bg,
            blur_sigma=args.blur_sigma,
            noise_sigma=args.noise_sigma,
            seed=params["seed"],
        )
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    started = time.time()
    result = generate(spec)
    out = _out_dir(args)
    spec_echo = {
        "dims": "x".join(map(str, dims)),
        "spacing": "x".join(map(str, spec.geometry.spacing)),
        "depth": spec.depth,
        "root_radius": spec.root_radius,
        "radius_decay": spec.radius_decay,
        "branch_length": f"{spec.branch_length[0]}..{spec.branch_length[1]}",
        "branch_angle": f"{spec.branch_angle[0]}..{spec.branch_angle[1]}",
        "intensity_fg": spec.intensity_fg,
        "intensity_bg": spec.intensity_bg,
        "blur_sigma": spec.blur_sigma,
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "rng": "numpy PCG64",
        "n_branches": len(result.branches),
        "tree_length_mm": f"{result.tree_length_mm:.6f}",
    }
    all_params = dict(params)
    all_params.update({k: v for k, v in spec_echo.items() if k not in ("n_branches",)})
    for name, obj in (
        ("volume.rvol", result.volume),
        ("mask.rvol", result.mask),
        ("skeleton.rvol", result.skeleton.to_mask()),
    ):
        path = os.path.join(out, name)
        save_volume(obj, path)
        _write_manifest(path, "phantom", all_params, {}, started,
                        {"n_branches": len(result.branches)})
    branch_lines = ["# index level length_mm n_voxels voxels x,y,z;..."]
    for b in result.branches:
        vox = ";".join(",".join(str(c) for c in row) for row in b.voxels)
        branch_lines.append(f"{b.index} {b.level} {b.length_mm:.6f} {b.voxels.shape[0]} {vox}")
    branches_path = os.path.join(out, "branches.txt")
    _atomic_write(branches_path, ("\n".join(branch_lines) + "\n").encode())
    _write_manifest(branches_path, "phantom", all_params, {}, started)
    spec_path = os.path.join(out, "spec.txt")
    _atomic_write(
        spec_path, ("\n".join(f"{k}={v}" for k, v in spec_echo.items()) + "\n").encode()
    )
    _write_manifest(spec_path, "phantom", all_params, {}, started)
    print(f"phantom: {len(result.branches)} branches, "
          f"{result.mask.n_foreground} mask voxels -> {out}")
    return 0


class _U8Volume:
    """Minimal container for writing integral volumes back out as uint8."""

    def __init__(self, geometry, data):
        self.geometry = geometry
        self.data = data


def _cmd_convert(args) -> int:
    started = time.time()
    v = load_volume(args.input)
    if args.dtype == "u8":
        data = v.data
        if not np.all(data == np.round(data)) or data.min() < 0 or data.max() > 255:
            raise DataError("volume is not integral in [0, 255]; cannot convert to u8")
        out_obj = _U8Volume(v.geometry, np.asfortranarray(data.astype(np.uint8)))
    else:
        out_obj = v
    save_volume(out_obj, args.output)
    _write_manifest(args.output, "convert", {"dtype": args.dtype},
                    {"input": args.input}, started)
    print(f"convert: {args.input} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="skelprop",
                     description="skeleton-seeded label propagation and evaluation")
    parser.add_argument("--version", action="version", version=f"skelprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="volume + skeleton annotation -> mask proposal, "
                                         "geodesic and inverse-geodesic maps")
    p.add_argument("--volume", required=True, help="intensity volume (.rvol or .nii)")
    p.add_argument("--annotation", required=True,
                   help="skeleton annotation volume (nonzero voxels are the seeds)")
    p.add_argument("--out-dir", default=None, help="output directory "
                   "(default: $SKELPROP_OUTPUT_DIR or '.')")
    p.add_argument("--config", default=None, help="key=value parameter file")
    for name in ("sigma", "delta1", "delta2", "gamma", "spatial_weight", "threads"):
        _add_param(p, name)
    _add_param(p, "connectivity", choices=(6, 26))
    _add_param(p, "units", choices=("mm", "voxels"))
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("skeletonize", help="thin a binary mask to a centerline annotation")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--graph-out", default=None, help="also dump the branch graph edge list")
    p.add_argument("--config", default=None)
    _add_param(p, "threads")
    p.set_defaults(func=_cmd_skeletonize)

    p = sub.add_parser("metrics", help="volumetric and topology metrics of a prediction "
                                       "against a reference")
    p.add_argument("--pred", required=True, help="predicted binary volume")
    p.add_argument("--ref", required=True, help="reference binary volume")
    p.add_argument("--ref-skeleton", default=None,
                   help="reference skeleton volume (derived by thinning when omitted)")
    p.add_argument("--keep-all-components", action="store_true",
                   help="skip the largest-component reduction of the prediction")
    p.add_argument("--out", default=None, help="also write the key=value report here")
    p.add_argument("--json", default=None, help="also write a JSON report here")
    p.add_argument("--config", default=None)
    _add_param(p, "units", choices=("mm", "voxels"))
    _add_param(p, "threads")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("losses", help="evaluate the propagation losses for a prediction")
    p.add_argument("--pred", required=True, help="probability volume in [0, 1]")
    p.add_argument("--proposal", required=True, help="tri-state proposal volume (codes 0/1/2)")
    p.add_argument("--iggd-pred", default=None, help="auxiliary inverse-distance prediction")
    p.add_argument("--iggd-target", default=None, help="inverse-geodesic target map")
    p.add_argument("--out", default=None)
    p.add_argument("--json", default=None)
    p.add_argument("--config", default=None)
    for name in ("lambda1", "lambda2", "threads"):
        _add_param(p, name)
    _add_param(p, "em_mode", choices=("binary", "literal"))
    p.set_defaults(func=_cmd_losses)

    p = sub.add_parser("phantom", help="generate a synthetic branching-tube volume")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--size", type=int, default=64, help="cubic grid edge (default: 64)")
    p.add_argument("--dims", type=int, nargs=3, default=None, metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                   metavar=("SX", "SY", "SZ"))
    p.add_argument("--depth", type=int, default=3, help="branching generations (default: 3)")
    p.add_argument("--root-radius", type=float, default=3.0)
    p.add_argument("--radius-decay", type=float, default=0.8)
    p.add_argument("--length-range", type=float, nargs=2, default=(12.0, 18.0),
                   metavar=("LO", "HI"))
    p.add_argument("--angle-range", type=float, nargs=2, default=(25.0, 50.0),
                   metavar=("LO", "HI"))
    p.add_argument("--fg", type=float, default=1.0, help="foreground intensity")
    p.add_argument("--bg", type=float, default=0.0, help="background intensity")
    p.add_argument("--blur-sigma", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--config", default=None)
    for name in ("seed", "threads"):
        _add_param(p, name)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("convert", help="convert a volume between .rvol and .nii")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dtype", choices=("f32", "u8"), default="f32")
    p.set_defaults(func=_cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DataError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
