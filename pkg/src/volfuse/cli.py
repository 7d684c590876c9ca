"""Command line: generate, fuse, optimize, analyze, reproduce."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import AnalysisError, depth_coded_map, dof_measure, fwhm_vs_depth, write_pgm, write_ppm
from .experiments import EXPERIMENTS, dump_json, run_experiment, write_checked, write_optimization, write_sources
from .fusion import FusionConfig, check_compatible, fuse_volumes
from .manifest import RunManifest
from .metrics import MetricWeights
from .optimizer import CandidateEvaluator, DeConfig, optimize_block_size
from .phantom import PRESET_FOCI_INDEX, PRESETS, BeamModel, SceneError, generate_multifocus, load_scene, preset_scene
from .volume import BlockSpec, VolumeFormatError, bscan_extract, map_project, read_volf

log = logging.getLogger("volfuse")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_bounds(text: str):
    """``lo:hi`` for all axes, or ``lo:hi,lo:hi,lo:hi`` per axis."""
    parts = text.split(",")
    if len(parts) not in (1, 3):
        raise ValueError(f"bounds must be lo:hi or three comma-separated lo:hi pairs, got {text!r}")
    pairs = []
    for p in parts:
        lo, sep, hi = p.partition(":")
        if not sep:
            raise ValueError(f"bounds entry {p!r} is not of the form lo:hi")
        pairs.append((int(lo), int(hi)))
    return tuple(pairs * 3 if len(pairs) == 1 else pairs)


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


def _load_sources(paths, manifest: RunManifest):
    vols = []
    for p in paths:
        vols.append(read_volf(p))
        manifest.add_input(p)
    return vols


def cmd_generate(args) -> None:
    man = RunManifest("generate", args.argv)
    if args.preset:
        scene = preset_scene(args.preset)
        beam = BeamModel()
        extra = {}
        default_index = PRESET_FOCI_INDEX[args.preset]
    else:
        scene, beam = load_scene(args.scene)
        man.add_input(args.scene)
        extra = _load_json(args.scene)
        default_index = extra.get("foci_index")
    dz = scene.spacing[2]
    if args.foci is not None:
        foci_um = _floats(args.foci)
    elif args.foci_index is not None:
        foci_um = [i * dz for i in _floats(args.foci_index)]
    elif "foci_um" in extra:
        foci_um = [float(v) for v in extra["foci_um"]]
    elif default_index is not None:
        foci_um = [float(i) * dz for i in default_index]
    else:
        raise SceneError("foci_um: no focal depths given (use --foci, --foci-index or a scene field)")
    if not foci_um:
        raise SceneError("foci: at least one focal depth is required")
    man.parameters = {"preset": args.preset, "scene": args.scene, "foci_um": foci_um, "beam": beam.to_dict()}
    sources, truth = generate_multifocus(scene, foci_um, beam)
    write_sources(args.out, sources, truth, scene, beam, foci_um)
    man.finish(args.out)
    log.info("wrote %d source volumes and truth to %s", len(sources), args.out)


def cmd_fuse(args) -> None:
    man = RunManifest("fuse", args.argv)
    file_cfg = _load_json(args.config) if args.config else {}
    if args.config:
        man.add_input(args.config)
    if args.block:
        file_cfg["block"] = list(BlockSpec.parse(args.block).as_tuple())
        file_cfg.pop("blocks", None)
    if args.wavelet:
        file_cfg["wavelet"] = args.wavelet
    if "block" not in file_cfg and "blocks" not in file_cfg:
        raise ValueError("fuse needs --block h,w,l or a --config file with block sizes")
    config = FusionConfig.from_dict(file_cfg)
    sources = _load_sources(args.inputs, man)
    check_compatible(sources)
    man.parameters = {"config": config.to_dict()}
    fused, mask = fuse_volumes(sources, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_checked(out / "fused.volf", fused)
    mask.save(out / "selection_mask.json")
    dump_json(out / "fusion_config.json", config.to_dict())
    man.finish(out)


_DE_KEYS = ("population", "mutation", "crossover", "generations", "bounds", "mode", "seed", "stall_generations", "workers")


def cmd_optimize(args) -> None:
    man = RunManifest("optimize", args.argv)
    cfg = _load_json(args.config) if args.config else {}
    if args.config:
        man.add_input(args.config)
    de_kw = {k: cfg[k] for k in _DE_KEYS if k in cfg}
    if "bounds" in de_kw and de_kw["bounds"] is not None:
        de_kw["bounds"] = tuple(tuple(p) for p in de_kw["bounds"])
    weights = MetricWeights(*cfg["weights"]) if "weights" in cfg else MetricWeights()
    flag_map = {
        "population": args.population,
        "mutation": args.mutation,
        "crossover": args.crossover,
        "generations": args.generations,
        "seed": args.seed,
        "stall_generations": args.stall,
        "workers": args.workers,
    }
    de_kw.update({k: v for k, v in flag_map.items() if v is not None})
    if args.bounds:
        de_kw["bounds"] = _parse_bounds(args.bounds)
    if args.mode:
        de_kw["mode"] = args.mode.replace("-", "_")
    if "mode" in de_kw:
        de_kw["mode"] = de_kw["mode"].replace("-", "_")
    if args.weights:
        weights = MetricWeights.parse(args.weights)
    de = DeConfig(**de_kw)
    wavelet = args.wavelet or cfg.get("wavelet", "haar")

    sources = _load_sources(args.inputs, man)
    check_compatible(sources)
    man.seed = de.seed
    man.parameters = {"weights": list(weights.as_tuple()), "de": de.to_dict(), "wavelet": wavelet}
    evaluator = CandidateEvaluator(sources, weights, wavelet)
    config, report, trace = optimize_block_size(sources, weights, de, evaluator)
    fused, mask = fuse_volumes(sources, config)
    write_optimization(args.out, fused, mask, config, report, trace, de)
    man.finish(args.out)
    log.info("best score %.6f with %s", report.total, config.blocks["LLL"])


def cmd_analyze(args) -> None:
    man = RunManifest("analyze", args.argv, {"mode": args.mode, "index": args.index, "axis": args.axis})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vols = _load_sources(args.inputs, man)
    dofs = []
    for path, vol in zip(args.inputs, vols):
        stem = Path(path).stem
        if args.mode == "map":
            write_pgm(out / f"{stem}_map.pgm", map_project(vol, "z"))
        elif args.mode == "depthmap":
            write_ppm(out / f"{stem}_depthmap.ppm", depth_coded_map(vol))
        elif args.mode == "bscan":
            if args.index is None:
                raise ValueError("--mode bscan needs --index")
            img = bscan_extract(vol, args.axis, args.index)
            write_pgm(out / f"{stem}_bscan_{args.axis}{args.index}.pgm", img)
        else:
            curve = fwhm_vs_depth(vol, args.profile_axis)
            curve.save_csv(out / f"{stem}_fwhm.csv")
            if args.mode == "dof":
                res = dof_measure(curve)
                res.save_json(out / f"{stem}_dof.json")
                dofs.append(res)
                print(
                    f"{stem}: DoF = {res.dof_um:.3f} um  [{res.lower_um:.3f}, {res.upper_um:.3f}]  "
                    f"nadir = {res.nadir_fwhm_um:.3f} um  censored = {'yes' if res.censored else 'no'}"
                )
    if len(dofs) >= 2:
        ratio = dofs[-1].dof_um / max(d.dof_um for d in dofs[:-1])
        print(f"DoF ratio (last / max of others) = {ratio:.4f}")
    man.finish(out)


def cmd_reproduce(args) -> None:
    overrides = {}
    for key, value in (
        ("population", args.population),
        ("generations", args.generations),
        ("stall_generations", args.stall),
        ("workers", args.workers),
    ):
        if value is not None:
            overrides[key] = value
    weights = MetricWeights.parse(args.weights) if args.weights else MetricWeights()
    summary = run_experiment(args.experiment, args.out, args.seed, weights, overrides, args.argv)
    if "dof_ratio" in summary:
        print(f"fused/max(source) DoF ratio = {summary['dof_ratio']:.4f}")
    corr = summary["map_correlation_with_truth"]
    print("MAP correlation with truth: " + ", ".join(f"{k} = {v:.4f}" for k, v in corr.items()))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volfuse", description=__doc__)
    p.add_argument("--version", action="version", version=f"volfuse {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize multi-focus phantom volumes")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--scene", help="scene description JSON")
    foci = g.add_mutually_exclusive_group()
    foci.add_argument("--foci", help="focal depths in um, comma separated")
    foci.add_argument("--foci-index", help="focal depths as grid z-indices, comma separated")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fuse", help="fuse volumes with fixed block sizes")
    f.add_argument("inputs", nargs="+")
    f.add_argument("--block", help="shared block size h,w,l")
    f.add_argument("--config", help="fusion config JSON (flags win)")
    f.add_argument("--wavelet")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    o = sub.add_parser("optimize", help="search block sizes with differential evolution, then fuse")
    o.add_argument("inputs", nargs="+")
    o.add_argument("--weights", help="lambda_avg,lambda_en,lambda_ssim (default 0.6,0.3,0.1)")
    o.add_argument("--seed", type=int)
    o.add_argument("--bounds", help="lo:hi for every axis, or three lo:hi pairs")
    o.add_argument("--mode", choices=["shared", "per-subband", "per_subband"])
    o.add_argument("--generations", type=int)
    o.add_argument("--population", type=int)
    o.add_argument("--mutation", type=float)
    o.add_argument("--crossover", type=float)
    o.add_argument("--stall", type=int, help="stop after this many generations without improvement (0 = never)")
    o.add_argument("--workers", type=int)
    o.add_argument("--wavelet")
    o.add_argument("--config", help="optimizer config JSON (flags win)")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    a = sub.add_parser("analyze", help="MAP, depth-coded MAP, B-scan, FWHM and DoF")
    a.add_argument("inputs", nargs="+")
    a.add_argument("--mode", required=True, choices=["fwhm", "dof", "map", "depthmap", "bscan"])
    a.add_argument("--index", type=int, help="lateral index for --mode bscan")
    a.add_argument("--axis", choices=["x", "y"], default="y", help="fixed axis for --mode bscan")
    a.add_argument("--profile-axis", choices=["x", "y"], default="y")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="run a preset experiment end to end")
    r.add_argument("experiment", choices=EXPERIMENTS)
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--weights")
    r.add_argument("--generations", type=int)
    r.add_argument("--population", type=int)
    r.add_argument("--stall", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except (ValueError, OSError, VolumeFormatError, SceneError, AnalysisError) as exc:
        print(f"volfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
