"""End-to-end runs of the two preset experiments (tilted fiber, vessels)."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .analysis import (
    AnalysisError,
    depth_coded_map,
    dof_measure,
    fwhm_vs_depth,
    pearson,
    write_pgm,
    write_ppm,
)
from .fusion import FusionConfig, fuse_volumes
from .manifest import RunManifest
from .metrics import MetricWeights, joint_score
from .optimizer import CandidateEvaluator, DeConfig, optimize_block_size
from .phantom import ACOUSTIC_METADATA, PRESET_FOCI_INDEX, BeamModel, generate_multifocus, preset_scene, scene_to_dict
from .volume import Volume, bscan_extract, map_project, read_volf, write_volf

log = logging.getLogger(__name__)

EXPERIMENTS = tuple(PRESET_FOCI_INDEX)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_checked(path, vol: Volume) -> None:
    write_volf(path, vol)
    back = read_volf(path)
    if back.shape != vol.shape:
        raise OSError(f"{path}: read-back dims {back.shape} differ from {vol.shape}")


def write_sources(out_dir, sources, truth, scene, beam, foci_um) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, v in enumerate(sources):
        p = out_dir / f"sources_{i}.volf"
        write_checked(p, v)
        paths.append(p)
    write_checked(out_dir / "truth.volf", truth)
    meta = scene_to_dict(scene)
    meta["beam"] = beam.to_dict()
    meta["foci_um"] = list(foci_um)
    meta["acoustic_metadata"] = ACOUSTIC_METADATA
    dump_json(out_dir / "scene.json", meta)
    return paths


def write_optimization(out_dir, fused, mask, config: FusionConfig, report, trace, de: DeConfig) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_checked(out_dir / "fused.volf", fused)
    mask.save(out_dir / "selection_mask.json")
    dump_json(out_dir / "best_config.json", config.to_dict())
    dump_json(out_dir / "report.json", {"report": report.to_dict(), "seed": de.seed, "de": de.to_dict()})
    trace.save_csv(out_dir / "trace.csv")
    trace.save_json(out_dir / "trace.json")


def fiber_dof(vol: Volume) -> dict | None:
    try:
        curve = fwhm_vs_depth(vol)
    except AnalysisError as exc:
        log.warning("FWHM scan failed: %s", exc)
        return None
    return {"curve": curve, "dof": dof_measure(curve)}


def run_experiment(
    name: str,
    out_dir,
    seed: int = 7,
    weights: MetricWeights = MetricWeights(),
    de_overrides: dict | None = None,
    argv: list | None = None,
) -> dict:
    """generate -> optimize -> fuse -> analyze; returns the summary dict.

    Each stage writes into its own subdirectory with its own manifest.
    """
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; valid: {', '.join(EXPERIMENTS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    top = RunManifest("reproduce", list(argv or []), {"experiment": name}, seed=seed)

    # generate
    scene = preset_scene(name)
    beam = BeamModel()
    foci_index = PRESET_FOCI_INDEX[name]
    foci_um = [i * scene.spacing[2] for i in foci_index]
    man = RunManifest("generate", list(argv or []), {"preset": name, "foci_um": foci_um}, seed=seed)
    sources, truth = generate_multifocus(scene, foci_um, beam)
    write_sources(out / "data", sources, truth, scene, beam, foci_um)
    man.finish(out / "data")
    # work from what is on disk so every later stage sees float32-rounded data
    sources = [read_volf(out / "data" / f"sources_{i}.volf") for i in range(len(sources))]
    truth = read_volf(out / "data" / "truth.volf")

    # optimize (fuses with the winner)
    de = DeConfig(seed=seed, **(de_overrides or {}))
    man = RunManifest("optimize", list(argv or []), {"weights": list(weights.as_tuple()), "de": de.to_dict()}, seed=seed)
    for i in range(len(sources)):
        man.add_input(out / "data" / f"sources_{i}.volf")
    evaluator = CandidateEvaluator(sources, weights)
    config, report, trace = optimize_block_size(sources, weights, de, evaluator)
    fused, mask = fuse_volumes(sources, config)
    write_optimization(out / "optimize", fused, mask, config, report, trace, de)
    man.finish(out / "optimize")
    fused = read_volf(out / "optimize" / "fused.volf")

    # analyze
    adir = out / "analysis"
    adir.mkdir(exist_ok=True)
    man = RunManifest("analyze", list(argv or []), {"modes": ["map", "depthmap", "bscan", "fwhm", "dof"]}, seed=seed)
    named = {f"source_{i}": v for i, v in enumerate(sources)}
    named["fused"] = fused
    named["truth"] = truth
    truth_map = map_project(truth)
    bscan_index = truth.ny // 2
    summary = {
        "experiment": name,
        "seed": seed,
        "foci_index": list(foci_index),
        "foci_um": foci_um,
        "weights": list(weights.as_tuple()),
        "best_config": config.to_dict(),
        "fused_report": report.to_dict(),
        "source_reports": [],
        "map_correlation_with_truth": {},
        "trace_generations": len(trace.generations),
        "trace_evaluations": trace.evaluations,
    }
    source_maps = [map_project(v) for v in sources]
    for i, m in enumerate(source_maps):
        summary["source_reports"].append(joint_score(m, source_maps, weights).to_dict())

    for label, vol in named.items():
        m = map_project(vol)
        write_pgm(adir / f"{label}_map.pgm", m)
        write_ppm(adir / f"{label}_depthmap.ppm", depth_coded_map(vol))
        write_pgm(adir / f"{label}_bscan_y{bscan_index}.pgm", bscan_extract(vol, "y", bscan_index))
        if label != "truth":
            summary["map_correlation_with_truth"][label] = pearson(m, truth_map)

    if name == "fiber":
        dofs = {}
        for label in list(named)[:-1]:
            res = fiber_dof(named[label])
            if res is None:
                continue
            res["curve"].save_csv(adir / f"{label}_fwhm.csv")
            res["dof"].save_json(adir / f"{label}_dof.json")
            dofs[label] = res["dof"]
        src = [dofs[k] for k in dofs if k.startswith("source_")]
        summary["dof"] = {k: v.to_dict() for k, v in dofs.items()}
        if src and "fused" in dofs:
            best_src = max(d.dof_um for d in src)
            summary["dof_ratio"] = dofs["fused"].dof_um / best_src
            summary["nadir_ratio"] = dofs["fused"].nadir_fwhm_um / min(d.nadir_fwhm_um for d in src)
    man.finish(adir)

    dump_json(out / "summary.json", summary)
    top.finish(out)
    return summary
