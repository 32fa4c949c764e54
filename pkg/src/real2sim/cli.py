"""Command-line entry point: ``real2sim <command>`` or ``python -m real2sim <command>``.

Exit codes: 0 success, 1 unexpected error, 2 missing input file, 3 schema or
configuration violation, 4 solver failure. Failures print one JSON line on
stderr: ``{"error": <kind>, "message": <text>, "exit_code": <n>}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as rio
from .config import ConfigError, PipelineConfig, load_config
from .kinematics import default_robot, default_skeleton, load_tree
from .nlls import SolverConfig, SolverError

log = logging.getLogger("real2sim")

EXIT_OK, EXIT_OTHER, EXIT_MISSING, EXIT_SCHEMA, EXIT_SOLVER = 0, 1, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _out(args, default: str) -> Path:
    return Path(args.out if getattr(args, "out", None) else default)


def _seed(args, default: int = 0) -> int:
    s = getattr(args, "seed", None)
    return default if s is None else int(s)


def _solver(section) -> SolverConfig:
    return SolverConfig(max_iterations=section.max_iterations, cost_tol=section.cost_tol)


def _write_json(path: Path, kind: str, payload: dict) -> Path:
    return rio.write_document(path, kind, payload)


def _joints_from(path) -> np.ndarray:
    """Joint trajectory from a reconstruction, a clip with ground truth, or a joints document."""
    doc = rio.read_document(path)
    kind = doc.get("kind")
    skeleton = default_skeleton()
    if kind == "reconstruction":
        sol, _ = rio.read_reconstruction(path)
        return sol.joints(skeleton)
    if kind == "clip":
        clip = rio.read_clip(path)
        if clip.truth is None:
            raise rio.SchemaError(f"{path}: clip carries no ground truth")
        return clip.truth.joints(skeleton)
    if kind == "joints":
        return np.asarray(doc["joints"], dtype=float)
    raise rio.SchemaError(f"{path}: cannot read joints from a '{kind}' document")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> dict:
    from .synth import SynthConfig, generate

    sc = SynthConfig(frames=args.frames, sigma_2d=args.sigma_2d, sigma_3d=args.sigma_3d,
                     theta_noise=args.theta_noise, alpha=args.alpha)
    clip = generate(args.scenario, _seed(args), sc)
    path = rio.write_clip(clip, _out(args, f"{args.scenario}-{_seed(args)}.json"))
    return {"clip": str(path), "frames": sc.frames, "alpha": clip.truth.alpha}


def cmd_reconstruct(args, cfg: PipelineConfig) -> dict:
    from .reconstruction import gravity_align, reconstruct

    clip = rio.read_clip(args.clip)
    sol = reconstruct(clip.track, clip.observations, default_skeleton(), clip.theta_init, cfg.reconstruction,
                      _solver(cfg.reconstruction_solver))
    sol, _, _ = gravity_align(sol, roll=clip.roll, pitch=clip.pitch, R_cam_world=clip.track.R[0])
    path = rio.write_reconstruction(sol, _out(args, "reconstruction.json"), clip.fps, clip.observations.contacts)
    out = {"reconstruction": str(path), "alpha": sol.alpha, "iterations": sol.report.iterations}
    if clip.truth is not None:
        out["alpha_error"] = abs(sol.alpha / clip.truth.alpha - 1.0)
    return out


def cmd_scene(args, cfg: PipelineConfig) -> dict:
    from .scene import process_scene, write_heightfield, write_obj

    clip = rio.read_clip(args.clip)
    sol, _ = rio.read_reconstruction(args.reconstruction)
    if clip.track.depth is None:
        raise rio.SchemaError(f"{args.clip}: clip has no depth maps")
    sc = cfg.scene
    mask = clip.truth.human_mask if (sc.use_human_mask and clip.truth is not None) else None
    res = process_scene(clip.track, sol.alpha, sol.joints(default_skeleton()), rotation=sol.gravity,
                        human_mask=mask, tau_grad=sc.tau_grad, box=sc.box, voxel=sc.voxel, cap=sc.cap, cell=sc.cell)
    out_dir = _out(args, "scene")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_heightfield(res.field, out_dir / "heightfield.json")
    write_obj(res.mesh, out_dir / "terrain.obj")
    rio.write_cloud(res.cloud.points, out_dir / "cloud.json")
    return {"heightfield": str(out_dir / "heightfield.json"), "mesh": str(out_dir / "terrain.obj"),
            "points": len(res.cloud), "input_points": res.input_points, "triangles": len(res.mesh.triangles)}


def _flat_floor_shift(joints, skeleton, contacts) -> float:
    """Height of a flat floor under the source feet (median in-contact foot height)."""
    idx = skeleton.indices(skeleton.foot_links)
    z = joints[:, idx, 2]
    c = np.asarray(contacts, dtype=bool)
    return float(np.median(z[c])) if c.any() else float(np.min(z))


def cmd_retarget(args, cfg: PipelineConfig) -> dict:
    from .retarget import RetargetProblem, solve_retarget
    from .scene import read_heightfield

    sol, doc = rio.read_reconstruction(args.reconstruction)
    skeleton = default_skeleton()
    robot = load_tree(args.robot) if args.robot else default_robot()
    joints = sol.joints(skeleton)
    contacts = np.asarray(doc["contacts"], dtype=bool)
    field = None
    if args.heightfield:
        if not Path(args.heightfield).exists():
            raise FileNotFoundError(args.heightfield)
        field = read_heightfield(args.heightfield)
    else:
        joints = joints - np.array([0.0, 0.0, _flat_floor_shift(joints, skeleton, contacts)])
    problem = RetargetProblem.from_human(joints, skeleton, robot, heightfield=field, contacts=contacts,
                                         weights=cfg.retarget)
    res = solve_retarget(problem, _solver(cfg.retarget_solver))
    path = rio.write_retarget(res, _out(args, "retarget.json"), contacts, float(doc["fps"]), robot.name)
    return {"retarget": str(path), "cost": res.report.final_cost, "iterations": res.report.iterations,
            "skating": res.diagnostics["skating"]}


def cmd_rewards(args, cfg: PipelineConfig) -> dict:
    from .tracking import (KinematicClip, ObservationLayout, TrackingSpec, build_observation, check_termination,
                           compute_reward, playback, reference_frames)
    from .tracking.rewards import AirTimeTracker, TERMINATION_THRESHOLDS
    from .scene import read_heightfield, sample_patch
    from .geometry import yaw_of

    d = rio.read_retarget(args.retarget)
    robot = load_tree(args.robot) if args.robot else default_robot()
    if d["q"].shape[1] != robot.n_dof:
        raise rio.SchemaError("retarget file does not match the robot")
    dt = 1.0 / float(d["fps"])
    clip = KinematicClip(d["root_R"], d["root_t"], d["q"], d["contacts"], dt)
    refs = reference_frames(robot, clip)
    rng = np.random.default_rng(_seed(args))
    snaps = playback(robot, clip, rng, q_noise=args.q_noise, root_noise=args.root_noise)
    spec = TrackingSpec.from_tree(robot)
    field = read_heightfield(args.heightfield) if args.heightfield else None
    threshold = TERMINATION_THRESHOLDS[cfg.termination]
    layout = ObservationLayout.for_robot("critic", robot, cfg.history)
    air = AirTimeTracker(robot.n_feet, dt)
    totals, terms, terminated_at = [], {}, None
    for k, (s, r) in enumerate(zip(snaps, refs)):
        done = check_termination(s, r, threshold, spec.tracked)
        b = compute_reward(s, r, cfg.rewards, spec, air=air.update(s.contacts), terminated=done)
        totals.append(b.total)
        for name, v in b.terms.items():
            terms.setdefault(name, []).append(v)
        patch = sample_patch(field, s.root_pos, float(yaw_of(s.root_R))) if field is not None else np.zeros((11, 11))
        obs = build_observation(snaps[max(0, k - cfg.history + 1):k + 1], r, patch, layout)
        if not np.all(np.isfinite(obs)):
            raise rio.SchemaError(f"non-finite observation at step {k}")
        if done:
            terminated_at = k
            break
    path = _write_json(_out(args, "rewards.json"), "rewards", {
        "steps": len(totals), "terminated_at": terminated_at, "threshold": threshold,
        "total": np.array(totals), "terms": {k: np.array(v) for k, v in terms.items()},
        "mean_terms": {k: float(np.mean(v)) for k, v in terms.items()},
        "observation_dims": {m: ObservationLayout.for_robot(m, robot, cfg.history).dim
                             for m in ("mpt", "tracking", "distill", "critic")}})
    return {"rewards": str(path), "steps": len(totals), "mean_total": float(np.mean(totals)),
            "terminated_at": terminated_at}


def cmd_eval(args, cfg: PipelineConfig) -> dict:
    from .metrics import chamfer, evaluate

    pred = _joints_from(args.pred)
    gt = _joints_from(args.gt)
    rep = evaluate(pred, gt)
    if args.pred_cloud or args.gt_cloud:
        if not (args.pred_cloud and args.gt_cloud):
            raise ValueError("--pred-cloud and --gt-cloud go together")
        rep.chamfer = chamfer(rio.read_cloud(args.pred_cloud), rio.read_cloud(args.gt_cloud))
    path = _write_json(_out(args, "metrics.json"), "metrics", {
        "wa_mpjpe_mm": rep.wa_mpjpe, "w_mpjpe_mm": rep.w_mpjpe, "chamfer_m": rep.chamfer,
        "wa_segments_mm": rep.wa_segments, "w_segments_mm": rep.w_segments})
    return {"metrics": str(path), "wa_mpjpe_mm": rep.wa_mpjpe, "w_mpjpe_mm": rep.w_mpjpe, "chamfer_m": rep.chamfer}


def cmd_randomize(args, cfg: PipelineConfig) -> dict:
    from .tracking import EpisodeRandomizer, draw_fields, field_bounds

    rc = cfg.randomization
    rng = np.random.default_rng(_seed(args))
    draws = draw_fields(rc, rng, args.n)
    bounds = field_bounds(rc)
    violations = {k: int(np.sum((draws[k] < lo) | (draws[k] > hi))) for k, (lo, hi) in bounds.items()}
    ep = EpisodeRandomizer(rc, rng)
    pushes = [s for s in range(args.episode_steps) if ep.push(s) is not None]
    for _ in range(args.episode_steps):
        ep.odometry(np.zeros(2), 0.0)
    path = _write_json(_out(args, "randomization.json"), "randomization", {
        "n": args.n, "draws": draws, "bounds": {k: list(v) for k, v in bounds.items()},
        "violations": violations,
        "summary": {k: {"min": float(np.min(v)), "max": float(np.max(v)), "mean": float(np.mean(v))}
                    for k, v in draws.items()},
        "episode": {"steps": args.episode_steps, "push_steps": pushes, "odom_holds": ep.odom_holds}})
    return {"randomization": str(path), "n": args.n, "violations": sum(violations.values())}


def cmd_manifest(args, cfg: PipelineConfig) -> dict:
    from .manifest import REFERENCE_COUNTS, REFERENCE_TOTAL, DatasetManifest, check_counts, manifest_from_clips

    if args.check:
        m = DatasetManifest.read(args.check)
        check_counts(m.counts(), m.total)
        return {"manifest": args.check, "total": m.total, "counts": m.counts()}
    if not args.clips:
        check_counts(REFERENCE_COUNTS, REFERENCE_TOTAL)
        return {"reference_counts": REFERENCE_COUNTS, "total": REFERENCE_TOTAL}
    m = manifest_from_clips(args.clips)
    check_counts(m.counts(), m.total)
    path = m.write(_out(args, "manifest.json"))
    return {"manifest": str(path), "total": m.total, "counts": m.counts()}


COMMANDS = {"synth": cmd_synth, "reconstruct": cmd_reconstruct, "scene": cmd_scene, "retarget": cmd_retarget,
            "rewards": cmd_rewards, "eval": cmd_eval, "randomize": cmd_randomize, "manifest": cmd_manifest}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="pipeline configuration (JSON)")
    p.add_argument("--seed", type=int, default=d, help="random seed")
    p.add_argument("--out", default=d, help="output path")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    from .synth import SCENARIOS

    p = argparse.ArgumentParser(prog="real2sim", description="Video-to-robot motion preparation toolkit.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic clip with ground truth")
    s.add_argument("scenario", choices=SCENARIOS)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--sigma-2d", type=float, default=2.0)
    s.add_argument("--sigma-3d", type=float, default=0.02)
    s.add_argument("--theta-noise", type=float, default=0.1)
    s.add_argument("--alpha", type=float, default=None, help="fix the hidden scene scale")

    s = sub.add_parser("reconstruct", help="recover scale, root trajectory and pose from a clip")
    s.add_argument("clip")

    s = sub.add_parser("scene", help="point cloud, heightfield and mesh from depth")
    s.add_argument("clip")
    s.add_argument("reconstruction")

    s = sub.add_parser("retarget", help="map a reconstructed human motion onto the robot")
    s.add_argument("reconstruction")
    s.add_argument("--heightfield", default=None)
    s.add_argument("--robot", default=None, help="robot description JSON (default: bundled G1-like)")

    s = sub.add_parser("rewards", help="replay a retargeted motion and evaluate tracking rewards")
    s.add_argument("retarget")
    s.add_argument("--heightfield", default=None)
    s.add_argument("--robot", default=None)
    s.add_argument("--q-noise", type=float, default=0.02, help="joint perturbation std (rad)")
    s.add_argument("--root-noise", type=float, default=0.01, help="root perturbation std (m, rad)")

    s = sub.add_parser("eval", help="W-MPJPE, WA-MPJPE and Chamfer distance")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--pred-cloud", default=None)
    s.add_argument("--gt-cloud", default=None)

    s = sub.add_parser("randomize", help="sample domain-randomization draws")
    s.add_argument("-n", "--n", type=int, default=1000)
    s.add_argument("--episode-steps", type=int, default=1500)

    s = sub.add_parser("manifest", help="build or check a dataset manifest")
    s.add_argument("clips", nargs="*")
    s.add_argument("--check", default=None, help="validate an existing manifest instead")

    for sp in sub.choices.values():
        _global_flags(sp, suppress=True)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        summary = COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        return _fail("missing_file", exc, EXIT_MISSING)
    except (rio.SchemaError, ConfigError) as exc:
        return _fail("schema", exc, EXIT_SCHEMA)
    except SolverError as exc:
        return _fail("solver", exc, EXIT_SOLVER)
    except RuntimeError as exc:
        # reconstruction and retargeting wrap solver failures in RuntimeError subclasses
        from .reconstruction import ReconstructionError
        from .retarget import RetargetError
        if isinstance(exc, (ReconstructionError, RetargetError)):
            return _fail("solver", exc, EXIT_SOLVER)
        return _fail("error", exc, EXIT_OTHER)
    except Exception as exc:  # noqa: BLE001 - surface anything else as exit 1
        return _fail("error", exc, EXIT_OTHER)
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
