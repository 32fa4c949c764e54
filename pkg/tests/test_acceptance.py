"""Acceptance suite: one test per criterion, each recorded as a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the summary lines are printed at
the end of the session (and inline with ``-s``).
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import smooth_robot_motion
from real2sim import scene
from real2sim.kinematics import default_robot, default_skeleton
from real2sim.metrics import chamfer, w_mpjpe, wa_mpjpe
from real2sim.nlls import ResidualBlock, solve
from real2sim.reconstruction import (ReconProblem, fit_plane_ransac, gravity_align, gravity_rotation, initialize,
                                     reconstruct)
from real2sim.reconstruction import build_blocks as recon_blocks
from real2sim.retarget import (RetargetProblem, RetargetWeights, _Model, initial_variables, robot_as_source,
                               solve_retarget, source_skating)
from real2sim.retarget import build_blocks as retarget_blocks
from real2sim.scene import HeightField, fill_holes, mesh_edge_counts, process_scene, sample_patch, voxel_downsample
from real2sim.synth import SCENARIOS, SynthConfig, generate
from real2sim.geometry import rot_z, rotvec_to_matrix
from real2sim.tracking import (EpisodeRandomizer, ObservationLayout, RandomizationConfig, RewardConfig, TrackingSpec,
                               KinematicClip, check_termination, compute_reward, draw_fields, field_bounds,
                               reference_frames, snapshot_at_reference)
from real2sim.tracking.rewards import TRACKING_TERMS
from real2sim.tracking.state import StateSnapshot

ROBOT = default_robot()
SKELETON = default_skeleton()


def angle_to_up_deg(n):
    n = np.asarray(n) / np.linalg.norm(n)
    return float(np.degrees(np.arccos(min(1.0, abs(n[2])))))


# ---------------------------------------------------------------------------
# 1. solver
# ---------------------------------------------------------------------------

def directional_check(blocks, sample, rng, points=100, directions=2, h=1e-6):
    """Worst relative mismatch between J v and a central difference along v, per block.

    All blocks share each perturbed parameter vector, so the forward
    kinematics behind them is evaluated once per perturbation.
    """
    worst = {b.name: 0.0 for b in blocks if b.jacobian is not None}
    checked = [b for b in blocks if b.jacobian is not None]
    for _ in range(points):
        x = sample()
        jac = {}
        for b in checked:
            J = b.jacobian(x[b.indices])
            jac[b.name] = J.toarray() if hasattr(J, "toarray") else np.asarray(J, dtype=float)
        for _ in range(directions):
            v = rng.normal(size=x.size)
            v /= np.linalg.norm(v)
            step = h * max(1.0, np.abs(x).max())
            plus = {b.name: b.raw(x[b.indices] + step * v[b.indices]) for b in checked}
            minus = {b.name: b.raw(x[b.indices] - step * v[b.indices]) for b in checked}
            for b in checked:
                fd = (plus[b.name] - minus[b.name]) / (2 * step)
                an = jac[b.name] @ v[b.indices]
                scale = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-8)
                worst[b.name] = max(worst[b.name], float(np.linalg.norm(an - fd) / scale))
    return worst


def retarget_check_problem(T=2):
    R, t, q = smooth_robot_motion(ROBOT, T, seed=3)
    src = robot_as_source(ROBOT, SKELETON, R, t, q)
    xs = np.linspace(-3, 3, 61)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    field = HeightField((-3.05, -3.05), 0.1, 0.2 * np.sin(X) + 0.1 * Y + 0.9)
    contacts = np.ones((T, 2), dtype=bool)
    prob = RetargetProblem.from_human(src, SKELETON, ROBOT, heightfield=field, contacts=contacts)
    init = initial_variables(prob)
    model = _Model(prob, init.root_R)
    return prob, init, model, q


def test_criterion_1_solver(criterion):
    with criterion(1, "solver correctness") as c:
        t0 = time.perf_counter()
        rosen = [ResidualBlock("rosen_a", [0, 1], lambda x: [10 * (x[1] - x[0] ** 2)], lambda x: [[-20 * x[0], 10.0]]),
                 ResidualBlock("rosen_b", [0], lambda x: [1 - x[0]], lambda x: [[-1.0]])]
        x, _ = solve(rosen, [-1.2, 1.0])
        err = float(np.abs(x - 1).max())
        c.check(err < 1e-6, f"Rosenbrock |x - (1,1)| = {err:.1e}")

        rng = np.random.default_rng(0)
        worst = directional_check(rosen, lambda: rng.uniform(-2, 2, size=2), rng)

        prob, init, model, q = retarget_check_problem()
        lay = model.layout
        T = prob.n_frames
        blocks = retarget_blocks(prob, model)

        def retarget_point():
            return lay.pack(rng.normal(size=lay.E) * 0.1, init.root_t + rng.normal(size=(T, 3)) * 0.05,
                            rng.normal(size=(T, 3)) * 0.1, q + rng.normal(size=q.shape) * 0.5)

        worst.update(directional_check(blocks, retarget_point, rng))

        clip = generate("flat-walk", 0, SynthConfig(frames=2))
        init_r = initialize(clip.track, clip.observations, SKELETON, clip.theta_init)
        rblocks, x0, _ = recon_blocks(ReconProblem(clip.track, clip.observations, SKELETON, init_r))

        def recon_point():
            x = x0.copy()
            x[0] *= rng.uniform(0.8, 1.2)
            x[1:] += rng.normal(size=x.size - 1) * 0.05
            return x

        worst.update(directional_check(rblocks, recon_point, rng))
        elapsed = time.perf_counter() - t0
        bad = {k: v for k, v in worst.items() if not v < 1e-4}
        c.check(not bad, f"{len(worst)} blocks x 100 points, worst relative mismatch "
                         f"{max(worst.values()):.1e}" + (f" (failing: {bad})" if bad else ""))
        c.check(elapsed < 5.0, f"runtime {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. reconstruction
# ---------------------------------------------------------------------------

def recovery(clip):
    t0 = time.perf_counter()
    sol = reconstruct(clip.track, clip.observations, SKELETON, clip.theta_init)
    elapsed = time.perf_counter() - t0
    a_err = abs(sol.alpha / clip.truth.alpha - 1)
    j_err = float(np.linalg.norm(sol.joints(SKELETON) - clip.truth.joints(SKELETON), axis=-1).mean())
    return a_err, j_err, elapsed


def test_criterion_2_reconstruction(criterion):
    with criterion(2, "synthetic reconstruction recovery") as c:
        passes, slowest, rows = 0, 0.0, []
        for seed in range(10):
            a_err, j_err, elapsed = recovery(generate("flat-walk", seed, SynthConfig(sigma_2d=2.0, sigma_3d=0.02)))
            passes += a_err < 0.03 and j_err < 0.030
            slowest = max(slowest, elapsed)
            rows.append(f"{a_err * 100:.1f}%/{j_err * 1000:.0f}mm")
        c.check(passes >= 9, f"noisy {passes}/10 within 3% and 30 mm [{', '.join(rows)}]")
        a_err, j_err, elapsed = recovery(generate("flat-walk", 0, SynthConfig(sigma_2d=0.0, sigma_3d=0.0)))
        c.check(a_err < 0.01 and j_err < 0.005, f"noiseless alpha {a_err * 100:.2f}%, joints {j_err * 1000:.2f} mm")
        slowest = max(slowest, elapsed)
        c.check(slowest < 60.0, f"slowest clip {slowest:.1f}s")


# ---------------------------------------------------------------------------
# 3. gravity alignment
# ---------------------------------------------------------------------------

def tilted_camera(roll, pitch, azimuth):
    """World-to-camera rotation looking along ``azimuth``, pitched down and rolled."""
    f = np.array([np.cos(pitch) * np.cos(azimuth), np.cos(pitch) * np.sin(azimuth), -np.sin(pitch)])
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return rot_z(roll).T @ np.stack([right, down, f])


def test_criterion_3_gravity(criterion):
    with criterion(3, "gravity alignment") as c:
        rng = np.random.default_rng(0)
        worst = 0.0
        grid = np.linspace(-0.5, 0.5, 5)
        for roll in grid:
            for pitch in grid:
                R = tilted_camera(roll, pitch, rng.uniform(-np.pi, np.pi))
                t = rng.normal(size=3)
                floor = np.column_stack([rng.uniform(-3, 3, size=(400, 2)), rng.normal(scale=0.003, size=400)])
                clutter = rng.uniform([-1, -1, 0.2], [1, 1, 1.8], size=(60, 3))
                pts = np.concatenate([floor, clutter]) @ R.T + t  # first-camera frame
                G = gravity_rotation(np.eye(3), roll, pitch)
                n, _ = fit_plane_ransac(pts @ G.T, np.random.default_rng(1), threshold=0.02)
                worst = max(worst, angle_to_up_deg(n))
        c.check(worst < 0.5, f"25 roll/pitch pairs in [-0.5, 0.5] rad, worst floor tilt {worst:.3f} deg")

        worst = 0.0
        for seed in range(5):
            clip = generate("stairs-up", seed, SynthConfig(frames=5, max_roll=0.5))
            tr = clip.truth
            G = gravity_rotation(clip.track.R[0], clip.roll, clip.pitch)
            cloud = scene.cloud_from_track(clip.track, tr.alpha)
            W = np.linalg.inv(tr.world_to_recon)
            world_z = (cloud.points @ W[:3, :3].T + W[:3, 3])[:, 2]
            floor = cloud.points[np.abs(world_z) < 1e-6] @ G.T
            n, _ = fit_plane_ransac(floor, np.random.default_rng(2))
            worst = max(worst, angle_to_up_deg(n))
        c.check(worst < 0.5, f"rendered scenes with roll up to 0.5 rad, worst floor tilt {worst:.3f} deg")


# ---------------------------------------------------------------------------
# 4. scene processing
# ---------------------------------------------------------------------------

def voxel_counts(points, voxel):
    _, counts = np.unique(np.floor(points / voxel + 1e-9), axis=0, return_counts=True)
    return counts


def interior_edges_ok(field, mesh):
    counts = mesh_edge_counts(mesh)
    if not set(counts.values()) <= {1, 2}:
        return False, 0
    occ = np.isfinite(field.z)
    nx, ny = occ.shape
    interior = np.zeros_like(occ)
    interior[1:-1, 1:-1] = np.all([occ[1 + di:nx - 1 + di, 1 + dj:ny - 1 + dj]
                                   for di in (-1, 0, 1) for dj in (-1, 0, 1)], axis=0)
    vi = np.round((mesh.vertices[:, 0] - field.origin[0]) / field.cell - 0.5).astype(int)
    vj = np.round((mesh.vertices[:, 1] - field.origin[1]) / field.cell - 0.5).astype(int)
    inner = interior[vi, vj]
    touched = [n for (a, b), n in counts.items() if inner[a] or inner[b]]
    return bool(touched) and all(n == 2 for n in touched), len(touched)


def test_criterion_4_scene(criterion):
    with criterion(4, "scene processing") as c:
        rng = np.random.default_rng(0)
        cap_ok = idem_ok = patch_ok = mesh_ok = True
        n_queries = n_edges = 0
        for seed, scenario in enumerate(SCENARIOS):
            clip = generate(scenario, seed)
            tr = clip.truth
            G = gravity_rotation(clip.track.R[0], clip.roll, clip.pitch)
            joints = tr.joints(SKELETON) @ G.T
            res = process_scene(clip.track, tr.alpha, joints, rotation=G, human_mask=tr.human_mask)
            cap_ok &= bool(voxel_counts(res.cloud.points, 0.1).max() <= 20)
            again = voxel_downsample(res.cloud, 0.1, 20)
            idem_ok &= np.array_equal(again.points, res.cloud.points)
            field = res.field
            lo = np.array(field.origin) - 2.0
            hi = np.array(field.origin) + np.array(field.shape) * field.cell + 2.0
            for _ in range(400):
                p = sample_patch(field, rng.uniform(lo, hi), rng.uniform(-np.pi, np.pi))
                patch_ok &= p.shape == (11, 11) and p.size == 121 and bool(np.all(np.isfinite(p)))
                n_queries += 1
            ok, n = interior_edges_ok(field, res.mesh)
            mesh_ok &= ok
            n_edges += n
        # a random cloud at several densities and caps
        for cap in (1, 3, 20):
            pts = rng.uniform(-1, 1, size=(20000, 3))
            out = voxel_downsample(scene.PointCloud(pts), 0.1, cap)
            cap_ok &= bool(voxel_counts(out.points, 0.1).max() <= cap)
            idem_ok &= np.array_equal(voxel_downsample(out, 0.1, cap).points, out.points)
        c.check(cap_ok, "every voxel holds at most its cap (5 scenes, 3 random clouds)")
        c.check(idem_ok, "downsampling a capped cloud is the identity")

        xs = (np.arange(40) + 0.5) * 0.1
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        truth = 0.3 * np.sin(X) + 0.2 * np.cos(1.5 * Y) + 0.05 * X * Y
        rms = []
        for seed in range(5):
            holes = np.random.default_rng(seed).uniform(size=truth.shape) < 0.2
            holes[[0, -1], :] = holes[:, [0, -1]] = False
            z = np.where(holes, np.nan, truth)
            out = fill_holes(HeightField((0.0, 0.0), 0.1, z))
            rms.append(np.sqrt(np.mean((out.z[holes] - truth[holes]) ** 2)))
        c.check(max(rms) < 0.05, f"hole fill RMS worst {max(rms):.4f} m")
        c.check(patch_ok, f"{n_queries} patch queries each gave 121 finite values")
        c.check(mesh_ok, f"{n_edges} interior mesh edges each shared by exactly 2 triangles")


# ---------------------------------------------------------------------------
# 5. retargeting
# ---------------------------------------------------------------------------

MOTION_ONLY = dict(position=1.0, angle=1.0, scale_reg=1.0, anchor_xy=0.1, anchor_z=0.01)


def pipeline_source(clip):
    """Reconstruct, gravity-align and process the scene the way the command line does."""
    sol = reconstruct(clip.track, clip.observations, SKELETON, clip.theta_init)
    sol, _, _ = gravity_align(sol, roll=clip.roll, pitch=clip.pitch, R_cam_world=clip.track.R[0])
    joints = sol.joints(SKELETON)
    res = process_scene(clip.track, sol.alpha, joints, rotation=sol.gravity, human_mask=clip.truth.human_mask)
    return joints, res.field


def test_criterion_5_retargeting(criterion):
    with criterion(5, "retargeting identity oracle") as c:
        R, t, q = smooth_robot_motion(ROBOT, 40, seed=0)
        src = robot_as_source(ROBOT, SKELETON, R, t, q)
        prob = RetargetProblem.from_human(src, SKELETON, ROBOT, weights=RetargetWeights.only(**MOTION_ONLY))
        res = solve_retarget(prob)
        dq, ds = float(np.abs(res.q - q).max()), float(np.abs(res.scale - 1).max())
        c.check(dq < 1e-3 and ds < 1e-3, f"self-retarget |dq| {dq:.1e} rad, |ds| {ds:.1e}")

        w = RetargetWeights.only(**{**MOTION_ONLY, "scale_reg": 0.0})
        res = solve_retarget(RetargetProblem.from_human(src * 1.2, SKELETON, ROBOT, weights=w))
        ds = float(np.abs(res.scale - 1.2).max())
        c.check(ds <= 0.05, f"x1.2 source |s - 1.2| {ds:.3f}")

        rows, ok = [], True
        for scenario in SCENARIOS:
            clip = generate(scenario, 0)
            joints, field = pipeline_source(clip)
            prob = RetargetProblem.from_human(joints, SKELETON, ROBOT, heightfield=field,
                                              contacts=clip.observations.contacts)
            out = solve_retarget(prob).diagnostics["skating"]
            src_sk = source_skating(prob, SKELETON)
            ok &= out <= src_sk
            rows.append(f"{scenario} {src_sk * 1000:.1f}->{out * 1000:.2f}")
        c.check(ok, "skating mm/frame source->output: " + ", ".join(rows))

        clip = generate("flat-walk", 1, SynthConfig(frames=300))
        joints, field = pipeline_source(clip)
        prob = RetargetProblem.from_human(joints, SKELETON, ROBOT, heightfield=field,
                                          contacts=clip.observations.contacts)
        t0 = time.perf_counter()
        solve_retarget(prob)
        elapsed = time.perf_counter() - t0
        c.check(elapsed < 120.0, f"300-frame retarget {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6-8. tracking kit
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def reference():
    T = 20
    R, t, q = smooth_robot_motion(ROBOT, T, seed=3, fps=50.0)
    mid, half = 0.5 * (ROBOT.lower + ROBOT.upper), 0.5 * (ROBOT.upper - ROBOT.lower)
    q = np.clip(q, mid - 0.95 * half, mid + 0.95 * half)
    contacts = np.zeros((T, 2), dtype=bool)
    contacts[::2, 0] = contacts[1::2, 1] = True
    return reference_frames(ROBOT, KinematicClip(R, t, q, contacts, 0.02))[10]


def test_criterion_6_rewards(criterion, reference):
    with criterion(6, "reward golden values") as c:
        spec = TrackingSpec.from_tree(ROBOT)
        snap = snapshot_at_reference(reference)
        b = compute_reward(snap, reference, RewardConfig(), spec)
        got = tuple(b[k] for k in TRACKING_TERMS)
        c.check(got == (120.0, 24.0, 15.0, 15.0, 15.0, 30.0, 5.0), f"perfect tracking terms {got}")
        air = compute_reward(snap, reference, RewardConfig(), spec,
                             air=(np.array([0.25, 0.0]), np.array([True, False])))["air_time"]
        c.check(air == 0.0, f"air-time bonus at 0.25 s = {air}")

        link = spec.tracked[3]

        def with_error(e):
            p = snap.link_pos.copy()
            p[link] += np.array([0.0, 0.0, e])
            fields = {k: getattr(snap, k) for k in snap.__dataclass_fields__}
            fields["link_pos"] = p
            return StateSnapshot(**fields)

        hi = check_termination(with_error(0.31), reference, 0.3, spec.tracked)
        lo = check_termination(with_error(0.29), reference, 0.3, spec.tracked)
        c.check(hi and not lo, f"termination at 0.31: {hi}, at 0.29: {lo}")


TABLE_DIMS = {
    "mpt": 15 + 15 + 5 * 23 * 3 + 10 + 5 + 23 + 2,
    "tracking": 15 + 15 + 5 * 23 * 3 + 10 + 5 + 23 + 2 + 121,
    "distill": 15 + 15 + 5 * 23 * 3 + 10 + 5 + 121,
    "critic": 15 * 3 + 5 * 23 * 3 + 10 + 5 + 23 + 2 + 121 + 1 + 30 + 4 + 3 + 23 + 90 + 90 + 2 + 2,
}


def test_criterion_7_observation_layout(criterion):
    with criterion(7, "observation layout") as c:
        dims = {}
        for mode, expected in TABLE_DIMS.items():
            lay = ObservationLayout.for_robot(mode, ROBOT)
            blocks = dict(lay.blocks())
            dims[mode] = lay.dim
            c.check(lay.dim == expected, f"{mode} {lay.dim} (expected {expected})")
            three = [k for k in ("base_ang_vel", "projected_gravity", "base_lin_vel") if k in blocks]
            c.check(all(blocks[k] == 15 for k in three), f"{mode} history 3-vectors are 15 wide")
            if "heightmap" in blocks:
                c.check(blocks["heightmap"] == 121, f"{mode} heightmap 121")
        distill = dict(ObservationLayout.for_robot("distill", ROBOT).blocks())
        c.check("target_dof_pos" not in distill, "distill has no target joint angles")


def test_criterion_8_randomization(criterion):
    with criterion(8, "randomization bounds") as c:
        cfg = RandomizationConfig()
        draws = draw_fields(cfg, np.random.default_rng(0), 1_000_000)
        bounds = field_bounds(cfg)
        bad = [k for k, (lo, hi) in bounds.items() if not (draws[k].min() >= lo and draws[k].max() <= hi)]
        c.check(not bad, f"{len(bounds)} bounded fields x 10^6 draws in range" + (f", out: {bad}" if bad else ""))
        ep = EpisodeRandomizer(cfg, np.random.default_rng(1))
        pushes = [s for s in range(5001) if ep.push(s) is not None]
        c.check(pushes == list(range(500, 5001, 500)) and cfg.dt * 500 == pytest.approx(10.0),
                f"pushes at steps {pushes[:3]}... (every {cfg.dt * 500:.0f} s)")
        for _ in range(5000):
            ep.odometry(np.zeros(2), 0.0)
        holds = set(ep.odom_holds) | set(np.unique(draws["odom_hold"]).tolist())
        c.check(holds <= {2, 3, 4, 5, 6}, f"odometry hold counts {sorted(holds)}")


# ---------------------------------------------------------------------------
# 9. metrics
# ---------------------------------------------------------------------------

def test_criterion_9_metrics(criterion):
    with criterion(9, "metrics") as c:
        rng = np.random.default_rng(0)
        ok = 0
        for _ in range(100):
            T, J = 100, 17
            gt = rng.normal(size=(J, 3)) * 0.3 + np.cumsum(rng.normal(scale=0.02, size=(T, 1, 3)), axis=0)
            gt = gt + rng.normal(scale=0.01, size=(T, J, 3))
            Rd = rotvec_to_matrix(np.cumsum(rng.normal(scale=0.002, size=(T, 3)), axis=0))
            td = np.cumsum(rng.normal(scale=0.005, size=(T, 3)), axis=0)
            ctr = gt.mean(1, keepdims=True)
            pred = np.einsum("tij,tkj->tki", Rd, gt - ctr) + ctr + td[:, None] + rng.normal(scale=0.02, size=gt.shape)
            ok += wa_mpjpe(pred, gt) <= w_mpjpe(pred, gt)
        c.check(ok >= 99, f"wa <= w in {ok}/100 trials")
        gt = rng.normal(size=(150, 17, 3))
        pred = gt @ rotvec_to_matrix(rng.normal(size=3)).T + rng.normal(size=3) * 3
        w, wa = w_mpjpe(pred, gt), wa_mpjpe(pred, gt)
        c.check(w < 1e-6 and wa < 1e-6, f"rigid offset W {w:.1e} mm, WA {wa:.1e} mm")
        sym = all(chamfer(a, b) == chamfer(b, a) for a, b in
                  ((rng.normal(size=(rng.integers(1, 300), 3)), rng.normal(size=(rng.integers(1, 300), 3)))
                   for _ in range(50)))
        c.check(sym, "chamfer(a, b) == chamfer(b, a) bit-for-bit on 50 random pairs")


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

CHAIN = [
    ["synth", "flat-walk", "--frames", "60", "--out", "clip.json"],
    ["reconstruct", "clip.json", "--out", "recon.json"],
    ["scene", "clip.json", "recon.json", "--out", "scene"],
    ["retarget", "recon.json", "--heightfield", "scene/heightfield.json", "--out", "retarget.json"],
    ["rewards", "retarget.json", "--heightfield", "scene/heightfield.json", "--out", "rewards.json"],
    ["eval", "recon.json", "clip.json", "--pred-cloud", "scene/cloud.json", "--gt-cloud", "scene/terrain.obj",
     "--out", "metrics.json"],
    ["randomize", "-n", "1000", "--out", "randomization.json"],
    ["manifest", "clip.json", "--out", "manifest.json"],
]


def run_chain(workdir: Path):
    workdir.mkdir()
    for step in CHAIN:
        proc = subprocess.run([sys.executable, "-m", "real2sim", "--seed", "7", *step], cwd=workdir,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"{step[0]} exited {proc.returncode}: {proc.stderr.strip()}")
    return {p.relative_to(workdir): p.read_bytes() for p in sorted(workdir.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(criterion, tmp_path):
    with criterion(10, "end-to-end determinism") as c:
        a = run_chain(tmp_path / "a")
        b = run_chain(tmp_path / "b")
        c.check(sorted(a) == sorted(b), f"{len(a)} output files")
        same = [k for k in a if a[k] == b.get(k)]
        c.check(len(same) == len(a), f"{len(same)}/{len(a)} files byte-identical across two runs")
