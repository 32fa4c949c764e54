"""Deterministic synthetic clips standing in for the perception front-end.

A scenario is a box terrain on a ground plane plus a human stick-figure
trajectory on it. The generator renders depth (terrain and human capsules)
from a tracking camera, then degrades the result the way a monocular
structure-from-motion pipeline would: every length is divided by a hidden
scene scale ``alpha``, and keypoints get pixel and metric noise.

Frames:

* *world*: metric, +z up, the person walks along +x.
* *reconstruction frame*: the first camera's frame in metric units. This is
  what a solve with the correct scale produces, and where ground truth is
  stored for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .geometry import CameraTrack, PinholeCamera, matrix_to_rotvec, rot_x, rot_y, rot_z, rotvec_to_matrix
from .kinematics import KinematicTree, default_skeleton, fk_batch
from .reconstruction import KeypointObservations, roll_pitch_from_up

SCENARIOS = ("flat-walk", "stairs-up", "stairs-down", "sit", "step-stones")

STEP_LENGTH = 0.3
STEP_PERIOD = 0.5
SWING_TIME = 0.4
PELVIS_HEIGHT = 0.88
TREAD = 0.3
RISER = 0.15
BENCH_TOP = 0.45
STONE_TOP = 0.12

CAPSULE_RADII = {
    "spine": 0.13, "head": 0.10,
    "l_elbow": 0.045, "r_elbow": 0.045, "l_wrist": 0.04, "r_wrist": 0.04,
    "l_knee": 0.07, "r_knee": 0.07, "l_ankle": 0.05, "r_ankle": 0.05, "l_foot": 0.04, "r_foot": 0.04,
}


class UnknownScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 100
    fps: float = 30.0
    width: int = 160
    height: int = 120
    focal: float = 150.0
    sigma_2d: float = 2.0
    sigma_3d: float = 0.02
    theta_noise: float = 0.1
    alpha: Optional[float] = None  # hidden scene scale; drawn from the seed when None
    camera_distance: float = 3.6
    max_roll: float = 0.15


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray  # (3,) min corner, world
    hi: np.ndarray  # (3,) max corner


@dataclass(frozen=True, eq=False)
class Terrain:
    boxes: tuple = ()
    extent: float = 12.0  # ground plane half-size

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = np.zeros(np.broadcast(x, y).shape)
        for b in self.boxes:
            inside = (x >= b.lo[0]) & (x < b.hi[0]) & (y >= b.lo[1]) & (y < b.hi[1])
            h = np.where(inside, np.maximum(h, b.hi[2]), h)
        return h


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Hidden quantities of a synthetic clip.

    Motion is stored in the reconstruction frame (first camera, metric).
    """

    alpha: float
    gamma: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    contacts: np.ndarray
    world_to_recon: np.ndarray  # (4, 4) metric world -> reconstruction frame
    terrain: Terrain
    human_mask: np.ndarray  # (T, H, W) bool

    def joints(self, skeleton: KinematicTree) -> np.ndarray:
        return fk_batch(skeleton, self.phi, self.gamma, self.theta).P


@dataclass(frozen=True, eq=False)
class SyntheticClip:
    scenario: str
    seed: int
    fps: float
    track: CameraTrack  # SfM units
    observations: KeypointObservations
    theta_init: np.ndarray
    roll: float
    pitch: float
    truth: GroundTruth


# ---------------------------------------------------------------------------
# terrain and footsteps
# ---------------------------------------------------------------------------

def _box(x0, x1, y0, y1, top):
    return Box(np.array([x0, y0, 0.0]), np.array([x1, y1, top]))


def make_terrain(scenario: str) -> Terrain:
    if scenario == "flat-walk":
        return Terrain()
    if scenario == "stairs-up":
        start = 0.45
        boxes = [_box(start + TREAD * k, start + TREAD * (k + 1) if k < 4 else 8.0, -1.0, 1.0, RISER * (k + 1))
                 for k in range(5)]
        return Terrain(tuple(boxes))
    if scenario == "stairs-down":
        start = 0.45
        boxes = [_box(-8.0, start, -1.0, 1.0, RISER * 5)]
        boxes += [_box(start + TREAD * k, start + TREAD * (k + 1), -1.0, 1.0, RISER * (4 - k)) for k in range(4)]
        return Terrain(tuple(boxes))
    if scenario == "sit":
        return Terrain((_box(-0.65, -0.25, -0.5, 0.5, BENCH_TOP),))
    if scenario == "step-stones":
        boxes = []
        for k in range(2, 8):
            y = 0.09 if k % 2 == 0 else -0.09
            x = STEP_LENGTH * k
            boxes.append(_box(x - 0.15, x + 0.15, y - 0.15, y + 0.15, STONE_TOP))
        return Terrain(tuple(boxes))
    raise UnknownScenarioError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def walking_feet(terrain: Terrain, times: np.ndarray, x_start: float = 0.0):
    """Foot-joint positions ``(T, 2, 3)`` and contact flags ``(T, 2)`` for a planned walk.

    Feet alternate, right first; every footstep advances by one step length
    and lands on the terrain height under the foot joint.
    """
    lateral = np.array([0.09, -0.09])
    T = len(times)
    n_steps = int(np.ceil(times[-1] / STEP_PERIOD)) + 2
    # footstep k (k >= 1) is taken by foot (k % 2 == 1 -> right) during [ (k-1)P, (k-1)P + SWING ]
    pos = np.zeros((T, 2, 3))
    contact = np.ones((T, 2), dtype=bool)
    for foot in (0, 1):
        x_prev = x_start
        z_prev = float(terrain.height(x_prev, lateral[foot]))
        plan = [(-np.inf, x_prev, z_prev)]
        for k in range(1, n_steps):
            if (k % 2 == 1) == (foot == 1):
                x_new = x_start + STEP_LENGTH * k
                plan.append(((k - 1) * STEP_PERIOD, x_new, float(terrain.height(x_new, lateral[foot]))))
        for i, t in enumerate(times):
            cur = plan[0]
            for j in range(1, len(plan)):
                t0, x1, z1 = plan[j]
                if t < t0:
                    break
                if t < t0 + SWING_TIME:
                    tau = (t - t0) / SWING_TIME
                    s = _smoothstep(tau)
                    x0, z0 = cur[1], cur[2]
                    lift = 0.08 + 0.5 * abs(z1 - z0)
                    pos[i, foot] = [x0 + s * (x1 - x0), lateral[foot], z0 + s * (z1 - z0) + lift * np.sin(np.pi * tau)]
                    contact[i, foot] = False
                    break
                cur = plan[j]
            if contact[i, foot]:
                pos[i, foot] = [cur[1], lateral[foot], cur[2]]
    return pos, contact


# ---------------------------------------------------------------------------
# inverse kinematics for the stick skeleton
# ---------------------------------------------------------------------------

def _frame_from(z_axis, forward):
    z = z_axis / np.linalg.norm(z_axis)
    x = forward - (forward @ z) * z
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(z, x), z], axis=1)


def leg_ik(hip, ankle, R_foot, forward, thigh: float, shin: float):
    """World rotations of thigh and shin placing the ankle at ``ankle`` (clamped if out of reach)."""
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec)
    d = np.clip(d, 1e-6, (thigh + shin) * 0.9999)
    u = d_vec / np.linalg.norm(d_vec)
    cos_b = np.clip((thigh ** 2 + d ** 2 - shin ** 2) / (2 * thigh * d), -1.0, 1.0)
    b = np.arccos(cos_b)
    perp = forward - (forward @ u) * u
    perp /= np.linalg.norm(perp)
    knee = hip + thigh * (np.cos(b) * u + np.sin(b) * perp)
    ankle_reached = hip + d * u
    R_thigh = _frame_from(hip - knee, forward)
    R_shin = _frame_from(knee - ankle_reached, forward)
    return R_thigh, R_shin


def _set(theta, tree, name, rotvec):
    theta[tree.dof_slice(tree.index(name))] = rotvec


def pose_from_targets(tree: KinematicTree, pelvis_pos, R_pelvis, feet, spine_lean, arm_phase, arm_amp=0.25):
    """Joint rotation vectors for one frame given pelvis pose and foot-joint targets."""
    theta = np.zeros(tree.n_dof)
    _set(theta, tree, "spine", [0.0, spine_lean, 0.0])
    forward = R_pelvis[:, 0]
    R_spine = R_pelvis @ rotvec_to_matrix(np.array([0.0, spine_lean, 0.0]))
    for side, sign, foot_idx in (("l", 1.0, 0), ("r", -1.0, 1)):
        hip_l = tree.links[tree.index(f"{side}_hip")]
        knee_l = tree.links[tree.index(f"{side}_knee")]
        ankle_l = tree.links[tree.index(f"{side}_ankle")]
        foot_l = tree.links[tree.index(f"{side}_foot")]
        hip = pelvis_pos + R_pelvis @ hip_l.offset
        yaw = np.arctan2(R_pelvis[1, 0], R_pelvis[0, 0])
        R_foot = rot_z(yaw)
        ankle = feet[foot_idx] - R_foot @ foot_l.offset
        R_thigh, R_shin = leg_ik(hip, ankle, R_foot, forward, -knee_l.offset[2], -ankle_l.offset[2])
        _set(theta, tree, f"{side}_hip", matrix_to_rotvec(R_pelvis.T @ R_thigh))
        _set(theta, tree, f"{side}_knee", matrix_to_rotvec(R_thigh.T @ R_shin))
        _set(theta, tree, f"{side}_ankle", matrix_to_rotvec(R_shin.T @ R_foot))
        swing = -sign * arm_amp * np.sin(arm_phase)
        R_sh = rot_x(sign * 0.12) @ rot_y(swing)
        _set(theta, tree, f"{side}_shoulder", matrix_to_rotvec(R_sh))
        _set(theta, tree, f"{side}_elbow", [0.0, -0.3, 0.0])
    return theta


# ---------------------------------------------------------------------------
# motion scripts
# ---------------------------------------------------------------------------

def _walk_motion(tree, terrain, times, rng):
    feet, contact = walking_feet(terrain, times)
    dt = times[1] - times[0]
    sigma = 0.12 / dt
    mid = feet.mean(axis=1)
    pelvis = np.empty_like(mid)
    pelvis[:, 0] = gaussian_filter1d(mid[:, 0], sigma, mode="nearest") + 0.03
    pelvis[:, 1] = 0.03 * np.sin(np.pi * times / STEP_PERIOD + rng.uniform(-0.2, 0.2))
    ground = _stance_ground(feet, contact, sigma)
    pelvis[:, 2] = ground + PELVIS_HEIGHT + 0.015 * np.cos(2 * np.pi * times / STEP_PERIOD)
    yaw = 0.03 * np.sin(np.pi * times / STEP_PERIOD)
    theta = np.empty((len(times), tree.n_dof))
    phi = np.empty((len(times), 3, 3))
    for i, t in enumerate(times):
        R_p = rot_z(yaw[i]) @ rot_y(0.05)
        phi[i] = R_p
        theta[i] = pose_from_targets(tree, pelvis[i], R_p, feet[i], 0.05, np.pi * t / STEP_PERIOD)
    return pelvis, phi, theta, contact


def _stance_ground(feet, contact, sigma):
    """Smoothed mean height of the supporting feet."""
    z = np.where(contact, feet[..., 2], np.nan)
    g = np.nanmean(np.where(np.isnan(z).all(axis=1, keepdims=True), feet[..., 2], z), axis=1)
    return gaussian_filter1d(g, sigma, mode="nearest")


def _sit_motion(tree, terrain, times, rng):
    T = len(times)
    dur = times[-1]
    feet = np.zeros((T, 2, 3))
    feet[:, 0] = [0.10, 0.11, 0.0]
    feet[:, 1] = [0.10, -0.11, 0.0]
    contact = np.ones((T, 2), dtype=bool)
    # stand, lower, sit, rise, stand
    marks = np.array([0.1, 0.38, 0.58, 0.86]) * dur
    down = _smoothstep((times - marks[0]) / (marks[1] - marks[0]))
    up = _smoothstep((times - marks[2]) / (marks[3] - marks[2]))
    s = down * (1.0 - up)
    stand = np.array([0.0, 0.0, PELVIS_HEIGHT])
    seat = np.array([-0.42, 0.0, BENCH_TOP + 0.10])
    # lean forward most strongly mid-transition
    lean = 0.35 * np.sin(np.pi * np.clip(s, 0, 1)) + 0.15 * s
    pelvis = stand + s[:, None] * (seat - stand)
    pelvis[:, 1] += 0.005 * rng.standard_normal()
    theta = np.empty((T, tree.n_dof))
    phi = np.empty((T, 3, 3))
    for i in range(T):
        R_p = rot_y(0.05 + 0.1 * s[i])
        phi[i] = R_p
        theta[i] = pose_from_targets(tree, pelvis[i], R_p, feet[i], lean[i], 0.0, arm_amp=0.0)
    return pelvis, phi, theta, contact


# ---------------------------------------------------------------------------
# camera and rendering
# ---------------------------------------------------------------------------

def look_at(position, target, roll: float) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``position`` looking at ``target``, rolled about its axis."""
    f = target - position
    f /= np.linalg.norm(f)
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    R = rot_z(roll).T @ np.stack([right, down, f])
    return R, -R @ position


def _capsule_hits(o, d, a, b, r):
    """Ray parameters of first capsule intersection (inf where missed). ``d`` unit, ``(N, 3)``."""
    ba = b - a
    oa = o - a
    baba = ba @ ba
    bard = d @ ba
    baoa = oa @ ba
    rdoa = d @ oa
    oaoa = oa @ oa
    A = baba - bard * bard
    B = baba * rdoa - baoa * bard
    C = baba * oaoa - baoa * baoa - r * r * baba
    h = B * B - A * C
    out = np.full(d.shape[0], np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        ok = h >= 0
        t = (-B - np.sqrt(np.where(ok, h, 0.0))) / A
        y = baoa + t * bard
        body = ok & (y > 0) & (y < baba) & (t > 0)
        out[body] = t[body]
        # end caps
        for end, sel in ((a, y <= 0), (b, y >= baba)):
            oc = o - end
            Bc = d @ oc
            Cc = oc @ oc - r * r
            hc = Bc * Bc - Cc
            tc = -Bc - np.sqrt(np.where(hc > 0, hc, 0.0))
            cap = ok & sel & (hc > 0) & (tc > 0) & ~body
            out[cap] = np.minimum(out[cap], tc[cap])
    return out


def _box_hits(o, d, box: Box):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (box.lo - o) * inv
        t2 = (box.hi - o) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmax > 0)
    return np.where(hit, np.where(tmin > 0, tmin, np.inf), np.inf)


def render_depth(camera: PinholeCamera, R, t, terrain: Terrain, segments, radii):
    """Metric depth (NaN where nothing is hit) and a human mask for one frame."""
    H, W = camera.height, camera.width
    v, u = np.mgrid[0:H, 0:W]
    rays = np.stack([u.ravel(), v.ravel(), np.ones(H * W)], axis=1).astype(float) @ camera.K_inv.T
    dirs_w = rays @ R  # (R^T ray) per row
    scale = np.linalg.norm(dirs_w, axis=1)
    d = dirs_w / scale[:, None]
    o = -R.T @ t
    best = np.full(H * W, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -o[2] / d[:, 2]
    pg = o + tg[:, None] * d
    ground = (tg > 0) & (np.abs(pg[:, 0]) < terrain.extent) & (np.abs(pg[:, 1]) < terrain.extent)
    best[ground] = tg[ground]
    for b in terrain.boxes:
        best = np.minimum(best, _box_hits(o, d, b))
    human = np.full(H * W, np.inf)
    for (a, bb), r in zip(segments, radii):
        human = np.minimum(human, _capsule_hits(o, d, a, bb, r))
    is_human = human < best
    best = np.minimum(best, human)
    # convert ray length along the unit direction to camera-frame depth
    depth = best / scale
    depth[~np.isfinite(depth)] = np.nan
    return depth.reshape(H, W), (is_human & np.isfinite(best)).reshape(H, W)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def generate(scenario: str, seed: int, config: Optional[SynthConfig] = None,
             skeleton: Optional[KinematicTree] = None) -> SyntheticClip:
    """Build a synthetic clip; identical (scenario, seed, config) give identical output."""
    config = config or SynthConfig()
    skeleton = skeleton or default_skeleton()
    terrain = make_terrain(scenario)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    rng_scene, rng_2d, rng_3d, rng_theta, rng_conf, rng_cam = streams

    T = config.frames
    times = np.arange(T) / config.fps
    if scenario == "sit":
        pelvis, phi_w, theta, contact = _sit_motion(skeleton, terrain, times, rng_scene)
    else:
        pelvis, phi_w, theta, contact = _walk_motion(skeleton, terrain, times, rng_scene)
    fk = fk_batch(skeleton, phi_w, pelvis, theta)
    joints_w = fk.P

    alpha = config.alpha if config.alpha is not None else float(np.exp(rng_scene.uniform(np.log(0.4), np.log(2.5))))
    camera = PinholeCamera(config.focal, config.focal, config.width / 2.0, config.height / 2.0,
                           config.width, config.height)
    azimuth = rng_cam.uniform(-1.3, -0.7)
    roll = rng_cam.uniform(-config.max_roll, config.max_roll)
    height = rng_cam.uniform(0.3, 0.7)
    follow = gaussian_filter1d(pelvis, 0.5 * config.fps, axis=0, mode="nearest")
    offset = config.camera_distance * np.array([np.cos(azimuth), np.sin(azimuth), 0.0]) + [0.0, 0.0, height]
    shake = 0.01 * np.sin(2 * np.pi * 0.7 * times)[:, None] * np.array([1.0, 0.5, 0.3])
    Rw = np.empty((T, 3, 3))
    tw = np.empty((T, 3))
    for i in range(T):
        Rw[i], tw[i] = look_at(follow[i] + offset + shake[i], follow[i] - [0.0, 0.0, 0.1], roll)

    segments_idx = [(skeleton.links[skeleton.index(n)].parent, skeleton.index(n)) for n in CAPSULE_RADII]
    radii = list(CAPSULE_RADII.values())
    depth = np.empty((T, config.height, config.width))
    mask = np.empty((T, config.height, config.width), dtype=bool)
    for i in range(T):
        segs = [(joints_w[i, p], joints_w[i, c]) for p, c in segments_idx]
        depth[i], mask[i] = render_depth(camera, Rw[i], tw[i], terrain, segs, radii)

    # reconstruction frame = first camera, metric; SfM units divide by alpha
    R0, t0 = Rw[0], tw[0]
    R_s = Rw @ R0.T
    t_s = (tw - np.einsum("tab,b->ta", R_s, t0)) / alpha
    track = CameraTrack(camera, R_s, t_s, depth / alpha)

    gamma_r = pelvis @ R0.T + t0
    phi_r = R0 @ phi_w
    joints_r = joints_w @ R0.T + t0
    cam_pts = np.einsum("tab,tjb->tja", Rw, joints_w) + tw[:, None, :]
    k2 = np.stack([camera.fx * cam_pts[..., 0] / cam_pts[..., 2] + camera.cx,
                   camera.fy * cam_pts[..., 1] / cam_pts[..., 2] + camera.cy], axis=-1)
    k2 = k2 + config.sigma_2d * rng_2d.standard_normal(k2.shape)
    conf = np.clip(1.0 - np.abs(0.1 * rng_conf.standard_normal(k2.shape[:2])), 0.0, 1.0)
    inside = (k2[..., 0] >= 0) & (k2[..., 0] < camera.width) & (k2[..., 1] >= 0) & (k2[..., 1] < camera.height)
    conf = np.where(inside, conf, 0.0)
    k3 = (joints_r + config.sigma_3d * rng_3d.standard_normal(joints_r.shape)) / alpha
    obs = KeypointObservations(k2, conf, k3, inside.copy(), contact.copy())
    theta_init = theta + config.theta_noise * rng_theta.standard_normal(theta.shape)

    r_up, p_up = roll_pitch_from_up(R0 @ np.array([0.0, 0.0, 1.0]))
    world_to_recon = np.eye(4)
    world_to_recon[:3, :3] = R0
    world_to_recon[:3, 3] = t0
    truth = GroundTruth(alpha=alpha, gamma=gamma_r, phi=phi_r, theta=theta, contacts=contact,
                        world_to_recon=world_to_recon, terrain=terrain, human_mask=mask)
    return SyntheticClip(scenario=scenario, seed=seed, fps=config.fps, track=track, observations=obs,
                         theta_init=theta_init, roll=r_up, pitch=p_up, truth=truth)
