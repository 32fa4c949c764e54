"""Joint optimization of human trajectory, local pose and scene scale.

Conventions:

* The camera track and depth maps are in the units of the structure-from-motion
  reconstruction ("SfM units"). A metric world point is ``alpha`` times the
  SfM world point.
* Lifted 3D keypoints are stored in SfM world units; residuals compare them to
  the metric skeleton joints as ``J_3D - alpha * J3D_lifted``.
* The 2D term projects metric joints through ``[R | alpha * t]``, which is the
  same camera expressed in metric units.
* L1 terms become smooth-L1 with unit tail slope (Huber divided by its
  transition point), so weights keep the meaning they have for plain L1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .geometry import CameraTrack, matrix_to_rotvec, right_jacobian, rot_x, rot_z, rotvec_to_matrix
from .kinematics import KinematicTree, MotionClip, fk_batch, link_position_jacobian
from .nlls import ResidualBlock, SolveReport, SolverConfig, SolverError, solve

log = logging.getLogger(__name__)

# camera-frame axes of a body (x forward, y left, z up) facing the camera
R_CAM_BODY_FACING = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])
TORSO_JOINTS = ("pelvis", "spine", "l_hip", "r_hip", "l_shoulder", "r_shoulder")


class InitError(ValueError):
    """Coarse initialization found no usable evidence."""


class ReconstructionError(RuntimeError):
    def __init__(self, message: str, block_costs: Optional[dict] = None):
        super().__init__(message)
        self.block_costs = block_costs or {}


@dataclass(frozen=True, eq=False)
class KeypointObservations:
    """Per-frame detections for one person, joints ordered like the skeleton's links.

    Args:
        keypoints_2d: ``(T, J, 2)`` pixel coordinates.
        confidence: ``(T, J)`` detector confidences in [0, 1].
        keypoints_3d: ``(T, J, 3)`` lifted joints in SfM world units.
        valid_3d: ``(T, J)`` mask of usable lifted joints.
        contacts: ``(T, 2)`` foot-contact flags (left, right).
    """

    keypoints_2d: np.ndarray
    confidence: np.ndarray
    keypoints_3d: np.ndarray
    valid_3d: np.ndarray
    contacts: np.ndarray

    def __post_init__(self):
        k2 = np.asarray(self.keypoints_2d, dtype=float)
        T, J = k2.shape[:2]
        conf = np.asarray(self.confidence, dtype=float)
        k3 = np.asarray(self.keypoints_3d, dtype=float)
        valid = np.asarray(self.valid_3d, dtype=bool)
        contacts = np.asarray(self.contacts, dtype=bool)
        if k2.shape != (T, J, 2) or conf.shape != (T, J) or k3.shape != (T, J, 3) or valid.shape != (T, J):
            raise ValueError("keypoint arrays disagree on frame or joint count")
        if contacts.ndim != 2 or contacts.shape[0] != T:
            raise ValueError("contact flags must have one row per frame")
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise ValueError("confidences must lie in [0, 1]")
        valid = valid & np.all(np.isfinite(k3), axis=-1)
        for name, v in (("keypoints_2d", k2), ("confidence", conf), ("keypoints_3d", k3), ("valid_3d", valid),
                        ("contacts", contacts)):
            object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return self.keypoints_2d.shape[0]


@dataclass(frozen=True)
class ReconWeights:
    w_3d: float = 1.0
    w_2d: float = 0.01
    lambda_gamma: float = 10.0
    lambda_theta: float = 1.0
    pose_prior: float = 1e-3
    delta_3d: float = 0.01
    delta_2d: float = 1.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")
        if self.delta_3d <= 0 or self.delta_2d <= 0:
            raise ValueError("smooth-L1 transition points must be positive")


@dataclass(frozen=True, eq=False)
class ReconInit:
    alpha: float
    gamma: np.ndarray  # (T, 3) metric
    phi: np.ndarray  # (T, 3, 3)
    theta: np.ndarray  # (T, n_dof)


@dataclass(frozen=True, eq=False)
class ReconProblem:
    track: CameraTrack
    observations: KeypointObservations
    skeleton: KinematicTree
    init: ReconInit
    weights: ReconWeights = field(default_factory=ReconWeights)

    def __post_init__(self):
        T = len(self.observations)
        if T < 2:
            raise ValueError("reconstruction needs at least two frames")
        if len(self.track) != T:
            raise ValueError("camera track and observations disagree on frame count")
        if self.observations.keypoints_2d.shape[1] != self.skeleton.n_links:
            raise ValueError("observations must carry one keypoint per skeleton joint")
        if not self.init.alpha > 0:
            raise ValueError("initial scale must be positive")
        if np.asarray(self.init.theta).shape != (T, self.skeleton.n_dof):
            raise ValueError("initial pose has the wrong shape")


@dataclass(frozen=True, eq=False)
class ReconSolution:
    alpha: float
    gamma: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    report: Optional[SolveReport] = None
    gravity: Optional[np.ndarray] = None  # rotation applied by gravity_align, once

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("scene scale must be positive")

    @property
    def aligned(self) -> bool:
        return self.gravity is not None

    def motion(self, fps: float, contacts=None) -> MotionClip:
        return MotionClip(fps=fps, gamma=self.gamma, phi=self.phi, theta=self.theta, contacts=contacts)

    def joints(self, skeleton: KinematicTree) -> np.ndarray:
        return fk_batch(skeleton, self.phi, self.gamma, self.theta).P


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def lift_keypoints(track: CameraTrack, keypoints_2d: np.ndarray):
    """Unproject 2D keypoints with the depth under them.

    Returns ``(points, valid)``: points in SfM world units and a mask that is
    false where the pixel is outside the image or has no depth.
    """
    if track.depth is None:
        raise ValueError("lifting requires depth maps")
    kp = np.asarray(keypoints_2d, dtype=float)
    T, J = kp.shape[:2]
    cam = track.camera
    finite = np.all(np.isfinite(kp), -1)
    safe = np.where(finite[..., None], kp, -1.0)  # NaN keypoints must not reach the integer cast
    col = np.rint(safe[..., 0]).astype(int)
    row = np.rint(safe[..., 1]).astype(int)
    inside = (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height) & finite
    frame = np.broadcast_to(np.arange(T)[:, None], (T, J))
    d = np.full((T, J), np.nan)
    d[inside] = track.depth[frame[inside], row[inside], col[inside]]
    valid = inside & np.isfinite(d)
    rays = np.concatenate([safe, np.ones((T, J, 1))], axis=-1) @ cam.K_inv.T
    cam_pts = rays * np.where(valid, d, 0.0)[..., None]
    world = np.einsum("tba,tjb->tja", track.R, cam_pts - track.t[:, None, :])
    world[~valid] = np.nan
    return world, valid


def _limb_ratio_depths(track, obs, skeleton, min_conf):
    """Per-frame depth from summed 3D over summed 2D limb lengths (NaN if unknown)."""
    f = 0.5 * (track.camera.fx + track.camera.fy)
    lengths = skeleton.segment_lengths
    edges = [(p, c) for p, c in skeleton.edges if lengths[c] > 0]
    T = len(obs)
    z = np.full(T, np.nan)
    for t in range(T):
        num = den = 0.0
        for p, c in edges:
            if obs.confidence[t, p] >= min_conf and obs.confidence[t, c] >= min_conf:
                num += lengths[c]
                den += np.linalg.norm(obs.keypoints_2d[t, c] - obs.keypoints_2d[t, p])
        if num > 0 and den > 0:
            z[t] = f * num / den
    return z


@dataclass(frozen=True, eq=False)
class CoarseInit:
    alpha: float
    gamma: np.ndarray
    phi: np.ndarray
    depth: np.ndarray  # per-frame estimated metric root depth


def coarse_init(track: CameraTrack, obs: KeypointObservations, skeleton: KinematicTree,
                min_conf: float = 0.5) -> CoarseInit:
    """Place the person from limb-length ratios and read the scene scale off the depth maps.

    Each frame's root depth is ``f * sum(3D limb lengths) / sum(2D limb lengths)``.
    The root sits on the ray through its detected pixel at that depth, facing
    the camera. The scene scale is the median ratio of that depth to the
    depth-map value under the root pixel.
    """
    T = len(obs)
    z = _limb_ratio_depths(track, obs, skeleton, min_conf)
    known = np.isfinite(z)
    if not known.any():
        raise InitError("no frame has a confidently detected limb")
    if not known.all():
        z = np.interp(np.arange(T), np.nonzero(known)[0], z[known])

    root = obs.keypoints_2d[:, 0].copy()
    seen = np.all(np.isfinite(root), -1)
    if not seen.any():
        raise InitError("the root keypoint is never detected")
    for k in range(2):  # fill missing root pixels so the placement stays finite
        root[~seen, k] = np.interp(np.nonzero(~seen)[0], np.nonzero(seen)[0], root[seen, k])
    ratios = []
    if track.depth is not None:
        cam = track.camera
        for t in range(T):
            u, v = np.rint(root[t]).astype(int) if seen[t] else (-1, -1)
            if 0 <= u < cam.width and 0 <= v < cam.height:
                d = track.depth[t, v, u]
                if np.isfinite(d):
                    ratios.append(z[t] / d)
    if not ratios:
        raise InitError("no depth under the root keypoint in any frame")
    alpha = float(np.median(ratios))

    rays = np.concatenate([root, np.ones((T, 1))], axis=-1) @ track.camera.K_inv.T
    cam_pts = rays * z[:, None]
    gamma = np.einsum("tba,tb->ta", track.R, cam_pts - alpha * track.t)
    phi = np.einsum("tba,bc->tac", track.R, R_CAM_BODY_FACING)
    return CoarseInit(alpha=alpha, gamma=gamma, phi=phi, depth=z)


def kabsch(source: np.ndarray, target: np.ndarray, weights=None):
    """Rotation R and translation t minimizing sum w * |R s + t - x|^2."""
    w = np.ones(len(source)) if weights is None else np.asarray(weights, dtype=float)
    ws = w / w.sum()
    cs = ws @ source
    ct = ws @ target
    H = (source - cs).T @ ((target - ct) * ws[:, None])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, ct - R @ cs


def align_to_lifted(obs: KeypointObservations, skeleton: KinematicTree, alpha: float, theta: np.ndarray,
                    fallback: CoarseInit, joints=TORSO_JOINTS):
    """Per-frame root pose from a rigid fit of the torso joints to the scaled lifted keypoints.

    Frames with fewer than three valid torso keypoints keep the fallback pose.
    """
    idx = skeleton.indices(joints)
    T = len(obs)
    body = fk_batch(skeleton, np.eye(3), np.zeros(3), theta).P[:, idx]
    gamma = fallback.gamma.copy()
    phi = fallback.phi.copy()
    for t in range(T):
        ok = obs.valid_3d[t, idx]
        if ok.sum() < 3:
            continue
        R, tr = kabsch(body[t, ok], alpha * obs.keypoints_3d[t, idx][ok])
        phi[t] = R
        gamma[t] = tr
    return gamma, phi


# ---------------------------------------------------------------------------
# the joint problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    T: int
    D: int

    @property
    def n(self) -> int:
        return 1 + self.T * (6 + self.D)

    def gamma(self, t=None):
        base = 1 + 3 * np.arange(self.T) if t is None else 1 + 3 * np.asarray(t)
        return base[..., None] + np.arange(3)

    def phi(self, t=None):
        base = 1 + 3 * self.T + 3 * (np.arange(self.T) if t is None else np.asarray(t))
        return base[..., None] + np.arange(3)

    def theta(self, t=None):
        base = 1 + 6 * self.T + self.D * (np.arange(self.T) if t is None else np.asarray(t))
        return base[..., None] + np.arange(self.D)

    def frame_cols(self):
        """(T, 1 + 3 + 3 + D) global columns touched by each frame's joints."""
        T = self.T
        return np.concatenate([np.zeros((T, 1), dtype=np.int64), self.gamma(), self.phi(), self.theta()], axis=1)

    def unpack(self, x):
        T, D = self.T, self.D
        alpha = x[0]
        gamma = x[1:1 + 3 * T].reshape(T, 3)
        dphi = x[1 + 3 * T:1 + 6 * T].reshape(T, 3)
        theta = x[1 + 6 * T:].reshape(T, D)
        return alpha, gamma, dphi, theta


class _Model:
    """Caches forward kinematics and Jacobians for the most recent parameter vector."""

    def __init__(self, problem: ReconProblem):
        self.p = problem
        self.tree = problem.skeleton
        self.layout = _Layout(len(problem.observations), problem.skeleton.n_dof)
        self.R0 = np.asarray(problem.init.phi, dtype=float)
        self._key = None
        self._jac = None

    def update(self, x):
        key = x.tobytes()
        if key == self._key:
            return
        alpha, gamma, dphi, theta = self.layout.unpack(x)
        Rroot = self.R0 @ rotvec_to_matrix(dphi)
        fk = fk_batch(self.tree, Rroot, gamma, theta)
        self.alpha, self.gamma, self.dphi, self.theta = alpha, gamma, dphi, theta
        self.Rroot = Rroot
        self.fk = fk
        self.J = fk.P
        self._jac = None
        self._key = key

    def jacobians(self):
        """(dq (T,L,3,D), dphi (T,L,3,3)) of every joint position."""
        if self._jac is None:
            dq, drot = link_position_jacobian(self.tree, self.fk)
            Jphi = drot @ (self.Rroot @ right_jacobian(self.dphi))[:, None]
            self._jac = (dq, Jphi)
        return self._jac


def _frame_block_matrix(values, layout, rows_per_joint):
    """Assemble per-(frame, joint) dense blocks ``(T, J, k, C)`` into a CSR matrix."""
    T, J, k, C = values.shape
    cols = np.broadcast_to(layout.frame_cols()[:, None, None, :], (T, J, k, C))
    rows = np.broadcast_to(np.arange(T * J * k).reshape(T, J, k, 1), (T, J, k, C))
    return sp.csr_matrix((values.ravel(), (rows.ravel(), cols.ravel())), shape=(T * J * k, layout.n))


def _difference_matrix(T, width, cols):
    """Rows ``x[t] - x[t-1]`` for the column groups ``cols`` (T, width)."""
    m = (T - 1) * width
    r = np.arange(m)
    c_now = cols[1:].ravel()
    c_prev = cols[:-1].ravel()
    return r, c_now, c_prev, m


def build_blocks(problem: ReconProblem):
    """Residual blocks, initial parameter vector and layout for `solve_joint`."""
    w = problem.weights
    model = _Model(problem)
    lay = model.layout
    T, D = lay.T, lay.D
    obs = problem.observations
    track = problem.track
    cam = track.camera
    all_idx = np.arange(lay.n)

    mask3 = obs.valid_3d.astype(float)
    target3 = np.where(obs.valid_3d[..., None], obs.keypoints_3d, 0.0)
    seen = np.all(np.isfinite(obs.keypoints_2d), axis=-1)
    conf = np.where(seen, obs.confidence, 0.0)
    k2 = np.where(seen[..., None], obs.keypoints_2d, 0.0)

    # residual in observation units rescaled by the fixed initial scale: same zero set as
    # J - alpha * J3D, but the lifted-point noise is no longer multiplied by alpha, which
    # would otherwise pull alpha toward zero
    a0 = float(problem.init.alpha)

    def r3d(x):
        model.update(x)
        return (mask3[..., None] * (a0 / model.alpha * model.J - a0 * target3)).ravel()

    def j3d(x):
        model.update(x)
        dq, dphi = model.jacobians()
        Tn, L = model.J.shape[:2]
        s = a0 / model.alpha
        vals = np.zeros((Tn, L, 3, 7 + D))
        vals[..., 0] = -s / model.alpha * model.J
        vals[..., 1:4] = s * np.eye(3)
        vals[..., 4:7] = s * dphi
        vals[..., 7:] = s * dq
        vals *= mask3[..., None, None]
        return _frame_block_matrix(vals, lay, 3)

    def _camera_points(x):
        model.update(x)
        pc = np.einsum("tab,tjb->tja", track.R, model.J) + model.alpha * track.t[:, None, :]
        return pc

    def r2d(x):
        pc = _camera_points(x)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([cam.fx * pc[..., 0] / z + cam.cx, cam.fy * pc[..., 1] / z + cam.cy], axis=-1)
        uv[z <= 1e-6] = np.nan
        return (conf[..., None] * (uv - k2)).ravel()

    def j2d(x):
        pc = _camera_points(x)
        dq, dphi = model.jacobians()
        z = pc[..., 2]
        P = np.zeros(pc.shape[:2] + (2, 3))
        P[..., 0, 0] = cam.fx / z
        P[..., 0, 2] = -cam.fx * pc[..., 0] / z ** 2
        P[..., 1, 1] = cam.fy / z
        P[..., 1, 2] = -cam.fy * pc[..., 1] / z ** 2
        A = P @ track.R[:, None]  # d uv / d world point
        Tn, L = z.shape
        vals = np.zeros((Tn, L, 2, 7 + D))
        vals[..., 0] = np.einsum("tjab,tb->tja", P, track.t)
        vals[..., 1:4] = A
        vals[..., 4:7] = A @ dphi
        vals[..., 7:] = A @ dq
        vals *= conf[..., None, None]
        return _frame_block_matrix(vals, lay, 2)

    blocks = []
    if w.w_3d > 0:
        blocks.append(ResidualBlock("L3D", all_idx, r3d, j3d, robust="smooth_l1", delta=w.delta_3d,
                                    weight=w.w_3d / w.delta_3d))
    if w.w_2d > 0:
        blocks.append(ResidualBlock("L2D", all_idx, r2d, j2d, robust="smooth_l1", delta=w.delta_2d,
                                    weight=w.w_2d / w.delta_2d))

    def diff_block(name, cols, weight):
        width = cols.shape[1]
        r, c_now, c_prev, m = _difference_matrix(T, width, cols)
        Dm = sp.csr_matrix((np.r_[np.ones(m), -np.ones(m)], (np.r_[r, r], np.r_[c_now, c_prev])),
                           shape=(m, lay.n))
        return ResidualBlock(name, all_idx, lambda x: Dm @ x, lambda x: Dm, weight=weight)

    # smoothness costs are plain sums of squares; the block cost carries a 1/2, hence the factor 2
    if w.lambda_gamma > 0:
        blocks.append(diff_block("smooth_gamma", lay.gamma(), 2.0 * w.lambda_gamma))
    if w.lambda_theta > 0:
        blocks.append(diff_block("smooth_theta", lay.theta(), 2.0 * w.lambda_theta))
    if w.pose_prior > 0:
        th_idx = lay.theta().ravel()
        theta0 = np.asarray(problem.init.theta, dtype=float).ravel()
        blocks.append(ResidualBlock("pose_prior", th_idx, lambda x: x - theta0,
                                    lambda x: sp.identity(th_idx.size, format="csr"), weight=w.pose_prior))

    x0 = np.concatenate([[problem.init.alpha], np.asarray(problem.init.gamma, float).ravel(), np.zeros(3 * T),
                         np.asarray(problem.init.theta, float).ravel()])
    return blocks, x0, model


def solve_joint(problem: ReconProblem, config: Optional[SolverConfig] = None) -> ReconSolution:
    """Optimize scale, root trajectory and local pose against the keypoint evidence."""
    config = config or SolverConfig(max_iterations=100)
    blocks, x0, model = build_blocks(problem)
    try:
        x, report = solve(blocks, x0, config)
    except SolverError as exc:
        raise ReconstructionError(f"reconstruction solve failed: {exc}", exc.block_costs) from exc
    alpha, gamma, dphi, theta = model.layout.unpack(x)
    if not alpha > 0:
        raise ReconstructionError("solver returned a non-positive scene scale", report.block_costs)
    phi = model.R0 @ rotvec_to_matrix(dphi)
    return ReconSolution(alpha=float(alpha), gamma=gamma.copy(), phi=phi, theta=theta.copy(), report=report)


def initialize(track: CameraTrack, obs: KeypointObservations, skeleton: KinematicTree, theta_init: np.ndarray,
               refine_orientation: bool = True) -> ReconInit:
    """Coarse placement followed (optionally) by a torso rigid fit to the lifted keypoints."""
    coarse = coarse_init(track, obs, skeleton)
    theta_init = np.asarray(theta_init, dtype=float)
    gamma, phi = coarse.gamma, coarse.phi
    if refine_orientation:
        gamma, phi = align_to_lifted(obs, skeleton, coarse.alpha, theta_init, coarse)
    return ReconInit(alpha=coarse.alpha, gamma=gamma, phi=phi, theta=theta_init)


def reconstruct(track: CameraTrack, obs: KeypointObservations, skeleton: KinematicTree, theta_init: np.ndarray,
                weights: Optional[ReconWeights] = None, config: Optional[SolverConfig] = None) -> ReconSolution:
    init = initialize(track, obs, skeleton, theta_init)
    problem = ReconProblem(track, obs, skeleton, init, weights or ReconWeights())
    return solve_joint(problem, config)


# ---------------------------------------------------------------------------
# gravity alignment
# ---------------------------------------------------------------------------

R_YUP_TO_ZUP = rot_x(np.pi / 2)


def up_in_camera(roll: float, pitch: float) -> np.ndarray:
    """World up expressed in a camera rolled by ``roll`` and pitched down by ``pitch``."""
    return rot_z(roll).T @ np.array([0.0, -np.cos(pitch), -np.sin(pitch)])


def roll_pitch_from_up(up_cam) -> tuple[float, float]:
    """Inverse of `up_in_camera` for a unit up vector."""
    u = np.asarray(up_cam, dtype=float)
    u = u / np.linalg.norm(u)
    pitch = float(np.arcsin(np.clip(-u[2], -1.0, 1.0)))
    roll = float(np.arctan2(-u[0], -u[1]))
    return roll, pitch


def gravity_rotation(R_cam_world, roll: float, pitch: float = 0.0) -> np.ndarray:
    """Rotation taking world coordinates to a frame whose +z is up.

    Composes ``R_yup->zup @ R_x(-pitch) @ R_x(pi) @ R_z(roll) @ R_cam_world``:
    into the first camera, undo its roll, flip to y-up, undo its pitch, then
    relabel y-up as z-up.
    """
    return R_YUP_TO_ZUP @ rot_x(-pitch) @ rot_x(np.pi) @ rot_z(roll) @ np.asarray(R_cam_world, dtype=float)


def fit_plane_ransac(points: np.ndarray, rng: np.random.Generator, iterations: int = 200,
                     threshold: float = 0.02):
    """Plane (unit normal n, offset d with n.x = d) supported by the most points."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise ValueError("need at least three points for a plane")
    best, best_count = None, -1
    for _ in range(iterations):
        a, b, c = pts[rng.choice(len(pts), 3, replace=False)]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n /= norm
        count = int(np.sum(np.abs((pts - a) @ n) < threshold))
        if count > best_count:
            best, best_count = (n, a), count
    if best is None:
        raise ValueError("points are degenerate")
    n, a = best
    inliers = pts[np.abs((pts - a) @ n) < threshold]
    centroid = inliers.mean(axis=0)
    _, _, Vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    n = Vt[-1]
    return n, float(n @ centroid)


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector a to unit vector b."""
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    c = float(a @ b)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotvec_to_matrix(np.pi * perp / np.linalg.norm(perp))
    return rotvec_to_matrix(v / s * np.arctan2(s, c))


def gravity_from_floor(points_world: np.ndarray, R_cam_world, seed: int = 0) -> np.ndarray:
    """Fallback when roll and pitch are unknown: fit the floor among the lowest points.

    "Lowest" is judged along the first camera's down axis; the fitted normal
    is oriented toward camera up and rotated onto +z after the y-up flip.
    """
    R_cw = np.asarray(R_cam_world, dtype=float)
    pc = points_world @ R_cw.T
    down = pc[:, 1]
    low = pc[down >= np.quantile(down, 0.9)]
    n, _ = fit_plane_ransac(low, np.random.default_rng(seed))
    if n[1] > 0:
        n = -n
    base = R_YUP_TO_ZUP @ rot_x(np.pi)
    return rotation_between(base @ n, [0.0, 0.0, 1.0]) @ base @ R_cw


def gravity_align(solution: ReconSolution, points=None, roll: Optional[float] = None, pitch: float = 0.0,
                  R_cam_world=None, rotation=None):
    """Rotate the reconstruction (and scene points) so that +z is up.

    Supply either ``rotation`` or the first camera's ``R_cam_world`` together
    with its ``roll`` and ``pitch``. A solution that already carries a gravity
    rotation is returned unchanged with its recorded rotation; the points are
    then assumed to be in the aligned frame already.

    Returns ``(solution, points, rotation)``.
    """
    if solution.aligned:
        log.info("solution is already gravity-aligned; not re-applying")
        return solution, points, solution.gravity
    if rotation is None:
        if R_cam_world is None or roll is None:
            raise ValueError("need either a rotation or the first camera rotation with roll/pitch")
        rotation = gravity_rotation(R_cam_world, roll, pitch)
    G = np.asarray(rotation, dtype=float)
    out = replace(solution, gamma=solution.gamma @ G.T, phi=G @ solution.phi, gravity=G)
    pts = None if points is None else np.asarray(points, dtype=float) @ G.T
    return out, pts, G
