"""Kinematic motion transfer from human joint trajectories to the robot.

Unknowns are, for every frame, the robot root position ``gamma_R``, a root
rotation increment ``dphi`` (``R = R_init exp(dphi)``) and the joint angles
``q``; plus one scale per source edge, shared by all frames and stored as its
logarithm so it stays positive.

Cost families (all weights are multipliers on sums of squares)::

    position   sum_t sum_e || d_H(e,t) - s_e d_R(e,t) ||^2
    angle      sum_t sum_e (1 - <u_H(e,t), u_R(e,t)>)    (unit directions)
    skating    sum_t sum_foot c(t) | p(t) - p(t-1) |_1 (smooth-L1) for foot and ankle links
    limits     squared overflow of q beyond its bounds
    smoothness root translation, chordal root rotation and q differences
    collision  hinge max(0, h(x, y) + radius - z) at every capsule midpoint
    contact    foot sole height minus terrain height while in contact
    scale      s_e - 1
    joint_reg  q of the regularized (leg yaw) joints
    anchor     root position minus source root position, weak, fixes the gauge
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, fields
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .geometry import RigidTransform, right_jacobian, rotvec_to_matrix, skew
from .kinematics import KinematicTree, RobotState, clamp_to_limits, fk_batch, link_position_jacobian, point_jacobian
from .nlls import ResidualBlock, SolveReport, SolverConfig, SolverError, solve
from .scene import FieldSampler, HeightField

log = logging.getLogger(__name__)

ZERO_EDGE = 1e-9
SKATE_DELTA = 1e-3  # m, smooth-L1 transition of the skating term


class RetargetError(RuntimeError):
    def __init__(self, message: str, block_costs: Optional[dict] = None):
        super().__init__(message)
        self.block_costs = block_costs or {}


@dataclass
class RetargetWeights:
    position: float = 1.0
    angle: float = 1.0
    skating: float = 5.0
    limits: float = 10.0
    smooth_root: float = 0.5
    smooth_joints: float = 0.1
    collision: float = 10.0
    scale_reg: float = 1.0
    joint_reg: float = 0.1
    contact: float = 1.0
    anchor_xy: float = 0.1
    anchor_z: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"weight {f.name} must be non-negative")

    @classmethod
    def only(cls, **kw) -> "RetargetWeights":
        """All weights zero except the ones given."""
        w = cls(**{f.name: 0.0 for f in fields(cls)})
        for k, v in kw.items():
            setattr(w, k, v)
        w.__post_init__()
        return w


@dataclass(eq=False)
class RetargetProblem:
    """Inputs of one retargeting solve.

    Args:
        source: ``(T, J, 3)`` source joint positions (meters, z up).
        source_names: names of the ``J`` source joints.
        edges: ``(i, j)`` index pairs into the source joints (kinematic neighbours).
        robot: robot tree; its ``correspondence`` maps source names to robot links.
        heightfield: terrain heightfield, or None for a flat floor at z = 0.
        contacts: ``(T, n_feet)`` contact flags, feet ordered as ``robot.foot_links``.
        weights: cost weights.
        source_root: name of the source joint the robot root follows.
    """

    source: np.ndarray
    source_names: tuple
    edges: tuple
    robot: KinematicTree
    heightfield: Optional[HeightField] = None
    contacts: Optional[np.ndarray] = None
    weights: RetargetWeights = dc_field(default_factory=RetargetWeights)
    source_root: str = "pelvis"

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float)
        if self.source.ndim != 3 or self.source.shape[2] != 3:
            raise ValueError("source must have shape (T, J, 3)")
        T, J, _ = self.source.shape
        if T < 2:
            raise ValueError("retargeting needs at least two frames")
        self.source_names = tuple(self.source_names)
        if len(self.source_names) != J:
            raise ValueError("one name per source joint required")
        self.edges = tuple((int(a), int(b)) for a, b in self.edges)
        for a, b in self.edges:
            if not (0 <= a < J and 0 <= b < J) or a == b:
                raise ValueError(f"invalid edge ({a}, {b})")
        missing = [n for n in self.source_names if n not in self.robot.correspondence]
        if missing:
            raise ValueError(f"no robot correspondence for {missing}")
        if self.source_root not in self.source_names:
            raise ValueError(f"source root {self.source_root!r} not among the source joints")
        if self.contacts is None:
            self.contacts = np.zeros((T, self.robot.n_feet), dtype=bool)
        self.contacts = np.asarray(self.contacts, dtype=bool)
        if self.contacts.shape != (T, self.robot.n_feet):
            raise ValueError(f"contacts must have shape ({T}, {self.robot.n_feet})")
        if not np.all(np.isfinite(self.source)):
            raise ValueError("source joints must be finite")

    @property
    def n_frames(self) -> int:
        return self.source.shape[0]

    @property
    def robot_joints(self) -> np.ndarray:
        """Robot link index matched to each source joint."""
        return self.robot.indices([self.robot.correspondence[n] for n in self.source_names])

    @classmethod
    def from_human(cls, joints, skeleton: KinematicTree, robot: KinematicTree, **kw) -> "RetargetProblem":
        """Problem whose source is a human skeleton trajectory ``(T, n_links, 3)``."""
        return cls(joints, tuple(skeleton.link_names), tuple(skeleton.edges), robot, **kw)


@dataclass(eq=False)
class RetargetVariables:
    root_R: np.ndarray  # (T, 3, 3)
    root_t: np.ndarray  # (T, 3)
    q: np.ndarray  # (T, n_dof)
    scale: np.ndarray  # (E,)

    def fk(self, robot: KinematicTree):
        return fk_batch(robot, self.root_R, self.root_t, self.q)


@dataclass(eq=False)
class RetargetResult:
    states: list  # RobotState per frame
    scale: np.ndarray
    report: SolveReport
    diagnostics: dict
    variables: RetargetVariables

    @property
    def q(self) -> np.ndarray:
        return self.variables.q


# ---------------------------------------------------------------------------
# per-frame cost evaluators (reference forms)
# ---------------------------------------------------------------------------

def edge_vectors(problem: RetargetProblem, P_robot: np.ndarray):
    """Source and robot edge vectors for joint positions ``(..., L, 3)``."""
    src = problem.source
    idx = problem.robot_joints
    a = np.array([e[0] for e in problem.edges])
    b = np.array([e[1] for e in problem.edges])
    dH = src[:, b] - src[:, a]
    dR = P_robot[..., idx[b], :] - P_robot[..., idx[a], :]
    return dH, dR


def motion_costs(problem: RetargetProblem, variables: RetargetVariables, t: int):
    """Position residuals ``(E, 3)`` and per-edge angle costs ``(E,)`` at frame ``t``.

    Edges of zero length in either embodiment contribute no angle cost and are
    listed under ``"skipped"`` in the returned diagnostics.
    """
    fk = fk_batch(problem.robot, variables.root_R[t], variables.root_t[t], variables.q[t:t + 1])
    dH, dR = edge_vectors(problem, fk.P)
    dH, dR = dH[t], dR[0]
    pos = dH - variables.scale[:, None] * dR
    nH = np.linalg.norm(dH, axis=1)
    nR = np.linalg.norm(dR, axis=1)
    ok = (nH > ZERO_EDGE) & (nR > ZERO_EDGE)
    ang = np.zeros(len(dH))
    ang[ok] = 1.0 - np.sum(dH[ok] * dR[ok], axis=1) / (nH[ok] * nR[ok])
    return pos, ang, {"skipped": np.nonzero(~ok)[0].tolist()}


def skating_cost(problem: RetargetProblem, variables: RetargetVariables, t: int) -> np.ndarray:
    """Per-axis foot and ankle displacements ``(2 * n_feet, 3)`` gated by contact at ``t``."""
    if t < 1:
        raise ValueError("skating is defined from the second frame on")
    robot = problem.robot
    links = robot.indices(list(robot.foot_links) + list(robot.ankle_links))
    fk = fk_batch(robot, variables.root_R[t - 1:t + 1], variables.root_t[t - 1:t + 1], variables.q[t - 1:t + 1])
    d = fk.P[1, links] - fk.P[0, links]
    gate = np.tile(problem.contacts[t], 2)
    return d * gate[:, None]


def world_collision_cost(robot: KinematicTree, variables: RetargetVariables, field, t: int) -> np.ndarray:
    """Hinge penetration of every capsule midpoint below the terrain, ``(n_capsules,)``."""
    sampler = _sampler(field)
    fk = fk_batch(robot, variables.root_R[t], variables.root_t[t], variables.q[t:t + 1])
    mids = np.array([fk.P[0, robot.index(c.link)] + fk.R[0, robot.index(c.link)] @ c.midpoint
                     for c in robot.capsules])
    radii = np.array([c.radius for c in robot.capsules])
    h = sampler.height(mids[:, :2])
    return np.maximum(0.0, h + radii - mids[:, 2])


def skating_metric(positions: np.ndarray, contacts: np.ndarray) -> float:
    """Mean displacement per frame of in-contact feet, ``positions`` ``(T, F, 3)``."""
    positions = np.asarray(positions, dtype=float)
    contacts = np.asarray(contacts, dtype=bool)
    d = np.linalg.norm(np.diff(positions, axis=0), axis=-1)
    gate = contacts[1:]
    if not gate.any():
        return 0.0
    return float(d[gate].mean())


class _FlatFloor:
    def height(self, xy, with_gradient=False):
        xy = np.asarray(xy, dtype=float)
        z = np.zeros(xy.shape[:-1])
        return (z, np.zeros(xy.shape)) if with_gradient else z


class _FieldHeight:
    def __init__(self, field: HeightField):
        self._s = FieldSampler(field)

    def height(self, xy, with_gradient=False):
        return self._s(xy, with_gradient=with_gradient)


def _sampler(field):
    if field is None:
        return _FlatFloor()
    if isinstance(field, (_FlatFloor, _FieldHeight)):
        return field
    return _FieldHeight(field)


# ---------------------------------------------------------------------------
# vectorized model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    T: int
    D: int
    E: int

    @property
    def C(self) -> int:
        return 6 + self.D

    @property
    def n(self) -> int:
        return self.E + self.T * self.C

    def frame_cols(self) -> np.ndarray:
        return self.E + self.C * np.arange(self.T)[:, None] + np.arange(self.C)

    def unpack(self, x):
        T, C = self.T, self.C
        sig = x[:self.E]
        fr = x[self.E:].reshape(T, C)
        return sig, fr[:, :3], fr[:, 3:6], fr[:, 6:]

    def pack(self, sig, gamma, dphi, q):
        return np.concatenate([sig, np.concatenate([gamma, dphi, q], axis=1).ravel()])


class _Model:
    def __init__(self, problem: RetargetProblem, R_init: np.ndarray):
        self.p = problem
        self.robot = problem.robot
        self.layout = _Layout(problem.n_frames, problem.robot.n_dof, len(problem.edges))
        self.R0 = R_init
        self.sampler = _sampler(problem.heightfield)
        self._key = None
        self._jac = self._cap = None
        r = self.robot
        self.pair_a = problem.robot_joints[[e[0] for e in problem.edges]]
        self.pair_b = problem.robot_joints[[e[1] for e in problem.edges]]
        self.skate_links = r.indices(list(r.foot_links) + list(r.ankle_links))
        self.foot_links = r.indices(list(r.foot_links))
        self.caps = [(r.index(c.link), c.midpoint, c.radius) for c in r.capsules]

    def update(self, x):
        key = x.tobytes()
        if key == self._key:
            return
        sig, gamma, dphi, q = self.layout.unpack(x)
        self.s = np.exp(sig)
        self.gamma, self.dphi, self.q = gamma, dphi, q
        self.Rroot = self.R0 @ rotvec_to_matrix(dphi)
        self.fk = fk_batch(self.robot, self.Rroot, gamma, q)
        self._jac = None
        self._cap = None
        self._key = key

    def _root_map(self):
        return self.Rroot @ right_jacobian(self.dphi)  # world rotation perturbation per dphi

    def link_jac(self):
        """Per-frame Jacobian ``(T, L, 3, C)`` of every link origin w.r.t. [gamma, dphi, q]."""
        if self._jac is None:
            dq, drot = link_position_jacobian(self.robot, self.fk)
            T, L = dq.shape[:2]
            J = np.empty((T, L, 3, self.layout.C))
            J[..., :3] = np.eye(3)
            J[..., 3:6] = drot @ self._root_map()[:, None]
            J[..., 6:] = dq
            self._jac = J
        return self._jac

    def capsules(self):
        """Midpoints ``(T, K, 3)``, radii and Jacobians ``(T, K, 3, C)``."""
        if self._cap is None:
            fk = self.fk
            T = fk.P.shape[0]
            mids, jacs = [], []
            M = self._root_map()
            for link, mid, _ in self.caps:
                p = fk.P[:, link] + fk.R[:, link] @ mid
                dq, drot = point_jacobian(self.robot, fk, link, p)
                J = np.empty((T, 3, self.layout.C))
                J[:, :, :3] = np.eye(3)
                J[:, :, 3:6] = drot @ M
                J[:, :, 6:] = dq
                mids.append(p)
                jacs.append(J)
            radii = np.array([c[2] for c in self.caps])
            self._cap = (np.stack(mids, 1), radii, np.stack(jacs, 1))
        return self._cap


def _frame_matrix(values, layout: _Layout, row_offset=0, extra=None):
    """CSR from per-frame blocks ``(T, m, C)``; ``extra`` adds ``(T, m, E)`` scale columns."""
    T, m, C = values.shape
    rows = np.broadcast_to(np.arange(T * m).reshape(T, m, 1), (T, m, C))
    cols = np.broadcast_to(layout.frame_cols()[:, None, :], (T, m, C))
    data, rr, cc = [values.ravel()], [rows.ravel()], [cols.ravel()]
    if extra is not None:
        E = extra.shape[2]
        rows_e = np.broadcast_to(np.arange(T * m).reshape(T, m, 1), (T, m, E))
        cols_e = np.broadcast_to(np.arange(E), (T, m, E))
        data.append(extra.ravel())
        rr.append(rows_e.ravel())
        cc.append(cols_e.ravel())
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))),
                         shape=(T * m, layout.n))


def _diff_matrix(T, cols, n):
    """Rows ``x[t] - x[t-1]`` over column groups ``cols`` ``(T, k)``."""
    k = cols.shape[1]
    m = (T - 1) * k
    r = np.arange(m)
    data = np.r_[np.ones(m), -np.ones(m)]
    return sp.csr_matrix((data, (np.r_[r, r], np.r_[cols[1:].ravel(), cols[:-1].ravel()])), shape=(m, n))


def build_blocks(problem: RetargetProblem, model: _Model) -> list:
    """Residual blocks of the retargeting objective (zero-weight families omitted)."""
    w = problem.weights
    lay = model.layout
    T, E, D = lay.T, lay.E, lay.D
    idx = np.arange(lay.n)
    src = problem.source
    ea = np.array([e[0] for e in problem.edges])
    eb = np.array([e[1] for e in problem.edges])
    dH = src[:, eb] - src[:, ea]
    nH = np.linalg.norm(dH, axis=-1)
    uH = np.where(nH[..., None] > ZERO_EDGE, dH / np.maximum(nH, ZERO_EDGE)[..., None], 0.0)
    blocks = []

    def add(name, weight, res, jac, **kw):
        if weight > 0:
            blocks.append(ResidualBlock(name, idx, res, jac, weight=weight, **kw))

    def robot_edges(x):
        model.update(x)
        P = model.fk.P
        return P[:, model.pair_b] - P[:, model.pair_a]

    def edge_jac(x):
        J = model.link_jac()
        return J[:, model.pair_b] - J[:, model.pair_a]  # (T, E, 3, C)

    def r_pos(x):
        return (dH - model_s(x)[None, :, None] * robot_edges(x)).ravel()

    def model_s(x):
        model.update(x)
        return model.s

    def j_pos(x):
        dR = robot_edges(x)
        s = model.s
        Je = -s[None, :, None, None] * edge_jac(x)
        extra = np.zeros((T, E, 3, E))
        extra[:, np.arange(E), :, np.arange(E)] = -(s[:, None, None] * dR.transpose(1, 0, 2))
        return _frame_matrix(Je.reshape(T, E * 3, lay.C), lay, extra=extra.reshape(T, E * 3, E))

    add("position", 2 * w.position, r_pos, j_pos)

    def angle_parts(x):
        dR = robot_edges(x)
        nR = np.linalg.norm(dR, axis=-1)
        ok = (nR > ZERO_EDGE) & (nH > ZERO_EDGE)
        uR = dR / np.maximum(nR, ZERO_EDGE)[..., None]
        return dR, nR, uR, ok

    def r_ang(x):
        _, _, uR, ok = angle_parts(x)
        return ((uH - uR) * ok[..., None]).ravel()

    def j_ang(x):
        _, nR, uR, ok = angle_parts(x)
        proj = (np.eye(3) - uR[..., :, None] * uR[..., None, :]) / np.maximum(nR, ZERO_EDGE)[..., None, None]
        Je = -(proj @ edge_jac(x)) * ok[..., None, None]
        return _frame_matrix(Je.reshape(T, E * 3, lay.C), lay)

    add("angle", w.angle, r_ang, j_ang)

    gate = np.concatenate([problem.contacts, problem.contacts], axis=1)[1:].astype(float)  # (T-1, 2F)
    ns = len(model.skate_links)

    def r_skate(x):
        model.update(x)
        P = model.fk.P[:, model.skate_links]
        return ((P[1:] - P[:-1]) * gate[..., None]).ravel()

    def j_skate(x):
        model.update(x)
        J = model.link_jac()[:, model.skate_links] * np.r_[np.zeros((1, ns)), gate][..., None, None]
        Jp = model.link_jac()[:, model.skate_links] * np.r_[gate, np.zeros((1, ns))][..., None, None]
        now = _frame_matrix(J.reshape(T, ns * 3, lay.C), lay)[ns * 3:]
        prev = _frame_matrix(Jp.reshape(T, ns * 3, lay.C), lay)[:-ns * 3]
        return now - prev

    if problem.contacts[1:].any():
        # smooth-L1 with unit tail slope: cost ~ w * sum |displacement| beyond SKATE_DELTA
        add("skating", w.skating / SKATE_DELTA, r_skate, j_skate, robust="smooth_l1", delta=SKATE_DELTA)

    lo = np.where(np.isfinite(problem.robot.lower), problem.robot.lower, -np.inf)
    hi = np.where(np.isfinite(problem.robot.upper), problem.robot.upper, np.inf)
    qcols = lay.frame_cols()[:, 6:]

    def r_lim(x):
        model.update(x)
        q = model.q
        return (np.maximum(q - hi, 0.0) - np.maximum(lo - q, 0.0)).ravel()

    def j_lim(x):
        model.update(x)
        q = model.q
        active = ((q > hi) | (q < lo)).astype(float).ravel()
        m = T * D
        return sp.csr_matrix((active, (np.arange(m), qcols.ravel())), shape=(m, lay.n))

    add("limits", 2 * w.limits, r_lim, j_lim)

    fc = lay.frame_cols()
    Dg = _diff_matrix(T, fc[:, :3], lay.n)
    Dq = _diff_matrix(T, fc[:, 6:], lay.n)
    add("smooth_root_translation", 2 * w.smooth_root, lambda x: Dg @ x, lambda x: Dg)
    add("smooth_joints", 2 * w.smooth_joints, lambda x: Dq @ x, lambda x: Dq)

    def r_rot(x):
        model.update(x)
        R = model.Rroot
        return (R[1:] - R[:-1]).ravel()

    def j_rot(x):
        model.update(x)
        R = model.Rroot
        M = right_jacobian(model.dphi)
        # d(R exp(M e))/de_k = R skew(M[:, k])
        dR = np.stack([R @ skew(M[:, :, k]) for k in range(3)], axis=-1)
        blk = np.zeros((T, 9, lay.C))
        blk[:, :, 3:6] = dR.reshape(T, 9, 3)
        now = _frame_matrix(blk, lay)[9:]
        prev = _frame_matrix(blk, lay)[:-9]
        return now - prev

    add("smooth_root_rotation", 2 * w.smooth_root, r_rot, j_rot)

    def r_col(x):
        model.update(x)
        mids, radii, _ = model.capsules()
        h = model.sampler.height(mids[..., :2])
        return np.maximum(0.0, h + radii - mids[..., 2]).ravel()

    def j_col(x):
        model.update(x)
        mids, radii, J = model.capsules()
        h, g = model.sampler.height(mids[..., :2], with_gradient=True)
        active = (h + radii - mids[..., 2]) > 0
        d = np.concatenate([g, -np.ones(g.shape[:-1] + (1,))], axis=-1) * active[..., None]  # (T, K, 3)
        blk = np.einsum("tki,tkic->tkc", d, J)
        return _frame_matrix(blk, lay)

    add("collision", 2 * w.collision, r_col, j_col)

    feet = model.foot_links
    cgate = problem.contacts.astype(float)

    def r_contact(x):
        model.update(x)
        P = model.fk.P[:, feet]
        return ((P[..., 2] - model.sampler.height(P[..., :2])) * cgate).ravel()

    def j_contact(x):
        model.update(x)
        P = model.fk.P[:, feet]
        _, g = model.sampler.height(P[..., :2], with_gradient=True)
        d = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1) * cgate[..., None]
        blk = np.einsum("tki,tkic->tkc", d, model.link_jac()[:, feet])
        return _frame_matrix(blk, lay)

    if problem.contacts.any():
        add("contact", 2 * w.contact, r_contact, j_contact)

    def r_scale(x):
        return np.exp(x[:E]) - 1.0

    def j_scale(x):
        return sp.csr_matrix((np.exp(x[:E]), (np.arange(E), np.arange(E))), shape=(E, lay.n))

    add("scale_reg", 2 * w.scale_reg, r_scale, j_scale)

    reg = problem.robot.dof_indices(problem.robot.regularized_joints) if problem.robot.regularized_joints else []
    if len(reg):
        rc = fc[:, 6:][:, reg]
        Sreg = sp.csr_matrix((np.ones(rc.size), (np.arange(rc.size), rc.ravel())), shape=(rc.size, lay.n))
        add("joint_reg", 2 * w.joint_reg, lambda x: Sreg @ x, lambda x: Sreg)

    root_src = src[:, problem.source_names.index(problem.source_root)]
    root_link = problem.robot_joints[problem.source_names.index(problem.source_root)]
    aw = np.sqrt(np.array([w.anchor_xy, w.anchor_xy, w.anchor_z]))

    def r_anchor(x):
        model.update(x)
        return ((model.fk.P[:, root_link] - root_src) * aw).ravel()

    def j_anchor(x):
        model.update(x)
        return _frame_matrix(model.link_jac()[:, root_link] * aw[:, None], lay)

    if aw.any():
        add("anchor", 2.0, r_anchor, j_anchor)
    return blocks


# ---------------------------------------------------------------------------
# initialization and solve
# ---------------------------------------------------------------------------

def _root_frame(problem: RetargetProblem):
    """Root rotation from the source hips and spine (x forward, y left, z up)."""
    names = problem.source_names
    src = problem.source
    pelvis = src[:, names.index(problem.source_root)]
    try:
        left = src[:, names.index("l_hip")] - src[:, names.index("r_hip")]
        up = src[:, names.index("spine")] - pelvis
    except ValueError:
        return np.broadcast_to(np.eye(3), (len(src), 3, 3)).copy(), pelvis
    y = left / np.linalg.norm(left, axis=1, keepdims=True)
    up = up - np.sum(up * y, axis=1, keepdims=True) * y
    z = up / np.linalg.norm(up, axis=1, keepdims=True)
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=-1), pelvis


def initial_variables(problem: RetargetProblem) -> RetargetVariables:
    R, pelvis = _root_frame(problem)
    T = problem.n_frames
    return RetargetVariables(R, pelvis.copy(), np.zeros((T, problem.robot.n_dof)), np.ones(len(problem.edges)))


def track_directions(problem: RetargetProblem, init: RetargetVariables, prior: float = 1e-3) -> RetargetVariables:
    """Frame-by-frame fit of edge directions, each frame started from the previous one.

    Frames solved independently from a common start can settle in mirrored
    limb configurations; following the motion keeps every frame on the branch
    of its predecessor. Returns a copy of ``init`` with new root rotations and q.
    """
    robot = problem.robot
    T = problem.n_frames
    ea = np.array([e[0] for e in problem.edges])
    eb = np.array([e[1] for e in problem.edges])
    la = problem.robot_joints[ea]
    lb = problem.robot_joints[eb]
    dH = problem.source[:, eb] - problem.source[:, ea]
    nH = np.linalg.norm(dH, axis=-1)
    uH = dH / np.maximum(nH, ZERO_EDGE)[..., None]
    okH = nH > ZERO_EDGE
    R_out = np.array(init.root_R, dtype=float, copy=True)
    q_out = np.array(init.q, dtype=float, copy=True)
    D = robot.n_dof
    quiet = SolverConfig(max_iterations=30, cost_tol=1e-10)
    R_prev, q_prev = R_out[0], q_out[0]
    for t in range(T):
        R_start = R_prev if t else R_out[0]
        state = {}

        def fk_at(z):
            key = z.tobytes()
            if state.get("key") != key:
                R = R_start @ rotvec_to_matrix(z[:3])
                fk = fk_batch(robot, R, init.root_t[t], z[3:][None])
                dR = fk.P[0, lb] - fk.P[0, la]
                nR = np.linalg.norm(dR, axis=-1)
                state.update(key=key, R=R, fk=fk, dR=dR, nR=nR)
            return state

        def res(z):
            st = fk_at(z)
            uR = st["dR"] / np.maximum(st["nR"], ZERO_EDGE)[:, None]
            return ((uH[t] - uR) * okH[t][:, None]).ravel()

        def jac(z):
            st = fk_at(z)
            fk = st["fk"]
            dq, drot = link_position_jacobian(robot, fk)
            Jl = np.concatenate([drot[0] @ (st["R"] @ right_jacobian(z[:3])), dq[0]], axis=-1)
            uR = st["dR"] / np.maximum(st["nR"], ZERO_EDGE)[:, None]
            proj = (np.eye(3) - uR[:, :, None] * uR[:, None, :]) / np.maximum(st["nR"], ZERO_EDGE)[:, None, None]
            return (-(proj @ (Jl[lb] - Jl[la])) * okH[t][:, None, None]).reshape(-1, 3 + D)

        q_start = q_prev if t else q_out[0]
        blocks = [ResidualBlock("angle", np.arange(3 + D), res, jac),
                  ResidualBlock("prior", np.arange(3, 3 + D), lambda v, q0=q_start: v - q0,
                                lambda v: np.eye(D), weight=prior)]
        z0 = np.concatenate([np.zeros(3), q_start])
        try:
            z, _ = solve(blocks, z0, quiet)
        except SolverError:
            z = z0
        R_prev = R_start @ rotvec_to_matrix(z[:3])
        q_prev = z[3:]
        R_out[t], q_out[t] = R_prev, q_prev
    return RetargetVariables(R_out, np.array(init.root_t, copy=True), q_out, np.array(init.scale, copy=True))


def solve_retarget(problem: RetargetProblem, config: Optional[SolverConfig] = None,
                   init: Optional[RetargetVariables] = None, warm_start: bool = True) -> RetargetResult:
    """Optimize robot joints, root poses and edge scales; clamp q to limits at the end.

    Starts from `initial_variables` (root from the source pelvis, q = 0, s = 1)
    unless ``init`` is given, refined by `track_directions` when ``warm_start``.
    """
    config = config or SolverConfig(max_iterations=100, cost_tol=1e-9)
    init = init or initial_variables(problem)
    if warm_start:
        init = track_directions(problem, init)
    model = _Model(problem, np.asarray(init.root_R, dtype=float))
    lay = model.layout
    x0 = lay.pack(np.log(init.scale), init.root_t, np.zeros((lay.T, 3)), init.q)
    blocks = build_blocks(problem, model)
    try:
        x, report = solve(blocks, x0, config)
    except SolverError as exc:
        raise RetargetError(f"retargeting failed: {exc}", exc.block_costs) from exc
    model.update(x)
    q = clamp_to_limits(problem.robot, model.q)
    variables = RetargetVariables(model.Rroot.copy(), model.gamma.copy(), q, model.s.copy())
    fk = variables.fk(problem.robot)
    dH, dR = edge_vectors(problem, fk.P)
    per_frame = np.linalg.norm(dH - variables.scale[None, :, None] * dR, axis=-1).mean(axis=1)
    feet = problem.robot.indices(list(problem.robot.foot_links))
    diagnostics = {
        "edge_error": per_frame,
        "skating": skating_metric(fk.P[:, feet], problem.contacts),
        "block_costs": dict(report.block_costs),
    }
    states = [RobotState(RigidTransform.from_rt(variables.root_R[t], variables.root_t[t]), q[t])
              for t in range(lay.T)]
    log.info("retarget: %d frames, cost %.4g -> %.4g in %d iterations (%s)", lay.T, report.initial_cost,
             report.final_cost, report.iterations, report.reason)
    return RetargetResult(states, variables.scale.copy(), report, diagnostics, variables)


def source_skating(problem: RetargetProblem, skeleton: Optional[KinematicTree] = None) -> float:
    """Skating metric of the source feet (source joints named like the skeleton's foot links)."""
    names = problem.source_names
    if skeleton is not None:
        foot_names = list(skeleton.foot_links)
    else:
        inv = {v: k for k, v in problem.robot.correspondence.items()}
        foot_names = [inv[f] for f in problem.robot.foot_links]
    idx = [names.index(n) for n in foot_names]
    return skating_metric(problem.source[:, idx], problem.contacts)


def robot_as_source(robot: KinematicTree, skeleton: KinematicTree, root_R, root_t, q) -> np.ndarray:
    """Source joints ``(T, n_links, 3)`` read off the robot at the corresponded links.

    Feeding these back into `solve_retarget` is the identity-embodiment check.
    """
    fk = fk_batch(robot, root_R, root_t, q)
    idx = robot.indices([robot.correspondence[n] for n in skeleton.link_names])
    return fk.P[:, idx]
