"""State containers shared by observations and rewards, plus a kinematic playback driver.

Nothing here steps physics. A simulator (or a test) fills `StateSnapshot`
objects; `playback` builds them from a kinematic trajectory so the reward and
observation code can be exercised end to end without an engine.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import matrix_to_euler_zyx, matrix_to_rotvec, rotvec_to_matrix
from ..kinematics import KinematicTree, fk_batch

CONTACT_FORCE = 1.0  # N, a foot counts as in contact above this


@dataclass(eq=False)
class StateSnapshot:
    """Robot state at one control step. Velocities are world-frame."""

    t: int
    root_R: np.ndarray  # (3, 3)
    root_pos: np.ndarray  # (3,)
    root_lin_vel: np.ndarray  # (3,)
    root_ang_vel: np.ndarray  # (3,)
    q: np.ndarray  # (n_dof,)
    qd: np.ndarray  # (n_dof,)
    link_pos: np.ndarray  # (L, 3)
    link_vel: np.ndarray  # (L, 3)
    link_R: np.ndarray  # (L, 3, 3)
    foot_forces: np.ndarray  # (n_feet,) contact force magnitude
    prev_action: np.ndarray  # a^{t-1}
    action: np.ndarray  # a^t
    link_forces: Optional[np.ndarray] = None  # (L,) contact force magnitude per link

    def __post_init__(self):
        for name in ("root_R", "root_pos", "root_lin_vel", "root_ang_vel", "q", "qd", "link_pos",
                     "link_vel", "link_R", "foot_forces", "prev_action", "action"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.link_forces is not None:
            self.link_forces = np.asarray(self.link_forces, dtype=float)
        if self.root_R.shape != (3, 3):
            raise ValueError("root_R must be 3x3")
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have the same shape")
        L = self.link_pos.shape[0]
        if self.link_vel.shape != (L, 3) or self.link_R.shape != (L, 3, 3):
            raise ValueError("link arrays disagree on the number of links")
        if self.action.shape != self.prev_action.shape:
            raise ValueError("action and prev_action must have the same shape")

    @property
    def contacts(self) -> np.ndarray:
        return self.foot_forces > CONTACT_FORCE

    def validate(self, robot: KinematicTree) -> None:
        if self.q.shape != (robot.n_dof,):
            raise ValueError(f"q has {self.q.size} entries, robot has {robot.n_dof} DoF")
        if self.link_pos.shape[0] != robot.n_links:
            raise ValueError(f"{self.link_pos.shape[0]} links given, robot has {robot.n_links}")
        if self.foot_forces.shape != (robot.n_feet,):
            raise ValueError(f"expected {robot.n_feet} foot forces")


@dataclass(eq=False)
class ReferenceFrame:
    """Target state from the reference motion at one control step."""

    q: np.ndarray
    qd: np.ndarray
    root_R: np.ndarray
    root_pos: np.ndarray
    link_pos: np.ndarray
    link_vel: np.ndarray
    link_R: np.ndarray
    contacts: np.ndarray  # (n_feet,) bool

    def __post_init__(self):
        for name in ("q", "qd", "root_R", "root_pos", "link_pos", "link_vel", "link_R"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.contacts = np.asarray(self.contacts, dtype=bool)
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have the same shape")

    @property
    def roll_pitch_yaw(self) -> tuple[float, float, float]:
        return matrix_to_euler_zyx(self.root_R)


@dataclass(eq=False)
class KinematicClip:
    """Robot trajectory sampled at the control rate."""

    root_R: np.ndarray  # (T, 3, 3)
    root_pos: np.ndarray  # (T, 3)
    q: np.ndarray  # (T, n_dof)
    contacts: np.ndarray  # (T, n_feet)
    dt: float = 0.02

    def __len__(self) -> int:
        return self.q.shape[0]


def _fd(x: np.ndarray, dt: float) -> np.ndarray:
    """Backward differences, first frame copies the second."""
    v = np.zeros_like(x)
    if len(x) > 1:
        v[1:] = (x[1:] - x[:-1]) / dt
        v[0] = v[1]
    return v


def _angular_velocity(R: np.ndarray, dt: float) -> np.ndarray:
    w = np.zeros((len(R), 3))
    if len(R) > 1:
        rel = R[1:] @ np.swapaxes(R[:-1], -1, -2)  # world-frame increment
        w[1:] = matrix_to_rotvec(rel) / dt
        w[0] = w[1]
    return w


def reference_frames(robot: KinematicTree, clip: KinematicClip) -> list[ReferenceFrame]:
    fk = fk_batch(robot, clip.root_R, clip.root_pos, clip.q)
    qd = _fd(clip.q, clip.dt)
    lv = _fd(fk.P, clip.dt)
    return [ReferenceFrame(q=clip.q[t], qd=qd[t], root_R=clip.root_R[t], root_pos=clip.root_pos[t],
                           link_pos=fk.P[t], link_vel=lv[t], link_R=fk.R[t], contacts=clip.contacts[t])
            for t in range(len(clip))]


def playback(robot: KinematicTree, clip: KinematicClip, rng: Optional[np.random.Generator] = None,
             q_noise: float = 0.0, root_noise: float = 0.0, foot_force: float = 400.0,
             actions: Optional[np.ndarray] = None) -> list[StateSnapshot]:
    """Replay a clip as if a controller tracked it, optionally perturbed.

    Args:
        robot: robot description.
        clip: reference trajectory.
        rng: generator for the perturbations (required if any noise is nonzero).
        q_noise: std of Gaussian noise added to joint angles (rad).
        root_noise: std of Gaussian noise added to the root position (m) and
            to the root rotation vector (rad).
        foot_force: force magnitude reported on feet flagged in contact.
        actions: optional ``(T, n_act)`` actions; defaults to zeros.

    Returns:
        One snapshot per frame.
    """
    T = len(clip)
    q = clip.q.copy()
    root_pos = clip.root_pos.copy()
    root_R = clip.root_R.copy()
    if q_noise > 0 or root_noise > 0:
        if rng is None:
            raise ValueError("rng is required for perturbed playback")
        q = q + q_noise * rng.standard_normal(q.shape)
        root_pos = root_pos + root_noise * rng.standard_normal(root_pos.shape)
        root_R = root_R @ rotvec_to_matrix(root_noise * rng.standard_normal((T, 3)))
    fk = fk_batch(robot, root_R, root_pos, q)
    qd = _fd(q, clip.dt)
    lv = _fd(fk.P, clip.dt)
    rv = _fd(root_pos, clip.dt)
    w = _angular_velocity(root_R, clip.dt)
    A = np.zeros((T, robot.n_dof)) if actions is None else np.asarray(actions, dtype=float)
    forces = np.where(np.asarray(clip.contacts, dtype=bool), foot_force, 0.0)
    out = []
    for t in range(T):
        out.append(StateSnapshot(
            t=t, root_R=root_R[t], root_pos=root_pos[t], root_lin_vel=rv[t], root_ang_vel=w[t],
            q=q[t], qd=qd[t], link_pos=fk.P[t], link_vel=lv[t], link_R=fk.R[t],
            foot_forces=forces[t], prev_action=A[t - 1] if t > 0 else np.zeros_like(A[0]), action=A[t],
            link_forces=np.zeros(robot.n_links)))
    return out


def snapshot_at_reference(reference: ReferenceFrame, foot_force: float = 400.0, n_act: Optional[int] = None,
                          t: int = 0) -> StateSnapshot:
    """A snapshot that matches the reference exactly, with zero actions."""
    n_act = reference.q.size if n_act is None else n_act
    return StateSnapshot(
        t=t, root_R=reference.root_R, root_pos=reference.root_pos, root_lin_vel=np.zeros(3),
        root_ang_vel=np.zeros(3), q=reference.q, qd=reference.qd, link_pos=reference.link_pos,
        link_vel=reference.link_vel, link_R=reference.link_R,
        foot_forces=np.where(reference.contacts, foot_force, 0.0),
        prev_action=np.zeros(n_act), action=np.zeros(n_act),
        link_forces=np.zeros(reference.link_pos.shape[0]))
