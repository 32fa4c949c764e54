"""Policy and critic observation vectors.

Every block carrying "(last 5)" stacks the five most recent snapshots, oldest
first. Base velocities and gravity are expressed in the root frame; target
offsets use the heading-only (yaw) frame of the robot.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..geometry import matrix_to_euler_zyx, matrix_to_quat, rot_z, wrap_angle, yaw_of
from ..kinematics import KinematicTree
from .state import CONTACT_FORCE, ReferenceFrame, StateSnapshot

MODES = ("mpt", "tracking", "distill", "critic")
HEIGHTMAP_DIM = 121


class LayoutError(ValueError):
    def __init__(self, block: str, expected: int, got: int):
        super().__init__(f"block '{block}': expected {expected} values, got {got}")
        self.block = block


@dataclass(frozen=True)
class ObservationLayout:
    mode: str
    n_dof: int = 23
    n_act: Optional[int] = None
    n_links: int = 30
    n_feet: int = 2
    history: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.history < 1:
            raise ValueError("history must be at least 1")

    @classmethod
    def for_robot(cls, mode: str, robot: KinematicTree, history: int = 5) -> "ObservationLayout":
        return cls(mode=mode, n_dof=robot.n_dof, n_links=robot.n_links, n_feet=robot.n_feet, history=history)

    @property
    def actions(self) -> int:
        return self.n_dof if self.n_act is None else self.n_act

    def blocks(self) -> list[tuple[str, int]]:
        h, m = self.history, self.mode
        out = [("base_ang_vel", 3 * h)]
        if m == "critic":
            out.append(("base_lin_vel", 3 * h))
        out += [("projected_gravity", 3 * h), ("dof_pos", self.n_dof * h), ("dof_vel", self.n_dof * h),
                ("actions", self.actions * h), ("target_pos_local", 2 * h), ("target_yaw_local", h)]
        if m != "distill":
            out += [("target_dof_pos", self.n_dof), ("target_roll", 1), ("target_pitch", 1)]
        if m != "mpt":
            out.append(("heightmap", HEIGHTMAP_DIM))
        if m == "critic":
            L = self.n_links
            out += [("root_height", 1), ("link_heights", L), ("root_quat", 4), ("root_pos", 3),
                    ("joint_pos", self.n_dof), ("link_pos", 3 * L), ("link_vel", 3 * L),
                    ("feet_contact", self.n_feet), ("feet_target_contact", self.n_feet)]
        return out

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.blocks())

    def slices(self) -> dict:
        out, i = {}, 0
        for name, d in self.blocks():
            out[name] = slice(i, i + d)
            i += d
        return out


def _pad(history: Sequence[StateSnapshot], n: int) -> list:
    if not history:
        raise ValueError("observation history is empty")
    hist = list(history)[-n:]
    return [hist[0]] * (n - len(hist)) + hist


def local_target(snapshot: StateSnapshot, reference: ReferenceFrame) -> tuple[np.ndarray, float]:
    """Target xy offset in the robot heading frame and the yaw error."""
    yaw = float(yaw_of(snapshot.root_R))
    d = reference.root_pos - snapshot.root_pos
    xy = (rot_z(-yaw) @ d)[:2]
    dyaw = float(wrap_angle(yaw_of(reference.root_R) - yaw))
    return xy, dyaw


def build_observation(history: Sequence[StateSnapshot], reference: ReferenceFrame,
                      patch: Optional[np.ndarray], layout: ObservationLayout) -> np.ndarray:
    """Concatenate the observation blocks for ``layout.mode``.

    Args:
        history: recent snapshots, most recent last. Fewer than
            ``layout.history`` entries are padded by repeating the oldest.
        reference: current target frame.
        patch: local terrain heights (121 values); ignored in MPT mode.
        layout: observation layout.

    Returns:
        Flat float vector of length ``layout.dim``.
    """
    hist = _pad(history, layout.history)
    g = np.array([0.0, 0.0, -1.0])
    values = {}
    values["base_ang_vel"] = np.concatenate([s.root_R.T @ s.root_ang_vel for s in hist])
    values["base_lin_vel"] = np.concatenate([s.root_R.T @ s.root_lin_vel for s in hist])
    values["projected_gravity"] = np.concatenate([s.root_R.T @ g for s in hist])
    values["dof_pos"] = np.concatenate([s.q for s in hist])
    values["dof_vel"] = np.concatenate([s.qd for s in hist])
    values["actions"] = np.concatenate([s.prev_action for s in hist])
    loc = [local_target(s, reference) for s in hist]
    values["target_pos_local"] = np.concatenate([xy for xy, _ in loc])
    values["target_yaw_local"] = np.array([dy for _, dy in loc])
    roll, pitch, _ = matrix_to_euler_zyx(reference.root_R)
    values["target_dof_pos"] = reference.q
    values["target_roll"] = np.array([roll])
    values["target_pitch"] = np.array([pitch])
    if layout.mode != "mpt":
        if patch is None:
            raise LayoutError("heightmap", HEIGHTMAP_DIM, 0)
        values["heightmap"] = np.asarray(patch, dtype=float).ravel()
    cur = hist[-1]
    if layout.mode == "critic":
        values["root_height"] = cur.root_pos[2:3]
        values["link_heights"] = cur.link_pos[:, 2]
        values["root_quat"] = matrix_to_quat(cur.root_R)
        values["root_pos"] = cur.root_pos
        values["joint_pos"] = cur.q
        values["link_pos"] = cur.link_pos.ravel()
        values["link_vel"] = cur.link_vel.ravel()
        values["feet_contact"] = (cur.foot_forces > CONTACT_FORCE).astype(float)
        values["feet_target_contact"] = reference.contacts.astype(float)
    parts = []
    for name, dim in layout.blocks():
        v = np.asarray(values[name], dtype=float).ravel()
        if v.size != dim:
            raise LayoutError(name, dim, v.size)
        parts.append(v)
    return np.concatenate(parts)
