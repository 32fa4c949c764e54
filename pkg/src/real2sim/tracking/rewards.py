"""DeepMimic-style tracking rewards, penalties, termination and the actor bounds loss."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import rotation_angle
from ..kinematics import KinematicTree
from .state import ReferenceFrame, StateSnapshot

TRACKING_TERMS = ("joint_pos", "joint_vel", "root_ori", "torso_pos", "torso_ori", "link_pos", "link_vel")
PENALTY_TERMS = ("action_rate", "ankle_action", "dof_limits", "collision", "contact_no_vel")
TERMINATION_THRESHOLDS = {"mpt": 0.3, "terrain": 0.5, "finetune": 1.2}
BOUNDS_LOSS_COEF = 0.0005
ACTION_LIMIT = 8.0


@dataclass(frozen=True)
class RewardConfig:
    """Weights and sharpness of every reward term.

    Penalty weights are stored as magnitudes and applied with a negative sign.
    ``action_rate`` and ``ankle_action`` ramp linearly from their ``*_start``
    values to the full weight over ``anneal_horizon`` updates.
    """

    joint_pos: float = 120.0
    joint_pos_k: float = 2.0
    joint_vel: float = 24.0
    joint_vel_k: float = 0.01
    root_ori: float = 15.0
    root_ori_k: float = 3.0
    torso_pos: float = 15.0
    torso_pos_k: float = 50.0
    torso_ori: float = 15.0
    torso_ori_k: float = 3.0
    link_pos: float = 30.0
    link_pos_k: float = 5.0
    link_vel: float = 5.0
    link_vel_k: float = 0.1
    feet_contact_match: float = 1.0
    air_time: float = 2000.0
    air_time_k: float = 0.25
    action_rate: float = 8.0
    action_rate_start: float = 0.2
    ankle_action: float = 4.0
    ankle_action_start: float = 0.0
    dof_limits: float = 50.0
    dof_limit_fraction: float = 0.98
    collision: float = 1.0
    collision_force: float = 0.1
    contact_no_vel: float = 100.0
    contact_force: float = 1.0
    alive: float = 300.0
    termination: float = 500.0
    termination_threshold: float = 0.3
    anneal_horizon: int = 1000
    anneal_step: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")
        if not 0 < self.dof_limit_fraction <= 1:
            raise ValueError("dof_limit_fraction must lie in (0, 1]")
        if self.anneal_horizon < 1:
            raise ValueError("anneal_horizon must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown reward keys: {sorted(unknown)}")
        return cls(**d)

    def advanced(self, n: int = 1) -> "RewardConfig":
        return dataclasses.replace(self, anneal_step=self.anneal_step + n)

    def annealed(self) -> tuple[float, float]:
        """Current (action_rate, ankle_action) weight magnitudes."""
        f = min(self.anneal_step / self.anneal_horizon, 1.0)
        ar = self.action_rate if f >= 1.0 else self.action_rate_start + f * (self.action_rate - self.action_rate_start)
        an = self.ankle_action if f >= 1.0 else self.ankle_action_start + f * (self.ankle_action - self.ankle_action_start)
        return ar, an


@dataclass(frozen=True)
class TrackingSpec:
    """Robot-specific index sets used by rewards and termination."""

    tracked: np.ndarray
    torso: int
    feet: np.ndarray
    ankle_dofs: np.ndarray
    penalized: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_tree(cls, robot: KinematicTree) -> "TrackingSpec":
        torso = robot.torso_link or robot.links[0].name
        return cls(tracked=robot.indices(robot.tracked_links), torso=robot.index(torso),
                   feet=robot.indices(robot.foot_links), ankle_dofs=robot.dof_indices(robot.ankle_joints),
                   penalized=robot.indices(robot.penalized_contact_links), lower=robot.lower, upper=robot.upper)


@dataclass(eq=False)
class RewardBreakdown:
    terms: dict

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))

    def __getitem__(self, name: str) -> float:
        return self.terms[name]


class AirTimeTracker:
    """Per-foot time since lift-off, reported on the step a foot touches down."""

    def __init__(self, n_feet: int, dt: float = 0.02):
        self.dt = float(dt)
        self.air = np.zeros(n_feet)

    def update(self, contacts) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step.

        Args:
            contacts: boolean contact state per foot at this step.

        Returns:
            ``(t_air, first_contact)``: air time accumulated up to this step and
            a mask of feet touching down now.
        """
        c = np.asarray(contacts, dtype=bool)
        self.air += self.dt
        first = c & (self.air > self.dt + 1e-12)
        t_air = self.air.copy()
        self.air[c] = 0.0
        return t_air, first


def dof_limit_overflow(q, lower, upper, fraction: float = 0.98) -> float:
    """Total distance of q outside the central ``fraction`` of each joint range."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    finite = np.isfinite(lower) & np.isfinite(upper)
    mid = 0.5 * (lower + upper)
    half = 0.5 * fraction * (upper - lower)
    q = np.asarray(q, dtype=float)
    over = np.maximum(q - (mid + half), 0.0) + np.maximum((mid - half) - q, 0.0)
    return float(np.sum(over[finite]))


def compute_reward(snapshot: StateSnapshot, reference: ReferenceFrame, config: RewardConfig, spec: TrackingSpec,
                   air: Optional[tuple] = None, terminated: bool = False) -> RewardBreakdown:
    """Evaluate every reward term for one step.

    Args:
        snapshot: current robot state.
        reference: target frame for this step.
        config: weights and sharpness values.
        spec: robot index sets (`TrackingSpec.from_tree`).
        air: optional ``(t_air, first_contact)`` from `AirTimeTracker.update`.
        terminated: add the termination penalty for this step.

    Returns:
        Per-term values; ``total`` is their sum.
    """
    c = config
    s, r = snapshot, reference
    terms = {}
    terms["joint_pos"] = c.joint_pos * np.exp(-c.joint_pos_k * np.sum((s.q - r.q) ** 2))
    terms["joint_vel"] = c.joint_vel * np.exp(-c.joint_vel_k * np.sum((s.qd - r.qd) ** 2))
    terms["root_ori"] = c.root_ori * np.exp(-c.root_ori_k * rotation_angle(s.root_R.T @ r.root_R))
    terms["torso_pos"] = c.torso_pos * np.exp(-c.torso_pos_k * np.sum((s.link_pos[spec.torso] - r.link_pos[spec.torso]) ** 2))
    terms["torso_ori"] = c.torso_ori * np.exp(-c.torso_ori_k * rotation_angle(s.link_R[spec.torso].T @ r.link_R[spec.torso]))
    k = spec.tracked
    terms["link_pos"] = c.link_pos * np.exp(-c.link_pos_k * np.sum((s.link_pos[k] - r.link_pos[k]) ** 2))
    terms["link_vel"] = c.link_vel * np.exp(-c.link_vel_k * np.sum((s.link_vel[k] - r.link_vel[k]) ** 2))

    contact = s.foot_forces > c.contact_force
    terms["feet_contact_match"] = c.feet_contact_match * float(np.sum(contact == r.contacts))
    if air is not None:
        t_air, first = air
        terms["air_time"] = c.air_time * float(np.sum((np.asarray(t_air) - c.air_time_k) * np.asarray(first, dtype=float)))
    else:
        terms["air_time"] = 0.0

    w_rate, w_ankle = c.annealed()
    terms["action_rate"] = -w_rate * float(np.sum((s.action - s.prev_action) ** 2))
    terms["ankle_action"] = -w_ankle * float(np.sum(s.action[spec.ankle_dofs] ** 2))
    terms["dof_limits"] = -c.dof_limits * dof_limit_overflow(s.q, spec.lower, spec.upper, c.dof_limit_fraction)
    if s.link_forces is not None and len(spec.penalized):
        terms["collision"] = -c.collision * float(np.sum(s.link_forces[spec.penalized] > c.collision_force))
    else:
        terms["collision"] = 0.0
    v_feet = np.linalg.norm(s.link_vel[spec.feet], axis=-1)
    terms["contact_no_vel"] = -c.contact_no_vel * float(np.sum(v_feet[contact]))
    terms["alive"] = c.alive
    terms["termination"] = -c.termination if terminated else 0.0
    return RewardBreakdown({name: float(v) for name, v in terms.items()})


def tracking_error(snapshot: StateSnapshot, reference: ReferenceFrame, links) -> float:
    """Largest Cartesian error over the given links."""
    d = snapshot.link_pos[links] - reference.link_pos[links]
    return float(np.max(np.linalg.norm(d, axis=-1))) if len(d) else 0.0


def check_termination(snapshot: StateSnapshot, reference: ReferenceFrame, threshold, links) -> bool:
    """True iff the worst tracked-link error exceeds ``threshold``.

    ``threshold`` is a distance in meters or one of ``"mpt"``, ``"terrain"``,
    ``"finetune"``.
    """
    if isinstance(threshold, str):
        threshold = TERMINATION_THRESHOLDS[threshold]
    return tracking_error(snapshot, reference, links) > threshold


def bounds_loss(actions, epsilon: float = ACTION_LIMIT) -> float:
    """Mean absolute overflow of action means beyond ``[-epsilon, epsilon]``.

    Args:
        actions: ``(D,)`` or ``(N, D)`` policy means; batches are averaged.
        epsilon: action limit, positive.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mu = np.asarray(actions, dtype=float)
    return float(np.mean(np.abs(np.clip(mu, -epsilon, epsilon) - mu)))
