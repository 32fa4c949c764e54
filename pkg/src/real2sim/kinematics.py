"""Kinematic trees, batched forward kinematics and position Jacobians.

One `KinematicTree` class describes both embodiments:

* the robot, whose joints are 1-DoF revolute joints (or fixed links), and
* the human stick skeleton, whose joints are 3-DoF spherical joints
  parameterized by rotation vectors (SMPL style) with per-segment length
  multipliers.

A link's world transform is ``T_parent @ offset @ joint_rotation``; the link
*position* is therefore independent of its own joint and only depends on the
joints of its strict ancestors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (RigidTransform, Rotation3, euler_zyx_to_matrix, right_jacobian,
                       rotvec_to_matrix, skew)

FORMAT_VERSION = 1
JOINT_DOF = {"fixed": 0, "revolute": 1, "spherical": 3}


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    parent: int
    offset: np.ndarray
    offset_rotation: np.ndarray
    joint_type: str = "fixed"
    axis: Optional[np.ndarray] = None
    lower: float = -np.inf
    upper: float = np.inf


@dataclass(frozen=True, eq=False)
class Capsule:
    link: str
    a: np.ndarray
    b: np.ndarray
    radius: float

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)


@dataclass(frozen=True, eq=False)
class KinematicTree:
    name: str
    links: tuple
    foot_links: tuple = ()
    ankle_links: tuple = ()
    tracked_links: tuple = ()
    torso_link: Optional[str] = None
    capsules: tuple = ()
    correspondence: dict = field(default_factory=dict)
    regularized_joints: tuple = ()
    ankle_joints: tuple = ()
    penalized_contact_links: tuple = ()

    def __post_init__(self):
        roots = [i for i, l in enumerate(self.links) if l.parent < 0]
        if roots != [0]:
            raise ValueError("tree needs exactly one root and it must be the first link")
        for i, l in enumerate(self.links):
            if i > 0 and not (0 <= l.parent < i):
                raise ValueError(f"link {l.name!r}: parent index must precede the child")
            if l.lower > l.upper:
                raise ValueError(f"link {l.name!r}: lower limit exceeds upper limit")
            if l.joint_type not in JOINT_DOF:
                raise ValueError(f"link {l.name!r}: unknown joint type {l.joint_type!r}")
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ValueError("duplicate link names")
        for group in (self.foot_links, self.ankle_links, self.tracked_links, self.regularized_joints,
                      self.ankle_joints, self.penalized_contact_links):
            for n in group:
                if n not in names:
                    raise ValueError(f"unknown link {n!r}")
        start, dofs = [], 0
        for l in self.links:
            start.append(dofs)
            dofs += JOINT_DOF[l.joint_type] if l.parent >= 0 else 0
        object.__setattr__(self, "_dof_start", np.array(start))
        object.__setattr__(self, "_n_dof", dofs)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        chains = []
        for i in range(len(self.links)):
            chain, k = [], i
            while k >= 0:
                chain.append(k)
                k = self.links[k].parent
            chains.append(tuple(chain))
        object.__setattr__(self, "_chains", tuple(chains))

    # -- structure -----------------------------------------------------
    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_dof(self) -> int:
        return self._n_dof

    @property
    def n_feet(self) -> int:
        return len(self.foot_links)

    @property
    def link_names(self) -> list[str]:
        return [l.name for l in self.links]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no link named {name!r} in tree {self.name!r}") from None

    def indices(self, names) -> np.ndarray:
        return np.array([self.index(n) for n in names], dtype=int)

    def dof_slice(self, link) -> slice:
        i = self.index(link) if isinstance(link, str) else link
        l = self.links[i]
        n = JOINT_DOF[l.joint_type] if l.parent >= 0 else 0
        return slice(self._dof_start[i], self._dof_start[i] + n)

    def dof_indices(self, names) -> np.ndarray:
        out = []
        for n in names:
            s = self.dof_slice(n)
            out.extend(range(s.start, s.stop))
        return np.array(out, dtype=int)

    def chain(self, link: int) -> tuple:
        """Link indices from ``link`` up to the root, inclusive."""
        return self._chains[link]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) index pairs, i.e. the nonzero entries of m_ij."""
        return [(l.parent, i) for i, l in enumerate(self.links) if l.parent >= 0]

    @property
    def lower(self) -> np.ndarray:
        lo = np.empty(self.n_dof)
        for i, l in enumerate(self.links):
            lo[self.dof_slice(i)] = l.lower
        return lo

    @property
    def upper(self) -> np.ndarray:
        hi = np.empty(self.n_dof)
        for i, l in enumerate(self.links):
            hi[self.dof_slice(i)] = l.upper
        return hi

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.array([np.linalg.norm(l.offset) for l in self.links])

    @property
    def spherical_links(self) -> list[int]:
        return [i for i, l in enumerate(self.links) if l.joint_type == "spherical" and l.parent >= 0]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def tree_from_dict(doc: dict) -> KinematicTree:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported kinematic description version {version!r}")
    raw = doc["links"]
    names = [l["name"] for l in raw]
    links = []
    for l in raw:
        parent = l.get("parent")
        p = -1 if parent is None else names.index(parent)
        joint = l.get("joint", {"type": "fixed"})
        jt = joint.get("type", "fixed")
        rpy = l.get("rpy", [0.0, 0.0, 0.0])
        axis = joint.get("axis")
        if axis is not None:
            axis = np.asarray(axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
        links.append(Link(
            name=l["name"], parent=p,
            offset=np.asarray(l.get("offset", [0.0, 0.0, 0.0]), dtype=float),
            offset_rotation=euler_zyx_to_matrix(*rpy),
            joint_type=jt if p >= 0 else "fixed",
            axis=axis,
            lower=float(joint.get("lower", -np.inf)),
            upper=float(joint.get("upper", np.inf)),
        ))
    capsules = tuple(Capsule(c["link"], np.asarray(c["a"], float), np.asarray(c["b"], float), float(c["radius"]))
                     for c in doc.get("capsules", []))
    for c in capsules:
        if c.link not in names:
            raise ValueError(f"capsule on unknown link {c.link!r}")
    return KinematicTree(
        name=doc.get("name", "tree"),
        links=tuple(links),
        foot_links=tuple(doc.get("foot_links", [])),
        ankle_links=tuple(doc.get("ankle_links", [])),
        tracked_links=tuple(doc.get("tracked_links", [])),
        torso_link=doc.get("torso_link"),
        capsules=capsules,
        correspondence=dict(doc.get("correspondence", {})),
        regularized_joints=tuple(doc.get("regularized_joints", [])),
        ankle_joints=tuple(doc.get("ankle_joints", [])),
        penalized_contact_links=tuple(doc.get("penalized_contact_links", [])),
    )


def load_tree(path) -> KinematicTree:
    """Load a robot or skeleton description from a JSON file."""
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


def _bundled(name: str) -> KinematicTree:
    text = resources.files("real2sim").joinpath("data", name).read_text()
    return tree_from_dict(json.loads(text))


def default_robot() -> KinematicTree:
    """The bundled 23-DoF G1-like humanoid."""
    return _bundled("g1_like.json")


def default_skeleton() -> KinematicTree:
    """The bundled 17-joint human stick skeleton."""
    return _bundled("human_stick.json")


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RobotState:
    root: RigidTransform
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class HumanBodyState:
    """Translation, global orientation, per-joint rotation vectors and segment scales."""

    gamma: np.ndarray
    phi: Rotation3
    theta: np.ndarray
    beta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.beta_hat is not None and np.any(np.asarray(self.beta_hat) <= 0):
            raise ValueError("segment scale factors must be positive")


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FKResult:
    R: np.ndarray  # (T, L, 3, 3) world rotation of each link frame
    P: np.ndarray  # (T, L, 3) world position of each link origin
    q: np.ndarray  # (T, n_dof)


def _local_rotations(tree: KinematicTree, q: np.ndarray) -> list:
    out = []
    T = q.shape[0]
    for i, l in enumerate(tree.links):
        s = tree.dof_slice(i)
        if l.parent < 0 or l.joint_type == "fixed":
            out.append(None)
        elif l.joint_type == "revolute":
            out.append(rotvec_to_matrix(q[:, s.start:s.start + 1] * l.axis))
        else:
            out.append(rotvec_to_matrix(q[:, s]))
    return out


def fk_batch(tree: KinematicTree, root_R, root_t, q, segment_scale=None) -> FKResult:
    """Forward kinematics for T frames at once.

    Args:
        root_R: ``(T, 3, 3)`` or ``(3, 3)`` root rotation.
        root_t: ``(T, 3)`` or ``(3,)`` root position.
        q: ``(T, n_dof)`` joint coordinates.
        segment_scale: optional ``(n_links,)`` multipliers on link offsets.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    T = q.shape[0]
    if q.shape[1] != tree.n_dof:
        raise ValueError(f"expected {tree.n_dof} joint coordinates, got {q.shape[1]}")
    root_R = np.broadcast_to(np.asarray(root_R, dtype=float), (T, 3, 3))
    root_t = np.broadcast_to(np.asarray(root_t, dtype=float), (T, 3))
    scale = np.ones(tree.n_links) if segment_scale is None else np.asarray(segment_scale, dtype=float)
    if scale.shape != (tree.n_links,):
        raise ValueError("segment_scale must have one entry per link")
    L = tree.n_links
    R = np.empty((T, L, 3, 3))
    P = np.empty((T, L, 3))
    R[:, 0] = root_R
    P[:, 0] = root_t
    local = _local_rotations(tree, q)
    for i in range(1, L):
        l = tree.links[i]
        Rp = R[:, l.parent]
        P[:, i] = P[:, l.parent] + Rp @ (scale[i] * l.offset)
        Ri = Rp @ l.offset_rotation
        if local[i] is not None:
            Ri = Ri @ local[i]
        R[:, i] = Ri
    return FKResult(R=R, P=P, q=q)


def _root_arrays(state):
    if isinstance(state, RobotState):
        return state.root.rotation.as_matrix(), state.root.translation, np.asarray(state.q, float), None
    if isinstance(state, HumanBodyState):
        return state.phi.as_matrix(), np.asarray(state.gamma, float), np.asarray(state.theta, float).reshape(-1), \
            state.beta_hat
    raise TypeError(f"unsupported state type {type(state).__name__}")


def _scale_vector(tree, beta_hat):
    if beta_hat is None:
        return None
    b = np.asarray(beta_hat, dtype=float)
    if b.shape == (tree.n_links,):
        return b
    if b.shape == (tree.n_links - 1,):
        return np.concatenate([[1.0], b])
    raise ValueError("beta_hat must have one entry per segment")


def forward_kinematics(tree: KinematicTree, state) -> list[RigidTransform]:
    """World transform of every link for a single `RobotState` or `HumanBodyState`."""
    R0, t0, q, beta = _root_arrays(state)
    if q.size != tree.n_dof:
        raise ValueError(f"state has {q.size} joint coordinates, tree expects {tree.n_dof}")
    fk = fk_batch(tree, R0, t0, q[None], _scale_vector(tree, beta))
    return [RigidTransform.from_rt(fk.R[0, i], fk.P[0, i]) for i in range(tree.n_links)]


def joint_positions(tree: KinematicTree, state) -> np.ndarray:
    """``(n_links, 3)`` world joint positions."""
    R0, t0, q, beta = _root_arrays(state)
    if q.size != tree.n_dof:
        raise ValueError(f"state has {q.size} joint coordinates, tree expects {tree.n_dof}")
    return fk_batch(tree, R0, t0, q[None], _scale_vector(tree, beta)).P[0]


def clamp_to_limits(tree: KinematicTree, q) -> np.ndarray:
    return np.clip(np.asarray(q, dtype=float), tree.lower, tree.upper)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def point_jacobian(tree: KinematicTree, fk: FKResult, link: int, points: np.ndarray):
    """Derivatives of points rigidly attached to ``link``.

    Args:
        points: ``(T, 3)`` world positions of the attached points.

    Returns:
        ``(dq, drot)`` where ``dq`` is ``(T, 3, n_dof)`` and ``drot`` is the
        ``(T, 3, 3)`` derivative with respect to a world-frame rotation
        perturbation of the root (``exp(eps) R_root``). The derivative with
        respect to the root translation is the identity.
    """
    T = points.shape[0]
    dq = np.zeros((T, 3, tree.n_dof))
    for j in tree.chain(link):
        lj = tree.links[j]
        if lj.parent < 0 or lj.joint_type == "fixed":
            continue
        s = tree.dof_slice(j)
        lever = points - fk.P[:, j]
        if lj.joint_type == "revolute":
            axis_w = fk.R[:, j] @ lj.axis
            dq[:, :, s.start] = np.cross(axis_w, lever)
        else:
            Jr = right_jacobian(fk.q[:, s])
            dq[:, :, s] = -skew(lever) @ fk.R[:, j] @ Jr
    drot = -skew(points - fk.P[:, 0])
    return dq, drot


def link_position_jacobian(tree: KinematicTree, fk: FKResult, links=None):
    """Stacked `point_jacobian` for link origins: ``(T, K, 3, n_dof)`` and ``(T, K, 3, 3)``."""
    links = range(tree.n_links) if links is None else links
    dqs, drs = [], []
    for k in links:
        dq, dr = point_jacobian(tree, fk, k, fk.P[:, k])
        dqs.append(dq)
        drs.append(dr)
    return np.stack(dqs, axis=1), np.stack(drs, axis=1)


# ---------------------------------------------------------------------------
# motion clips
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MotionClip:
    """Human body states sampled at a fixed rate.

    ``phi`` holds world rotation matrices of the root; ``theta`` the stacked
    per-joint rotation vectors of the skeleton.
    """

    fps: float
    gamma: np.ndarray  # (T, 3)
    phi: np.ndarray  # (T, 3, 3)
    theta: np.ndarray  # (T, n_dof)
    contacts: Optional[np.ndarray] = None  # (T, n_feet) bool
    beta_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("frame rate must be positive")
        T = np.asarray(self.gamma).shape[0]
        if np.asarray(self.phi).shape != (T, 3, 3) or np.asarray(self.theta).shape[0] != T:
            raise ValueError("gamma, phi and theta must share the frame count")
        if self.contacts is not None and np.asarray(self.contacts).shape[0] != T:
            raise ValueError("contact flags must have one row per frame")

    def __len__(self) -> int:
        return int(np.asarray(self.gamma).shape[0])

    def fk(self, tree: KinematicTree) -> FKResult:
        return fk_batch(tree, self.phi, self.gamma, self.theta, _scale_vector(tree, self.beta_hat))

    def joints(self, tree: KinematicTree) -> np.ndarray:
        """``(T, n_links, 3)`` world joint positions."""
        return self.fk(tree).P

    def state(self, frame: int) -> HumanBodyState:
        return HumanBodyState(self.gamma[frame].copy(), Rotation3.from_matrix(self.phi[frame]),
                              self.theta[frame].copy(), self.beta_hat)
