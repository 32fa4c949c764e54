"""Domain randomization and sensor-noise sampling.

Offset terms are drawn once per episode, white terms every step. Odometry and
heightmap observations are held between updates to mimic slow sensors.
"""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene import patch_offsets, sample_patch


@dataclass(frozen=True)
class RandomizationConfig:
    dof_friction: tuple = (0.0, 0.02)
    push_xy: tuple = (-0.25, 0.25)  # m/s
    push_z: tuple = (-0.10, 0.10)  # m/s
    push_interval: float = 10.0  # s
    gravity_bias: float = 0.01  # std, units of g
    dof_pos_bias: float = 0.005  # std, rad
    odom_xy_noise: float = 0.01
    odom_yaw_noise: float = 0.01
    dof_pos_noise: float = 0.01
    dof_vel_noise: float = 1.5
    lin_vel_noise: float = 0.1
    ang_vel_noise: float = 0.2
    gravity_noise: float = 0.05
    odom_hold: tuple = (2, 6)  # steps, inclusive
    heightmap_white: float = 0.02
    heightmap_offset: float = 0.02
    heightmap_tilt: float = 0.04  # roll/pitch std, rad
    heightmap_yaw: float = 0.08
    heightmap_delay: tuple = (0, 3)  # frames, inclusive
    heightmap_refresh: tuple = (1, 5)  # steps, inclusive
    bad_cell_p: float = 0.01
    bad_cell_range: tuple = (-1.0, 1.0)  # m, relative to the patch mean
    dt: float = 0.02

    def __post_init__(self):
        for name in ("dof_friction", "push_xy", "push_z", "odom_hold", "heightmap_delay", "heightmap_refresh",
                     "bad_cell_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name, (lo, hi))
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if not 0.0 <= self.bad_cell_p <= 1.0:
            raise ValueError("bad_cell_p must be a probability")
        if self.odom_hold[0] < 1 or self.heightmap_refresh[0] < 1 or self.heightmap_delay[0] < 0:
            raise ValueError("hold, refresh and delay counts must be non-negative integers (hold/refresh >= 1)")
        if self.dt <= 0 or self.push_interval <= 0:
            raise ValueError("dt and push_interval must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown randomization keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @property
    def push_every(self) -> int:
        """Push period in control steps."""
        return int(round(self.push_interval / self.dt))


# fields with hard bounds, used by `draw_fields` and the CLI
BOUNDED_FIELDS = ("dof_friction", "push_x", "push_y", "push_z", "odom_hold", "heightmap_delay",
                  "heightmap_refresh")


def field_bounds(config: RandomizationConfig) -> dict:
    c = config
    return {"dof_friction": c.dof_friction, "push_x": c.push_xy, "push_y": c.push_xy, "push_z": c.push_z,
            "odom_hold": c.odom_hold, "heightmap_delay": c.heightmap_delay, "heightmap_refresh": c.heightmap_refresh}


def draw_fields(config: RandomizationConfig, rng: np.random.Generator, n: int) -> dict:
    """``n`` independent draws of every scalar randomization field.

    Uniform and integer fields respect their bounds; Gaussian fields are
    zero-mean with the configured standard deviation.
    """
    c = config
    out = {
        "dof_friction": rng.uniform(*c.dof_friction, size=n),
        "push_x": rng.uniform(*c.push_xy, size=n),
        "push_y": rng.uniform(*c.push_xy, size=n),
        "push_z": rng.uniform(*c.push_z, size=n),
        "odom_hold": rng.integers(c.odom_hold[0], c.odom_hold[1] + 1, size=n),
        "heightmap_delay": rng.integers(c.heightmap_delay[0], c.heightmap_delay[1] + 1, size=n),
        "heightmap_refresh": rng.integers(c.heightmap_refresh[0], c.heightmap_refresh[1] + 1, size=n),
    }
    gauss = {"gravity_bias": c.gravity_bias, "dof_pos_bias": c.dof_pos_bias, "odom_xy_noise": c.odom_xy_noise,
             "odom_yaw_noise": c.odom_yaw_noise, "dof_pos_noise": c.dof_pos_noise, "dof_vel_noise": c.dof_vel_noise,
             "lin_vel_noise": c.lin_vel_noise, "ang_vel_noise": c.ang_vel_noise, "gravity_noise": c.gravity_noise,
             "heightmap_white": c.heightmap_white, "heightmap_offset": c.heightmap_offset,
             "heightmap_roll": c.heightmap_tilt, "heightmap_pitch": c.heightmap_tilt, "heightmap_yaw": c.heightmap_yaw}
    for name, sd in gauss.items():
        out[name] = sd * rng.standard_normal(n)
    out["bad_cell"] = rng.random(n) < c.bad_cell_p
    return out


class EpisodeRandomizer:
    """Randomization state for one episode. Never share between episodes.

    Args:
        config: randomization settings.
        rng: generator owned by this episode.
        n_dof: number of joints.
    """

    def __init__(self, config: RandomizationConfig, rng: np.random.Generator, n_dof: int = 23):
        self.config = c = config
        self.rng = rng
        self.n_dof = n_dof
        self.dof_friction = float(rng.uniform(*c.dof_friction))
        self.gravity_bias = c.gravity_bias * rng.standard_normal(3)
        self.dof_bias = c.dof_pos_bias * rng.standard_normal(n_dof)
        self.hm_offset = float(c.heightmap_offset * rng.standard_normal())
        self.hm_roll, self.hm_pitch = c.heightmap_tilt * rng.standard_normal(2)
        self.hm_yaw = float(c.heightmap_yaw * rng.standard_normal())
        self.hm_delay = int(rng.integers(c.heightmap_delay[0], c.heightmap_delay[1] + 1))
        self.hm_refresh = int(rng.integers(c.heightmap_refresh[0], c.heightmap_refresh[1] + 1))
        self.odom_holds: list[int] = []
        self._odom_value = None
        self._odom_left = 0
        self._hm_buffer: deque = deque(maxlen=self.hm_delay + 1)
        self._hm_value = None
        self._hm_age = 0

    def push(self, step: int) -> Optional[np.ndarray]:
        """Velocity kick for this step, or None. Kicks land on every multiple of the push period."""
        if step <= 0 or step % self.config.push_every:
            return None
        c = self.config
        return np.array([self.rng.uniform(*c.push_xy), self.rng.uniform(*c.push_xy), self.rng.uniform(*c.push_z)])

    def proprioception(self, q, qd, lin_vel, ang_vel, gravity) -> dict:
        """Apply per-episode biases and per-step white noise to proprioceptive channels."""
        c, rng = self.config, self.rng
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        return {
            "q": q + self.dof_bias + c.dof_pos_noise * rng.standard_normal(q.shape),
            "qd": qd + c.dof_vel_noise * rng.standard_normal(qd.shape),
            "lin_vel": np.asarray(lin_vel, dtype=float) + c.lin_vel_noise * rng.standard_normal(3),
            "ang_vel": np.asarray(ang_vel, dtype=float) + c.ang_vel_noise * rng.standard_normal(3),
            "gravity": np.asarray(gravity, dtype=float) + self.gravity_bias + c.gravity_noise * rng.standard_normal(3),
        }

    def odometry(self, xy, yaw: float) -> tuple[np.ndarray, float]:
        """Relative odometry to the target, refreshed every n ~ U{2..6} steps and held in between.

        White noise is drawn when the value refreshes, so the held reading stays constant.
        """
        c, rng = self.config, self.rng
        if self._odom_left == 0:
            self._odom_value = (np.asarray(xy, dtype=float) + c.odom_xy_noise * rng.standard_normal(2),
                                float(yaw + c.odom_yaw_noise * rng.standard_normal()))
            n = int(rng.integers(c.odom_hold[0], c.odom_hold[1] + 1))
            self.odom_holds.append(n)
            self._odom_left = n
        self._odom_left -= 1
        return self._odom_value[0].copy(), self._odom_value[1]

    def _tilt(self, shape) -> np.ndarray:
        n = shape[0]
        off = patch_offsets(n, 0.1)
        return off[..., 0] * np.tan(self.hm_pitch) - off[..., 1] * np.tan(self.hm_roll)

    def heightmap(self, patch) -> np.ndarray:
        """Delay, hold, bias and corrupt a freshly sampled height patch.

        Args:
            patch: ``(n, n)`` true heights for this step, sampled by the caller
                (see `sample_noisy_patch` for the yaw perturbation).

        Returns:
            The patch the policy sees this step.
        """
        c, rng = self.config, self.rng
        patch = np.asarray(patch, dtype=float)
        self._hm_buffer.append(patch)
        if self._hm_value is None or self._hm_age >= self.hm_refresh:
            src = self._hm_buffer[0]
            out = src + self.hm_offset + self._tilt(src.shape) + c.heightmap_white * rng.standard_normal(src.shape)
            bad = rng.random(src.shape) < c.bad_cell_p
            if bad.any():
                out[bad] = np.mean(src) + rng.uniform(*c.bad_cell_range, size=int(bad.sum()))
            self._hm_value = out
            self._hm_age = 0
        self._hm_age += 1
        return self._hm_value.copy()

    def sample_noisy_patch(self, field, center, yaw: float) -> np.ndarray:
        """Sample the 11x11 patch with the episode's map-frame yaw error, then apply `heightmap`."""
        return self.heightmap(sample_patch(field, center, yaw + self.hm_yaw))
