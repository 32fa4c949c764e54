"""Score a noisy replay of a reference motion and draw domain-randomization parameters.

Run with ``python3 demos/tracking_rewards.py``. No simulator is involved: the
"policy" is the reference itself with joint and root noise added.
"""
import numpy as np

from real2sim import PipelineConfig, default_robot
from real2sim.tracking import (EpisodeRandomizer, KinematicClip, ObservationLayout, TrackingSpec, build_observation,
                               check_termination, compute_reward, draw_fields, playback, reference_frames)
from real2sim.tracking.rewards import TERMINATION_THRESHOLDS, AirTimeTracker

robot = default_robot()
cfg = PipelineConfig()
rng = np.random.default_rng(0)

# A small in-place stepping motion: hips and knees swing out of phase.
T, dt = 120, 1 / 30
phase = 2 * np.pi * np.arange(T) * dt
q = np.zeros((T, robot.n_dof))
for side, sign in (("left", 1.0), ("right", -1.0)):
    hip, knee = robot.dof_indices([f"{side}_hip_pitch_link", f"{side}_knee_link"])
    q[:, hip] = 0.3 * sign * np.sin(phase)
    q[:, knee] = 0.4 + 0.3 * sign * np.sin(phase)
root_R = np.broadcast_to(np.eye(3), (T, 3, 3)).copy()
root_t = np.tile([0.0, 0.0, 0.75], (T, 1))
contacts = np.stack([np.sin(phase) <= 0, np.sin(phase) >= 0], axis=1)
clip = KinematicClip(root_R, root_t, q, contacts, dt)

refs = reference_frames(robot, clip)
spec = TrackingSpec.from_tree(robot)
layout = ObservationLayout.for_robot("tracking", robot, cfg.history)
threshold = TERMINATION_THRESHOLDS["mpt"]
print(f"tracking observation has {layout.dim} entries")

for noise in (0.02, 0.1, 0.4):
    snaps = playback(robot, clip, np.random.default_rng(1), q_noise=noise, root_noise=noise / 4)
    air = AirTimeTracker(robot.n_feet, dt)
    totals, stopped = [], None
    for k, (s, r) in enumerate(zip(snaps, refs)):
        done = check_termination(s, r, threshold, spec.tracked)
        totals.append(compute_reward(s, r, cfg.rewards, spec, air=air.update(s.contacts), terminated=done).total)
        build_observation(snaps[max(0, k - cfg.history + 1):k + 1], r, np.zeros((11, 11)), layout)
        if done:
            stopped = k
            break
    where = f"terminated at step {stopped}" if stopped is not None else "ran to the end"
    print(f"joint noise {noise:.2f} rad: mean reward {np.mean(totals):.3f}, {where}")

draws = draw_fields(cfg.randomization, rng, 5)
for name, values in draws.items():
    print(f"{name:<22s} {np.array2string(np.asarray(values).ravel()[:5], precision=3)}")

episode = EpisodeRandomizer(cfg.randomization, rng)
pushes = [step for step in range(2000) if episode.push(step) is not None]
print(f"pushes in a 2000-step episode at steps {pushes}")
