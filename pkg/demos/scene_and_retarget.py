"""Turn a stairs clip into terrain and retarget the person onto the robot.

Run with ``python3 demos/scene_and_retarget.py``. Writes ``terrain.obj`` to
the current directory.
"""
import numpy as np

from real2sim import RetargetProblem, SynthConfig, default_robot, default_skeleton, generate, gravity_align
from real2sim import process_scene, reconstruct, sample_patch, solve_retarget
from real2sim.retarget import source_skating
from real2sim.scene import mesh_edge_counts, write_obj

skeleton, robot = default_skeleton(), default_robot()
clip = generate("stairs-up", seed=0, config=SynthConfig(frames=90))

sol = reconstruct(clip.track, clip.observations, skeleton, clip.theta_init)
sol, _, _ = gravity_align(sol, roll=clip.roll, pitch=clip.pitch, R_cam_world=clip.track.R[0])
joints = sol.joints(skeleton)

# Depth maps become a world-frame cloud. Pixels on the person, on depth
# discontinuities and inside the person's bounding boxes are dropped.
scene = process_scene(clip.track, sol.alpha, joints, rotation=sol.gravity, human_mask=clip.truth.human_mask)
print(f"{scene.input_points} depth points -> {len(scene.cloud.points)} after filtering and voxel capping")
field = scene.field
print(f"heightfield {field.z.shape[1]} x {field.z.shape[0]} cells of {field.cell:.2f} m, "
      f"heights {np.nanmin(field.z):.2f} to {np.nanmax(field.z):.2f} m, "
      f"{field.occupied.mean() * 100:.0f}% of cells occupied")
counts = mesh_edge_counts(scene.mesh)
print(f"mesh: {len(scene.mesh.vertices)} vertices, {len(scene.mesh.triangles)} triangles, "
      f"{sum(n == 1 for n in counts.values())} boundary edges, "
      f"no edge shared by more than {max(counts.values())} triangles")
write_obj(scene.mesh, "terrain.obj")

# The robot's terrain observation: an 11 x 11 grid of heights around the pelvis.
pelvis = joints[0, skeleton.index("pelvis")]
patch = sample_patch(field, pelvis, yaw=0.0)
print(f"height patch under the first frame spans {np.ptp(patch):.2f} m")

prob = RetargetProblem.from_human(joints, skeleton, robot, heightfield=field, contacts=clip.observations.contacts)
res = solve_retarget(prob)
print(f"retarget: cost {res.report.initial_cost:.3g} -> {res.report.final_cost:.3g} "
      f"in {res.report.iterations} iterations")
print(f"edge scales {res.scale.min():.2f} to {res.scale.max():.2f}")
print(f"foot skating {source_skating(prob, skeleton) * 1000:.1f} mm/frame in the source, "
      f"{res.diagnostics['skating'] * 1000:.2f} mm/frame on the robot")
lo, hi = robot.lower, robot.upper
print(f"joint limits respected: {bool(np.all((res.q >= lo - 1e-9) & (res.q <= hi + 1e-9)))}")
