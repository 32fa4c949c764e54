"""Real-to-sim preparation of humanoid motion from monocular video evidence.

Stages, each usable on its own:

* `reconstruction`: joint optimization of scene scale, root trajectory and pose.
* `scene`: depth to a capped point cloud, heightfield and terrain mesh.
* `retarget`: human motion onto a robot kinematic tree.
* `tracking`: rewards, observations, termination and domain randomization.
* `metrics`: W-MPJPE, WA-MPJPE and Chamfer distance.

`synth` generates clips with ground truth, `cli` chains the stages.
"""
from .config import PipelineConfig, load_config
from .geometry import CameraTrack, PinholeCamera
from .kinematics import KinematicTree, default_robot, default_skeleton, fk_batch
from .metrics import chamfer, evaluate, w_mpjpe, wa_mpjpe
from .nlls import ResidualBlock, SolveReport, SolverConfig, SolverError, solve
from .reconstruction import KeypointObservations, ReconSolution, gravity_align, reconstruct
from .retarget import RetargetProblem, RetargetWeights, solve_retarget
from .scene import HeightField, PointCloud, TerrainMesh, process_scene, sample_patch
from .synth import SCENARIOS, SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CameraTrack", "HeightField", "KeypointObservations", "KinematicTree", "PinholeCamera", "PipelineConfig",
    "PointCloud", "ReconSolution", "ResidualBlock", "RetargetProblem", "RetargetWeights", "SCENARIOS",
    "SolveReport", "SolverConfig", "SolverError", "SynthConfig", "TerrainMesh", "chamfer", "default_robot",
    "default_skeleton", "evaluate", "fk_batch", "generate", "gravity_align", "load_config", "process_scene",
    "reconstruct", "sample_patch", "solve", "solve_retarget", "w_mpjpe", "wa_mpjpe",
]
