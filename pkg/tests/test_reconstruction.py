import dataclasses

import numpy as np
import pytest

from real2sim.geometry import CameraTrack, PinholeCamera, rot_x, rot_z
from real2sim.kinematics import fk_batch
from real2sim.nlls import SolverConfig
from real2sim.reconstruction import (R_CAM_BODY_FACING, InitError, KeypointObservations, ReconProblem, ReconWeights,
                                     coarse_init,
                                     fit_plane_ransac, gravity_align, gravity_from_floor, gravity_rotation,
                                     initialize, reconstruct, roll_pitch_from_up, solve_joint, up_in_camera)
from real2sim.synth import SynthConfig, generate, look_at


@pytest.fixture(scope="module")
def noiseless_clip():
    return generate("flat-walk", 0, SynthConfig(sigma_2d=0.0, sigma_3d=0.0))


@pytest.fixture(scope="module")
def short_clip():
    return generate("flat-walk", 3, SynthConfig(frames=30))


def true_root_depth(clip):
    """Metric camera-frame depth of the pelvis in every frame."""
    tr = clip.truth
    pc = np.einsum("tab,tb->ta", clip.track.R, tr.gamma) + tr.alpha * clip.track.t
    return pc[:, 2]


def mean_joint_error(sol, clip, skeleton):
    return np.linalg.norm(sol.joints(skeleton) - clip.truth.joints(skeleton), axis=-1).mean()


def rendered_person(skeleton, depth=4.0, f=500.0, T=3):
    """A rest-pose person facing an upright camera at a known depth."""
    cam = PinholeCamera(f, f, 320.0, 240.0, 640, 480)
    T_ = np.arange(T)
    gamma = np.stack([0.05 * T_, np.zeros(T), np.full(T, depth)], axis=-1)
    phi = np.repeat(R_CAM_BODY_FACING[None], T, axis=0)
    J = fk_batch(skeleton, phi, gamma, np.zeros((T, skeleton.n_dof))).P
    k2 = np.stack([f * J[..., 0] / J[..., 2] + cam.cx, f * J[..., 1] / J[..., 2] + cam.cy], axis=-1)
    L = skeleton.n_links
    obs = KeypointObservations(k2, np.ones((T, L)), J, np.ones((T, L), bool), np.zeros((T, 2), bool))
    track = CameraTrack(cam, np.repeat(np.eye(3)[None], T, axis=0), np.zeros((T, 3)), np.full((T, 480, 640), depth))
    return track, obs


def test_coarse_depth_from_limb_ratios(skeleton):
    track, obs = rendered_person(skeleton)
    co = coarse_init(track, obs, skeleton)
    np.testing.assert_allclose(co.depth, 4.0, rtol=0.05)
    assert co.alpha == pytest.approx(1.0, rel=0.05)


def test_coarse_depth_on_walking_clip(noiseless_clip, skeleton):
    # foreshortened limbs bias the ratio; it stays a usable starting point
    co = coarse_init(noiseless_clip.track, noiseless_clip.observations, skeleton)
    rel = np.abs(co.depth / true_root_depth(noiseless_clip) - 1)
    assert np.median(rel) < 0.15


def test_coarse_depth_scales_with_focal(noiseless_clip, skeleton):
    tr = noiseless_clip.track
    cam2 = dataclasses.replace(tr.camera, fx=2 * tr.camera.fx, fy=2 * tr.camera.fy)
    track2 = CameraTrack(cam2, tr.R, tr.t, tr.depth)
    z1 = coarse_init(tr, noiseless_clip.observations, skeleton).depth
    z2 = coarse_init(track2, noiseless_clip.observations, skeleton).depth
    np.testing.assert_allclose(z2, 2 * z1, rtol=1e-12)


def test_metric_depth_gives_unit_scale(skeleton):
    clip = generate("flat-walk", 1, SynthConfig(alpha=1.0))
    co = coarse_init(clip.track, clip.observations, skeleton)
    assert abs(co.alpha - 1.0) < 0.10


def test_coarse_init_errors(noiseless_clip, skeleton):
    obs = noiseless_clip.observations
    blind = dataclasses.replace(obs, confidence=np.zeros_like(obs.confidence))
    with pytest.raises(InitError):
        coarse_init(noiseless_clip.track, blind, skeleton)
    no_depth = CameraTrack(noiseless_clip.track.camera, noiseless_clip.track.R, noiseless_clip.track.t, None)
    with pytest.raises(InitError):
        coarse_init(no_depth, obs, skeleton)


def test_noiseless_recovery(noiseless_clip, skeleton):
    sol = reconstruct(noiseless_clip.track, noiseless_clip.observations, skeleton, noiseless_clip.theta_init)
    assert abs(sol.alpha / noiseless_clip.truth.alpha - 1) < 0.01
    assert mean_joint_error(sol, noiseless_clip, skeleton) < 0.005
    assert sol.report.final_cost <= sol.report.initial_cost


def test_heavy_pose_smoothing_freezes_theta(short_clip, skeleton):
    c = short_clip
    init = initialize(c.track, c.observations, skeleton, c.theta_init)
    problem = ReconProblem(c.track, c.observations, skeleton, init, ReconWeights(lambda_theta=1e6))
    sol = solve_joint(problem, SolverConfig(max_iterations=40))
    assert np.abs(np.diff(sol.theta, axis=0)).max() < 1e-3


def test_3d_term_alone_fits_perfect_lifts(skeleton):
    c = generate("flat-walk", 2, SynthConfig(frames=30, sigma_2d=0.0, sigma_3d=0.0, theta_noise=0.02))
    init = initialize(c.track, c.observations, skeleton, c.theta_init)
    w = ReconWeights(w_2d=0.0, lambda_gamma=0.0, lambda_theta=0.0, pose_prior=0.0)
    sol = solve_joint(ReconProblem(c.track, c.observations, skeleton, init, w), SolverConfig(max_iterations=100))
    assert "L2D" not in sol.report.block_costs
    assert sol.report.block_costs["L3D"] < 1e-6 * sol.report.initial_cost


def test_translation_equivariance(short_clip, skeleton):
    c = short_clip
    shift = np.array([0.7, -0.3, 1.1])  # SfM units
    tr = c.track
    moved_track = CameraTrack(tr.camera, tr.R, tr.t - tr.R @ shift, tr.depth)
    obs = c.observations
    moved_obs = dataclasses.replace(obs, keypoints_3d=obs.keypoints_3d + shift)
    cfg = SolverConfig(max_iterations=30)
    a = reconstruct(tr, obs, skeleton, c.theta_init, config=cfg)
    b = reconstruct(moved_track, moved_obs, skeleton, c.theta_init, config=cfg)
    assert b.alpha == pytest.approx(a.alpha, rel=1e-5)
    np.testing.assert_allclose(b.gamma, a.gamma + a.alpha * shift, atol=1e-4)
    np.testing.assert_allclose(b.theta, a.theta, atol=1e-3)


def test_missing_keypoints_stay_finite(short_clip, skeleton):
    c = short_clip
    obs = c.observations
    k2, conf, k3 = obs.keypoints_2d.copy(), obs.confidence.copy(), obs.keypoints_3d.copy()
    k2[5:9, 3] = np.nan
    k2[12, 0] = np.nan  # root pixel lost for a frame
    k3[7, 4] = np.nan
    holey = KeypointObservations(k2, conf, k3, obs.valid_3d, obs.contacts)
    assert not holey.valid_3d[7, 4]
    sol = reconstruct(c.track, holey, skeleton, c.theta_init, config=SolverConfig(max_iterations=30))
    assert np.all(np.isfinite(sol.gamma)) and np.all(np.isfinite(sol.theta)) and np.isfinite(sol.alpha)


def test_observation_validation():
    T, J = 4, 3
    with pytest.raises(ValueError):
        KeypointObservations(np.zeros((T, J, 2)), np.full((T, J), 1.5), np.zeros((T, J, 3)),
                             np.ones((T, J), bool), np.zeros((T, 2), bool))
    with pytest.raises(ValueError):
        KeypointObservations(np.zeros((T, J, 2)), np.ones((T, J + 1)), np.zeros((T, J, 3)),
                             np.ones((T, J), bool), np.zeros((T, 2), bool))


# ---------------------------------------------------------------------------
# gravity
# ---------------------------------------------------------------------------

def floor_grid(n=15, size=4.0):
    g = np.linspace(-size / 2, size / 2, n)
    x, y = np.meshgrid(g, g)
    return np.stack([x.ravel(), y.ravel(), np.zeros(x.size)], axis=-1)


def angle_to_up(n):
    n = n / np.linalg.norm(n)
    return np.degrees(np.arccos(abs(n[2])))


def test_upright_camera_maps_down_to_minus_z():
    G = gravity_rotation(np.eye(3), 0.0, 0.0)
    np.testing.assert_allclose(G @ [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(G @ up_in_camera(0.0, 0.0), [0.0, 0.0, 1.0], atol=1e-12)


def test_roll_pitch_round_trip():
    rng = np.random.default_rng(0)
    for roll, pitch in rng.uniform(-0.5, 0.5, size=(50, 2)):
        r, p = roll_pitch_from_up(up_in_camera(roll, pitch))
        assert (r, p) == pytest.approx((roll, pitch), abs=1e-12)
        G = gravity_rotation(np.eye(3), roll, pitch)
        np.testing.assert_allclose(G @ up_in_camera(roll, pitch), [0, 0, 1], atol=1e-12)


@pytest.mark.parametrize("roll,pitch", [(0.3, 0.0), (-0.3, 0.2), (0.5, -0.5)])
def test_tilted_scene_floor_becomes_horizontal(roll, pitch):
    # the camera's up vector is what a gravity sensor reports
    R_cw, t_cw = look_at(np.array([-3.0, 0.5, 1.2]), np.array([0.0, 0.0, 0.3 + pitch]), roll)
    pts = floor_grid() @ R_cw.T + t_cw  # reconstruction frame = first camera
    r, p = roll_pitch_from_up(R_cw @ [0.0, 0.0, 1.0])
    G = gravity_rotation(np.eye(3), r, p)
    n, _ = fit_plane_ransac(pts @ G.T, np.random.default_rng(0))
    assert angle_to_up(n) < 0.5


def test_floor_fit_fallback():
    rng = np.random.default_rng(1)
    R_cw, t_cw = look_at(np.array([-3.0, 0.5, 1.2]), np.array([0.0, 0.0, 0.5]), 0.3)
    world = np.concatenate([floor_grid(), rng.uniform([-1, -1, 0.2], [1, 1, 1.8], size=(40, 3))])
    world = world + rng.normal(scale=0.003, size=world.shape)
    pts = world @ R_cw.T + t_cw
    G = gravity_from_floor(pts, np.eye(3))
    floor = floor_grid() @ R_cw.T + t_cw
    n, _ = fit_plane_ransac(floor @ G.T, np.random.default_rng(0))
    assert angle_to_up(n) < 0.5
    assert (G @ R_cw @ [0.0, 0.0, 1.0])[2] > 0.99


def test_gravity_align_applies_once(noiseless_clip, skeleton):
    c = noiseless_clip
    from real2sim.reconstruction import ReconSolution

    tr = c.truth
    sol = ReconSolution(alpha=tr.alpha, gamma=tr.gamma, phi=tr.phi, theta=tr.theta)
    pts = floor_grid()
    a, pa, G = gravity_align(sol, pts, roll=c.roll, pitch=c.pitch, R_cam_world=c.track.R[0])
    assert a.aligned
    b, pb, G2 = gravity_align(a, pa, roll=c.roll, pitch=c.pitch, R_cam_world=c.track.R[0])
    assert b is a and pb is pa and G2 is G
    # aligned world recovers the synthetic world up to a yaw and a shift
    up = G @ tr.world_to_recon[:3, :3] @ [0.0, 0.0, 1.0]
    np.testing.assert_allclose(up, [0, 0, 1], atol=1e-9)
    with pytest.raises(ValueError):
        gravity_align(sol)


def test_rot_helpers_consistent():
    # gravity_rotation is a proper rotation for any input
    rng = np.random.default_rng(2)
    R = rot_z(rng.uniform(-3, 3)) @ rot_x(rng.uniform(-1, 1))
    G = gravity_rotation(R, 0.2, -0.1)
    np.testing.assert_allclose(G @ G.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(G) == pytest.approx(1.0)
