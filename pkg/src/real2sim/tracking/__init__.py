"""Simulator-agnostic motion-tracking utilities: observations, rewards, randomization, curriculum."""
from .curriculum import LOAD_BALANCE_FLOOR, MotionSampler, load_balance_weights, rsi_sample
from .observations import HEIGHTMAP_DIM, MODES, LayoutError, ObservationLayout, build_observation, local_target
from .randomization import EpisodeRandomizer, RandomizationConfig, draw_fields, field_bounds
from .rewards import (BOUNDS_LOSS_COEF, TERMINATION_THRESHOLDS, TRACKING_TERMS, AirTimeTracker, RewardBreakdown,
                      RewardConfig, TrackingSpec, bounds_loss, check_termination, compute_reward,
                      dof_limit_overflow, tracking_error)
from .state import KinematicClip, ReferenceFrame, StateSnapshot, playback, reference_frames, snapshot_at_reference
