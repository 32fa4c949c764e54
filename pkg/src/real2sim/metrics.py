"""World-frame trajectory and point-cloud metrics.

Joint errors are reported in millimetres, Chamfer distance in metres. Rigid
alignment is rotation plus translation, never scale, so a wrong metric scale
shows up in the error instead of being absorbed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

SEGMENT = 100


@dataclass
class MetricReport:
    wa_mpjpe: float
    w_mpjpe: float
    chamfer: Optional[float] = None
    wa_segments: list = field(default_factory=list)
    w_segments: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"format_version": 1, **asdict(self)}, indent=2, sort_keys=True)


def rigid_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``R, t`` with ``R @ src_i + t ≈ dst_i`` (Kabsch, no scale).

    Args:
        src: ``(N, 3)`` points.
        dst: ``(N, 3)`` corresponding points.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _check(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError("trajectories must be (T, J, 3)")
    if pred.shape[0] < 2:
        raise ValueError("need at least two frames")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("trajectories must be finite")
    return pred, gt


def _segments(T: int, segment: int):
    for s in range(0, T, segment):
        e = min(s + segment, T)
        if e - s >= 2:
            yield s, e


def _segment_errors(pred, gt, segment: int, fit_frames: Optional[int]) -> list:
    out = []
    for s, e in _segments(pred.shape[0], segment):
        P, G = pred[s:e], gt[s:e]
        n = e - s if fit_frames is None else fit_frames
        R, t = rigid_fit(P[:n].reshape(-1, 3), G[:n].reshape(-1, 3))
        aligned = P @ R.T + t
        out.append(1000.0 * float(np.mean(np.linalg.norm(aligned - G, axis=-1))))
    return out


def w_mpjpe(pred, gt, segment: int = SEGMENT, per_segment: bool = False):
    """Mean joint error after aligning each segment on its first two frames (mm)."""
    pred, gt = _check(pred, gt)
    errs = _segment_errors(pred, gt, segment, 2)
    return errs if per_segment else float(np.mean(errs))


def wa_mpjpe(pred, gt, segment: int = SEGMENT, per_segment: bool = False):
    """Mean joint error after aligning each whole segment (mm)."""
    pred, gt = _check(pred, gt)
    errs = _segment_errors(pred, gt, segment, None)
    return errs if per_segment else float(np.mean(errs))


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: the mean of the two mean nearest-neighbour distances (m)."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs non-empty clouds")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def evaluate(pred, gt, pred_cloud=None, gt_cloud=None, segment: int = SEGMENT) -> MetricReport:
    w = w_mpjpe(pred, gt, segment, per_segment=True)
    wa = wa_mpjpe(pred, gt, segment, per_segment=True)
    ch = chamfer(pred_cloud, gt_cloud) if pred_cloud is not None and gt_cloud is not None else None
    return MetricReport(wa_mpjpe=float(np.mean(wa)), w_mpjpe=float(np.mean(w)), chamfer=ch,
                        wa_segments=wa, w_segments=w)
