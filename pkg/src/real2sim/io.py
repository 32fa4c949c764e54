"""Interchange file formats.

Every document is a JSON object with ``format_version`` and ``kind``. Small
arrays are inlined as ``{"dtype", "shape", "data"}`` with ``null`` standing in
for NaN. Arrays above `INLINE_LIMIT` elements go to a single binary sidecar
next to the JSON file (``<stem>.bin``): little-endian float64 (``<f8``),
int64 (``<i8``) or uint8 booleans (``|u1``), row-major, referenced by byte
offset. Python's float repr round-trips exactly, so write-then-read returns
identical arrays.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import CameraTrack, PinholeCamera
from .reconstruction import KeypointObservations, ReconSolution
from .synth import Box, GroundTruth, SyntheticClip, Terrain

FORMAT_VERSION = 1
INLINE_LIMIT = 4096
_DTYPES = {"float64": "<f8", "int64": "<i8", "bool": "|u1"}


class SchemaError(ValueError):
    """A document is readable but does not match the expected layout."""


# ---------------------------------------------------------------------------
# arrays and documents
# ---------------------------------------------------------------------------

def _kind_of(a: np.ndarray) -> str:
    if a.dtype == bool:
        return "bool"
    if np.issubdtype(a.dtype, np.integer):
        return "int64"
    return "float64"


class _Sidecar:
    def __init__(self, name: str):
        self.name = name
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, a: np.ndarray, kind: str) -> int:
        raw = np.ascontiguousarray(a.astype(_DTYPES[kind])).tobytes()
        at = self.offset
        self.chunks.append(raw)
        self.offset += len(raw)
        return at


def encode_array(a, sidecar: Optional[_Sidecar] = None) -> dict:
    a = np.asarray(a)
    kind = _kind_of(a)
    doc = {"dtype": kind, "shape": list(a.shape)}
    if sidecar is not None and a.size > INLINE_LIMIT:
        doc["sidecar"] = sidecar.name
        doc["encoding"] = _DTYPES[kind]
        doc["offset"] = sidecar.add(a, kind)
        return doc
    if kind == "float64" and np.any(np.isinf(a)):
        raise ValueError("infinite values cannot be stored")
    flat = a.astype(float if kind == "float64" else (bool if kind == "bool" else np.int64)).ravel().tolist()
    if kind == "float64":
        flat = [None if v != v else v for v in flat]
    doc["data"] = flat
    return doc


def decode_array(doc: dict, base: Path) -> np.ndarray:
    try:
        kind = doc["dtype"]
        shape = tuple(int(s) for s in doc["shape"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed array entry: {exc}") from exc
    if kind not in _DTYPES:
        raise SchemaError(f"unknown array dtype {kind!r}")
    n = int(np.prod(shape)) if shape else 1
    if "sidecar" in doc:
        path = base / doc["sidecar"]
        if not path.exists():
            raise FileNotFoundError(str(path))
        with open(path, "rb") as fh:
            fh.seek(int(doc["offset"]))
            want = n * np.dtype(_DTYPES[kind]).itemsize
            raw = fh.read(want)
        if len(raw) != want:
            raise SchemaError(f"sidecar {doc['sidecar']} is truncated")
        a = np.frombuffer(raw, dtype=_DTYPES[kind])
        a = a.astype(bool if kind == "bool" else (np.int64 if kind == "int64" else float))
        return a.reshape(shape)
    data = doc.get("data")
    if data is None or len(data) != n:
        raise SchemaError("inline array length does not match its shape")
    if kind == "float64":
        return np.array([np.nan if v is None else v for v in data], dtype=float).reshape(shape)
    return np.array(data, dtype=bool if kind == "bool" else np.int64).reshape(shape)


def _encode_tree(obj, sidecar):
    if isinstance(obj, np.ndarray):
        return {"__array__": encode_array(obj, sidecar)}
    if isinstance(obj, dict):
        return {k: _encode_tree(v, sidecar) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_tree(v, sidecar) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _decode_tree(obj, base):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return decode_array(obj["__array__"], base)
        return {k: _decode_tree(v, base) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_tree(v, base) for v in obj]
    return obj


def write_document(path, kind: str, payload: dict) -> Path:
    """Write ``payload`` (nested dicts/lists/arrays) as a versioned JSON document."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    side = _Sidecar(path.stem + ".bin")
    body = _encode_tree(payload, side)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **body}
    text = json.dumps(doc, indent=1, sort_keys=True, allow_nan=False)
    with open(path, "w") as fh:
        fh.write(text + "\n")
    side_path = path.parent / side.name
    if side.chunks:
        with open(side_path, "wb") as fh:
            for c in side.chunks:
                fh.write(c)
    elif side_path.exists():
        os.remove(side_path)
    return path


def read_header(path, kind: Optional[str] = None) -> dict:
    """Parse and validate the JSON part of a document without loading arrays."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise SchemaError(f"{path}: expected a '{kind}' document, found {doc.get('kind')!r}")
    return doc


def read_document(path, kind: Optional[str] = None) -> dict:
    path = Path(path)
    return _decode_tree(read_header(path, kind), path.parent)


def _need(doc: dict, *keys):
    missing = [k for k in keys if k not in doc]
    if missing:
        raise SchemaError(f"missing fields: {missing}")
    return [doc[k] for k in keys]


# ---------------------------------------------------------------------------
# clips
# ---------------------------------------------------------------------------

def _terrain_doc(terrain: Terrain) -> dict:
    return {"extent": terrain.extent, "boxes": [{"lo": b.lo, "hi": b.hi} for b in terrain.boxes]}


def _terrain_from(doc: dict) -> Terrain:
    return Terrain(boxes=tuple(Box(np.asarray(b["lo"]), np.asarray(b["hi"])) for b in doc["boxes"]),
                   extent=float(doc["extent"]))


def write_clip(clip: SyntheticClip, path) -> Path:
    cam = clip.track.camera
    obs = clip.observations
    payload = {
        "scenario": clip.scenario, "seed": clip.seed, "fps": clip.fps, "frames": len(obs),
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height},
        "extrinsics": {"R": clip.track.R, "t": clip.track.t},
        "depth": clip.track.depth,
        "keypoints": {"keypoints_2d": obs.keypoints_2d, "confidence": obs.confidence,
                      "keypoints_3d": obs.keypoints_3d, "valid_3d": obs.valid_3d},
        "contacts": obs.contacts,
        "theta_init": clip.theta_init,
        "roll": clip.roll, "pitch": clip.pitch,
    }
    if clip.truth is not None:
        t = clip.truth
        payload["truth"] = {"alpha": t.alpha, "gamma": t.gamma, "phi": t.phi, "theta": t.theta,
                            "contacts": t.contacts, "world_to_recon": t.world_to_recon,
                            "terrain": _terrain_doc(t.terrain), "human_mask": t.human_mask}
    return write_document(path, "clip", payload)


def read_clip(path) -> SyntheticClip:
    d = read_document(path, "clip")
    try:
        cam_d, ext, kp = _need(d, "camera", "extrinsics", "keypoints")
        cam = PinholeCamera(float(cam_d["fx"]), float(cam_d["fy"]), float(cam_d["cx"]), float(cam_d["cy"]),
                            int(cam_d["width"]), int(cam_d["height"]))
        track = CameraTrack(cam, ext["R"], ext["t"], d.get("depth"))
        obs = KeypointObservations(kp["keypoints_2d"], kp["confidence"], kp["keypoints_3d"], kp["valid_3d"],
                                   d["contacts"])
        truth = None
        if "truth" in d:
            t = d["truth"]
            truth = GroundTruth(alpha=float(t["alpha"]), gamma=t["gamma"], phi=t["phi"], theta=t["theta"],
                                contacts=t["contacts"], world_to_recon=t["world_to_recon"],
                                terrain=_terrain_from(t["terrain"]), human_mask=t["human_mask"])
        if len(track) != len(obs) or int(d["frames"]) != len(obs):
            raise SchemaError("frame counts disagree between camera track and keypoints")
        return SyntheticClip(scenario=d.get("scenario", "external"), seed=d.get("seed"), fps=float(d["fps"]),
                             track=track, observations=obs, theta_init=d["theta_init"], roll=float(d["roll"]),
                             pitch=float(d["pitch"]), truth=truth)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed clip ({exc!r})") from exc
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

def write_reconstruction(sol: ReconSolution, path, fps: float, contacts, extra: Optional[dict] = None) -> Path:
    payload = {"alpha": sol.alpha, "gamma": sol.gamma, "phi": sol.phi, "theta": sol.theta, "fps": fps,
               "contacts": np.asarray(contacts, dtype=bool)}
    if sol.gravity is not None:
        payload["gravity"] = sol.gravity
    if sol.report is not None:
        payload["report"] = {"initial_cost": sol.report.initial_cost, "final_cost": sol.report.final_cost,
                             "iterations": sol.report.iterations, "reason": sol.report.reason,
                             "block_costs": sol.report.block_costs}
    if extra:
        payload.update(extra)
    return write_document(path, "reconstruction", payload)


def read_reconstruction(path) -> tuple[ReconSolution, dict]:
    """Returns the solution (without solver report) and the raw document."""
    d = read_document(path, "reconstruction")
    try:
        alpha, gamma, phi, theta = _need(d, "alpha", "gamma", "phi", "theta")
        sol = ReconSolution(alpha=float(alpha), gamma=gamma, phi=phi, theta=theta, gravity=d.get("gravity"))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed reconstruction ({exc})") from exc
    if not (len(sol.gamma) == len(sol.phi) == len(sol.theta) == len(d.get("contacts", sol.gamma))):
        raise SchemaError(f"{path}: frame counts disagree")
    return sol, d


# ---------------------------------------------------------------------------
# retargeting
# ---------------------------------------------------------------------------

def write_retarget(result, path, contacts, fps: float, robot_name: str) -> Path:
    v = result.variables
    payload = {"robot": robot_name, "fps": fps, "root_R": v.root_R, "root_t": v.root_t, "q": v.q,
               "scale": np.asarray(result.scale, dtype=float), "contacts": np.asarray(contacts, dtype=bool),
               "report": {"initial_cost": result.report.initial_cost, "final_cost": result.report.final_cost,
                          "iterations": result.report.iterations, "reason": result.report.reason,
                          "block_costs": result.report.block_costs},
               "diagnostics": {"skating": float(result.diagnostics["skating"])}}
    return write_document(path, "retarget", payload)


def read_retarget(path) -> dict:
    d = read_document(path, "retarget")
    _need(d, "root_R", "root_t", "q", "scale", "contacts", "fps")
    T = len(d["q"])
    if not (len(d["root_R"]) == len(d["root_t"]) == len(d["contacts"]) == T):
        raise SchemaError(f"{path}: frame counts disagree")
    if np.any(d["scale"] <= 0):
        raise SchemaError(f"{path}: scales must be positive")
    return d


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

def write_cloud(points, path) -> Path:
    return write_document(path, "cloud", {"points": np.asarray(points, dtype=float).reshape(-1, 3)})


def read_cloud(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        from .scene import read_obj
        if not path.exists():
            raise FileNotFoundError(str(path))
        return read_obj(path).vertices
    d = read_document(path, "cloud")
    pts = np.asarray(d["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SchemaError(f"{path}: points must be (N, 3)")
    return pts
