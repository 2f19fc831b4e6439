"""File formats: scene JSONL, checkpoint JSON, atomic writes.

All round trips are value-exact for 64-bit floats; json uses the shortest
round-trip decimal encoding. Writers go through a temp file plus rename so
readers never observe partial files.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import attention_net as net
from .geometry import Pose

CHECKPOINT_VERSION = 1


class SceneFormatError(ValueError):
    """Raised when a scene file does not parse."""


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file fails validation."""


@dataclass
class Scene:
    """One recorded frame: poses plus vehicle-frame measurements.

    landmarks is None for map-backed scenes (the map supplies them) and an
    (N, 2) array for self-contained synthetic scenes.
    """

    t: float
    gt_pose: Pose
    gps_pose: Pose
    measurements: np.ndarray
    landmarks: np.ndarray | None = None


def _atomic_write(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pose_list(p: Pose) -> list[float]:
    return [p.x, p.y, p.phi]


def _points_list(points: np.ndarray) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2)]


def save_scenes(scenes: list[Scene], path: str) -> None:
    """Write scenes as JSON Lines, one scene per line."""
    lines = []
    for s in scenes:
        rec = {
            "t": float(s.t),
            "gt_pose": _pose_list(s.gt_pose),
            "gps_pose": _pose_list(s.gps_pose),
            "measurements": _points_list(s.measurements),
        }
        if s.landmarks is not None:
            rec["landmarks"] = _points_list(s.landmarks)
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def _require(rec: dict, key: str, lineno: int, path: str):
    if key not in rec:
        raise SceneFormatError(f"{path}:{lineno}: missing field {key!r}")
    return rec[key]


def load_scenes(path: str) -> list[Scene]:
    """Parse a JSONL scene file; unknown extra fields are ignored."""
    scenes: list[Scene] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(rec, dict):
                raise SceneFormatError(f"{path}:{lineno}: scene record must be an object")
            try:
                gt = Pose(*_require(rec, "gt_pose", lineno, path))
                gps = Pose(*_require(rec, "gps_pose", lineno, path))
                meas = np.asarray(_require(rec, "measurements", lineno, path), dtype=np.float64).reshape(-1, 2)
                lm = rec.get("landmarks")
                landmarks = None if lm is None else np.asarray(lm, dtype=np.float64).reshape(-1, 2)
            except SceneFormatError:
                raise
            except (TypeError, ValueError) as exc:
                raise SceneFormatError(f"{path}:{lineno}: {exc}") from exc
            scenes.append(Scene(t=float(_require(rec, "t", lineno, path)), gt_pose=gt, gps_pose=gps,
                                measurements=meas, landmarks=landmarks))
    return scenes


def save_checkpoint(params: net.ModelParams, path: str) -> None:
    """Write the full model (config plus named arrays) to one JSON document."""
    cfg = params.config
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "d_m": cfg.d_m,
            "heads": cfg.heads,
            "k": cfg.k,
            "rff_hidden": cfg.rff_hidden,
            "head_hidden": list(cfg.head_hidden),
            "block_hidden": cfg.block_hidden,
            "neighbor_features": cfg.neighbor_features,
            "seed": cfg.seed,
        },
        "arrays": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.items())
        },
    }
    _atomic_write(path, json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str) -> net.ModelParams:
    """Load and validate a checkpoint; every array shape is checked against the config."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"{path}: {exc}") from exc
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format_version {version!r}")
    raw_cfg = doc.get("config")
    if not isinstance(raw_cfg, dict):
        raise CheckpointFormatError(f"{path}: missing config")
    try:
        cfg = net.NetConfig(
            d_m=raw_cfg["d_m"],
            heads=raw_cfg["heads"],
            k=raw_cfg["k"],
            rff_hidden=raw_cfg["rff_hidden"],
            head_hidden=tuple(raw_cfg["head_hidden"]),
            block_hidden=raw_cfg.get("block_hidden"),
            neighbor_features=raw_cfg.get("neighbor_features", "offsets"),
            seed=raw_cfg.get("seed", 0),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: invalid config: {exc}") from exc
    arrays = doc.get("arrays")
    if not isinstance(arrays, dict):
        raise CheckpointFormatError(f"{path}: missing arrays")
    expected = net.param_shapes(cfg)
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointFormatError(f"{path}: missing array {missing[0]!r}")
    tensors = {}
    for name, shape in expected.items():
        entry = arrays[name]
        got = tuple(entry.get("shape", ()))
        if got != shape:
            raise CheckpointFormatError(f"{path}: array {name!r} has shape {got}, expected {shape}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != shape[0] * shape[1]:
            raise CheckpointFormatError(f"{path}: array {name!r} has {data.size} values, expected {shape[0] * shape[1]}")
        tensors[name] = net.Tensor(data.reshape(shape))
    return net.ModelParams(cfg, tensors)
