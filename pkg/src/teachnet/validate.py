"""Dataset checker that shares no geometry code with the generator.

Stored joint vectors are re-posed with a plain 4x4 homogeneous-matrix walk
over the raw model JSON, and capsule clearances come from a golden-section
search over one segment of the distance to the other (a convex function of
the search parameter). Only the final bitwise re-render check goes through
the renderer, because that check is about the renderer's output.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

#: slack for the search-based distance against the generator's exact one
DISTANCE_TOL = 1e-7


@dataclass
class ValidationReport:
    n_checked: int = 0
    errors: List[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors and self.n_checked > 0


def _rot(axis, angle):
    a = np.asarray(axis, float)
    a = a / math.sqrt(a @ a)
    x, y, z = a
    c, s, C = math.cos(angle), math.sin(angle), 1 - math.cos(angle)
    return np.array([[c + x * x * C, x * y * C - z * s, x * z * C + y * s],
                     [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
                     [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


def _homog(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def link_frames(cfg, theta):
    """World 4x4 frame of every link for joint vector ``theta`` (model order)."""
    q = dict(zip(cfg["joint_order"], theta))
    links = {l["name"]: l for l in cfg["links"]}
    frames = {}

    def frame(name):
        if name in frames:
            return frames[name]
        l = links[name]
        r, p, y = l.get("rpy", (0, 0, 0))
        fixed = _homog(_rot((0, 0, 1), y) @ _rot((0, 1, 0), p) @ _rot((1, 0, 0), r), l.get("xyz", (0, 0, 0)))
        if l["parent"] is None:
            parent = _homog(t=(0, 0, -cfg["wrist_offset_z"]))
        else:
            parent = frame(l["parent"])
        T = parent @ fixed
        if l.get("joint"):
            T = T @ _homog(_rot(l["axis"], q[l["joint"]]))
        frames[name] = T
        return T

    for name in links:
        frame(name)
    return frames


def _point_segment(p, a, b):
    d = b - a
    t = min(1.0, max(0.0, float((p - a) @ d) / float(d @ d))) if d @ d > 0 else 0.0
    return float(np.linalg.norm(p - (a + t * d)))


def segment_distance_search(a0, a1, b0, b1, iters=200):
    """Golden-section minimum over ``s`` of dist(a(s), segment b)."""
    a0, a1, b0, b1 = (np.asarray(v, float) for v in (a0, a1, b0, b1))
    g = (math.sqrt(5) - 1) / 2
    lo, hi = 0.0, 1.0
    f = lambda s: _point_segment(a0 + s * (a1 - a0), b0, b1)
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 > f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
        if hi - lo < 1e-15:
            break
    return min(f1, f2, f(0.0), f(1.0))


def pair_clearances(cfg, theta):
    """``(name_a, name_b, capsule distance, r_col)`` for every collision pair."""
    frames = link_frames(cfg, theta)
    caps = cfg["capsules"]

    def world(name):
        T = frames[name]
        c = caps[name]
        return (T @ np.r_[c["p0"], 1.0])[:3], (T @ np.r_[c["p1"], 1.0])[:3], c["radius"]

    out = []
    for pair in cfg["collision_pairs"]:
        a0, a1, ra = world(pair["a"])
        b0, b1, rb = world(pair["b"])
        out.append((pair["a"], pair["b"], segment_distance_search(a0, a1, b0, b1) - ra - rb,
                    pair["r_col"]))
    return out


def _read_blob(path):
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    raw = Path(path).read_bytes()
    w, h = int(meta["width"]), int(meta["height"])
    if len(raw) != 4 * w * h:
        raise ValueError(f"{path}: {len(raw)} bytes for a {w}x{h} float32 image")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w), meta


def validate_dataset(path, rerender=True, model_config=None, progress=None) -> ValidationReport:
    """Check every record of the dataset at ``path`` (directory or manifest).

    Checks: manifest fields, 21x3 finite keypoints, 17 joints within limits,
    every collision pair clear by at least ``r_col``, exactly nine robot
    views plus one human view at the configured size with values in
    ``[-1, 1]``, and (``rerender``) that re-rendering the stored joint vector
    reproduces the stored robot views bitwise.
    """
    from .kinematics import default_model_path

    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    manifest = json.loads(mpath.read_text())
    root = mpath.parent / manifest.get("root", ".")
    rep = ValidationReport()
    dcfg = manifest["config"]
    if model_config is None:
        src = dcfg.get("model_path") or default_model_path()
        model_config = json.loads(Path(src).read_text())
    limits = model_config["limits"]
    order = model_config["joint_order"]
    lo = np.array([limits[j][0] for j in order])
    hi = np.array([limits[j][1] for j in order])
    size = int(dcfg["image_size"])
    n_views = int(manifest.get("n_views", 0))
    if n_views != 9:
        rep.errors.append(f"manifest declares {n_views} views, expected 9")
    if manifest.get("accepted") != len(manifest["records"]):
        rep.errors.append("manifest accepted count does not match its record list")
    seen = set()

    renderer = None
    if rerender:
        from .dataset import DatasetConfig, render_views
        from .kinematics import load_model

        ds_cfg = DatasetConfig.from_dict(dcfg)
        renderer = (load_model(ds_cfg.model_path), ds_cfg, render_views)

    for k, rec in enumerate(manifest["records"]):
        sid = rec["sample_id"]
        err = lambda msg: rep.errors.append(f"{sid}: {msg}")
        if sid in seen:
            err("duplicate sample id")
        seen.add(sid)
        sdir = root / rec["path"]
        try:
            kp = np.array(json.loads((sdir / "keypoints.json").read_text())["keypoints"], float)
            tj = json.loads((sdir / "theta.json").read_text())
        except (OSError, ValueError, KeyError) as exc:
            err(f"unreadable record: {exc}")
            continue
        if kp.shape != (21, 3) or not np.all(np.isfinite(kp)):
            err(f"keypoints shape {kp.shape} or non-finite")
        theta = np.array(tj["theta"], float)
        if theta.shape != (17,) or not np.all(np.isfinite(theta)):
            err("theta is not a finite 17-vector")
            continue
        bad = [order[i] for i in np.flatnonzero((theta < lo) | (theta > hi))]
        if bad:
            err(f"joints outside limits: {bad}")
        for a, b, d, r_col in pair_clearances(model_config, theta):
            if d < r_col - DISTANCE_TOL:
                err(f"links {a}/{b} at {d * 1000:.4f} mm, below r_col {r_col * 1000:.4f} mm")
        views = []
        for v in range(9):
            f = sdir / f"robot_{v}.f32"
            if not f.exists():
                err(f"missing robot view {v}")
                continue
            views.append(_read_blob(f)[0])
        if (sdir / f"robot_9.f32").exists():
            err("more than nine robot views")
        if not (sdir / "human.f32").exists():
            err("missing human view")
        else:
            views.append(_read_blob(sdir / "human.f32")[0])
        for img in views:
            if img.shape != (size, size):
                err(f"image shape {img.shape}, expected {(size, size)}")
            elif not np.all(np.isfinite(img)) or img.min() < -1 or img.max() > 1:
                err("image values outside [-1, 1]")
        if renderer is not None and len(views) == 10:
            model, ds_cfg, render = renderer
            again = render(model, theta, ds_cfg)
            stored = np.stack(views[:9])
            if again.shape != stored.shape or again.tobytes() != stored.astype("<f4").tobytes():
                err("re-rendered robot views differ from the stored ones")
        rep.n_checked += 1
        if progress:
            progress(k + 1, len(manifest["records"]))
    if not manifest["records"]:
        rep.errors.append("dataset has no records")
    return rep
