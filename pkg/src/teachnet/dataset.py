"""Paired human/robot dataset synthesis and storage.

Layout of a dataset directory::

    manifest.json
    samples/<sample_id>/keypoints.json      21x3 human keypoints (m)
    samples/<sample_id>/theta.json          17 joint angles (rad) and solve stats
    samples/<sample_id>/human.f32 (+.json)  normalized human depth view
    samples/<sample_id>/robot_<k>.f32 (+.json) for k in 0..8

Every ``.f32`` blob is raw little-endian float32, row-major, described by a
JSON sidecar of the same stem. Generation is a pure function of the config
and seed: sample ``i`` draws from its own stream ``SeedSequence([seed, i])``.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .geometry import (
    Camera,
    ImageFormatError,
    camera_from_angles,
    crop_resize_normalize,
    default_cameras,
    read_image_blob,
    render_capsules,
    render_depth,
    write_image_blob,
)
from .human import SyntheticHumanModel, human_capsules, sample_human_pose
from .kinematics import JOINT_NAMES, fk_arrays, keypoint_positions, load_model, within_limits
from .retarget import (
    HumanHand,
    SolveConfig,
    align_to_common_frame,
    build_goalset,
    collision_cost,
    fingertip_errors,
    solve_ik,
)

__all__ = [
    "DatasetConfig",
    "Manifest",
    "PairedSample",
    "SampleNotFoundError",
    "generate_dataset",
    "split_dataset",
    "load_sample",
    "load_arrays",
    "render_views",
    "render_human_view",
]

log = logging.getLogger(__name__)

FORMAT = "teachnet-paired-v1"
N_VIEWS = 9


class SampleNotFoundError(KeyError):
    pass


@dataclass
class DatasetConfig:
    """Knobs of the generator; echoed verbatim into ``manifest.json``."""

    image_size: int = 100
    cube_size: float = 0.26
    camera_radius: float = 0.35
    camera_spread_deg: float = 30.0
    raw_width: int = 200
    raw_height: int = 200
    focal: float = 220.0
    z_near: float = 0.1
    z_far: float = 1.0
    max_attempts: int = 6
    #: acceptance gate on the mean fingertip residual (m)
    max_tip_residual: float = 0.01
    weights: tuple = (1.0, 0.2, 0.2)
    restarts: int = 3
    max_iterations: int = 300
    collision_weight: float = 10.0
    collision_margin: float = 5e-4
    human_scale: float = 1.0
    model_path: Optional[str] = None

    def intrinsics(self):
        return {"fx": self.focal, "fy": self.focal, "cx": self.raw_width / 2.0,
                "cy": self.raw_height / 2.0, "width": self.raw_width, "height": self.raw_height,
                "z_near": self.z_near, "z_far": self.z_far}

    def cameras(self) -> List[Camera]:
        return default_cameras(radius=self.camera_radius, spread_deg=self.camera_spread_deg,
                               **self.intrinsics())

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d:
            d["weights"] = tuple(d["weights"])
        return cls(**d)


@dataclass
class PairedSample:
    sample_id: str
    human_keypoints: np.ndarray
    human_image: np.ndarray
    theta: np.ndarray
    robot_images: np.ndarray
    camera_ids: List[int]
    cost: float
    meta: Dict = field(default_factory=dict)


class Manifest:
    """Parsed ``manifest.json`` bound to its dataset root."""

    def __init__(self, root, data):
        self.root = Path(root)
        self.data = data

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text())
        if data.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} manifest")
        root = Path(data.get("root", "."))
        if not root.is_absolute():
            root = (path.parent / root).resolve()
        return cls(root, data)

    @property
    def records(self):
        return self.data["records"]

    @property
    def ids(self):
        return [r["sample_id"] for r in self.records]

    def __len__(self):
        return len(self.records)

    @property
    def config(self) -> DatasetConfig:
        return DatasetConfig.from_dict(self.data["config"])

    def subset(self, ids, split=None):
        keep = set(ids)
        data = dict(self.data)
        data["records"] = [r for r in self.records if r["sample_id"] in keep]
        if split is not None:
            data["split"] = split
        return Manifest(self.root, data)

    def save(self, path):
        """Write the manifest; ``root`` is stored relative to the file's directory."""
        path = Path(path)
        data = dict(self.data)
        try:
            data["root"] = str(Path(self.root).resolve().relative_to(path.parent.resolve()))
        except ValueError:
            data["root"] = str(Path(self.root).resolve())
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _hand_center_cam(cam, points):
    return cam.to_camera(np.asarray(points).mean(axis=0))


def render_views(model, theta, cfg: DatasetConfig) -> np.ndarray:
    """Nine normalized ``image_size`` robot views, ``(9, S, S)`` float32."""
    kp = keypoint_positions(model, theta)
    out = []
    for cam in cfg.cameras():
        img = render_depth(model, theta, cam)
        out.append(crop_resize_normalize(img, _hand_center_cam(cam, kp), cfg.cube_size, cfg.image_size))
    return np.stack(out)


def render_human_view(hand: HumanHand, azimuth, elevation, cfg: DatasetConfig) -> np.ndarray:
    cam = camera_from_angles(azimuth, elevation, cfg.camera_radius, camera_id=-1, **cfg.intrinsics())
    P0, P1, radii = human_capsules(hand)
    img = render_capsules(P0, P1, radii, cam)
    return crop_resize_normalize(img, _hand_center_cam(cam, hand.keypoints), cfg.cube_size, cfg.image_size)


def _try_sample(model, hm, cfg, seed, index):
    """Generate sample ``index``; returns a dict of arrays or a rejection reason."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    reasons = []
    for attempt in range(cfg.max_attempts):
        hand = align_to_common_frame(sample_human_pose(hm, rng), scale=cfg.human_scale)
        goals = build_goalset(hand, cfg.weights)
        solve = SolveConfig(restarts=cfg.restarts, max_iterations=cfg.max_iterations,
                            collision_weight=cfg.collision_weight,
                            collision_margin=cfg.collision_margin,
                            seed=int(rng.integers(2**31)))
        sol = solve_ik(model, goals, solve)
        az, el = np.deg2rad(rng.uniform(-cfg.camera_spread_deg, cfg.camera_spread_deg, size=2))
        col = collision_cost(model, sol.theta)
        tip_res = float(fingertip_errors(model, sol.theta, goals).mean())
        if col != 0.0:
            reasons.append(f"attempt {attempt}: self-collision cost {col:.3g}")
            continue
        if not tip_res < cfg.max_tip_residual:
            reasons.append(f"attempt {attempt}: fingertip residual {tip_res * 1000:.2f} mm")
            continue
        return {
            "hand": hand, "theta": sol.theta, "cost": sol.cost, "tip_residual": tip_res,
            "attempts": attempt + 1, "azimuth": float(az), "elevation": float(el),
        }, reasons
    return None, reasons


def _write_sample(sdir: Path, model, cfg, res):
    sdir.mkdir(parents=True, exist_ok=True)
    hand, theta = res["hand"], res["theta"]
    (sdir / "keypoints.json").write_text(json.dumps({"keypoints": hand.keypoints.tolist()}) + "\n")
    (sdir / "theta.json").write_text(json.dumps({
        "joint_names": list(JOINT_NAMES), "theta": [float(v) for v in theta],
        "cost": res["cost"], "tip_residual": res["tip_residual"], "attempts": res["attempts"],
    }, indent=1) + "\n")
    views = render_views(model, theta, cfg)
    cams = cfg.cameras()
    for k, (img, cam) in enumerate(zip(views, cams)):
        write_image_blob(sdir / f"robot_{k}.f32", img, {
            "camera_id": cam.camera_id, "z_near": cam.z_near, "z_far": cam.z_far,
            "normalized": True, "cube_size": cfg.cube_size})
    himg = render_human_view(hand, res["azimuth"], res["elevation"], cfg)
    write_image_blob(sdir / "human.f32", himg, {
        "camera_id": -1, "z_near": cfg.z_near, "z_far": cfg.z_far, "normalized": True,
        "cube_size": cfg.cube_size, "azimuth": res["azimuth"], "elevation": res["elevation"]})


def _work(args):
    model_path, hm_dict, cfg_dict, seed, index, out_dir = args
    model = load_model(model_path)
    cfg = DatasetConfig.from_dict(cfg_dict)
    hm = SyntheticHumanModel(**hm_dict) if hm_dict else SyntheticHumanModel()
    return _generate_one(model, hm, cfg, seed, index, Path(out_dir))


def _generate_one(model, hm, cfg, seed, index, out_dir):
    sid = f"s{index:06d}"
    res, reasons = _try_sample(model, hm, cfg, seed, index)
    if res is None:
        return {"index": index, "sample_id": sid, "accepted": False, "reasons": reasons}
    _write_sample(out_dir / "samples" / sid, model, cfg, res)
    return {"index": index, "sample_id": sid, "accepted": True, "attempts": res["attempts"],
            "reasons": reasons}


def generate_dataset(n, seed, out_dir, cfg: Optional[DatasetConfig] = None,
                     human_model: Optional[SyntheticHumanModel] = None, n_jobs=1,
                     progress=None) -> Manifest:
    """Sample, retarget, filter and render ``n`` paired records into ``out_dir``.

    Indices whose attempts are all rejected are listed under ``skipped`` in
    the manifest together with the reasons.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or DatasetConfig()
    hm = human_model or SyntheticHumanModel()
    out_dir = Path(out_dir)
    if (out_dir / "samples").exists():
        shutil.rmtree(out_dir / "samples")
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    model = load_model(cfg.model_path)

    if n_jobs == 1:
        results = []
        for i in range(n):
            results.append(_generate_one(model, hm, cfg, seed, i, out_dir))
            if progress:
                progress(i + 1, n)
    else:
        from multiprocessing import Pool
        hm_dict = asdict(hm)
        args = [(cfg.model_path, hm_dict, cfg.to_dict(), seed, i, str(out_dir)) for i in range(n)]
        with Pool(n_jobs) as pool:
            results = pool.map(_work, args, chunksize=max(1, n // (4 * n_jobs)))

    results.sort(key=lambda r: r["index"])
    records, skipped = [], []
    rejected_attempts = 0
    for r in results:
        rejected_attempts += len(r["reasons"])
        if r["accepted"]:
            records.append({"sample_id": r["sample_id"], "index": r["index"],
                            "path": f"samples/{r['sample_id']}", "attempts": r["attempts"]})
        else:
            log.warning("sample %d skipped: %s", r["index"], "; ".join(r["reasons"]))
            skipped.append({"index": r["index"], "reasons": r["reasons"]})
    data = {
        "format": FORMAT,
        "root": ".",
        "seed": int(seed),
        "n_requested": int(n),
        "n_views": N_VIEWS,
        "joint_names": list(JOINT_NAMES),
        "config": cfg.to_dict(),
        "human_model": hm.to_dict(),
        "accepted": len(records),
        "rejected_attempts": rejected_attempts,
        "skipped": skipped,
        "records": records,
    }
    manifest = Manifest(out_dir, data)
    manifest.save(out_dir / "manifest.json")
    return manifest


def split_dataset(manifest: Manifest, train_fraction=0.75, seed=0):
    """Split by sample id so every view of a pose lands on the same side."""
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in [0, 1]")
    ids = manifest.ids
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    train_ids = [ids[i] for i in sorted(perm[:n_train])]
    test_ids = [ids[i] for i in sorted(perm[n_train:])]
    return manifest.subset(train_ids, "train"), manifest.subset(test_ids, "test")


def _record(manifest, sample_id):
    for r in manifest.records:
        if r["sample_id"] == sample_id:
            return r
    raise SampleNotFoundError(f"sample {sample_id!r} not in manifest")


def load_sample(manifest: Manifest, sample_id) -> PairedSample:
    rec = _record(manifest, sample_id)
    sdir = manifest.root / rec["path"]
    kp = np.array(json.loads((sdir / "keypoints.json").read_text())["keypoints"], dtype=float)
    tj = json.loads((sdir / "theta.json").read_text())
    human, hmeta = read_image_blob(sdir / "human.f32")
    views, cam_ids = [], []
    n_views = manifest.data.get("n_views", N_VIEWS)
    for k in range(n_views):
        img, meta = read_image_blob(sdir / f"robot_{k}.f32")
        views.append(img)
        cam_ids.append(int(meta["camera_id"]))
    shapes = {v.shape for v in views} | {human.shape}
    if len(shapes) != 1:
        raise ImageFormatError(f"{sample_id}: inconsistent image shapes {shapes}")
    return PairedSample(sample_id, kp, human, np.array(tj["theta"], dtype=float), np.stack(views),
                        cam_ids, float(tj["cost"]),
                        {"human": hmeta, "tip_residual": tj.get("tip_residual"),
                         "attempts": tj.get("attempts")})


def load_arrays(manifest: Manifest, size=None):
    """Stack a manifest into ``(human (n,S,S), robot (n,9,S,S), theta (n,17), ids)``.

    ``size`` resamples images by nearest neighbor.
    """
    from .geometry import resize_nearest

    if len(manifest) == 0:
        raise ValueError("manifest has no records")
    H, R, T = [], [], []
    for sid in manifest.ids:
        s = load_sample(manifest, sid)
        h, r = s.human_image, s.robot_images
        if size is not None and h.shape[-1] != size:
            h, r = resize_nearest(h, size), resize_nearest(r, size)
        H.append(h)
        R.append(r)
        T.append(s.theta)
    return (np.stack(H).astype(np.float32), np.stack(R).astype(np.float32),
            np.stack(T), manifest.ids)
