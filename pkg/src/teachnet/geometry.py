"""Capsule geometry, pinhole cameras and depth rendering.

Links are rendered as capsules (a segment swept by a sphere). Depth images
store the camera-frame z coordinate of the nearest hit in meters; pixels
with no hit hold ``z_far``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .kinematics import RigidTransform, fk_arrays, posed_capsules

__all__ = [
    "Capsule",
    "Camera",
    "DepthImage",
    "ImageFormatError",
    "closest_points_segments",
    "segment_segment_distance",
    "capsule_distance",
    "ray_capsule_intersect",
    "render_capsules",
    "render_depth",
    "crop_resize_normalize",
    "resize_nearest",
    "look_at",
    "default_cameras",
    "camera_from_angles",
    "write_image_blob",
    "read_image_blob",
]

_EPS = 1e-12


class ImageFormatError(ValueError):
    """An image blob or its sidecar is inconsistent."""


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))


def closest_points_segments(a0, a1, b0, b1):
    """Closest points between segment batches ``[a0, a1]`` and ``[b0, b1]``.

    All inputs are ``(n, 3)`` (or ``(3,)``). Returns ``(pa, pb, dist)``.
    Zero-length segments degrade to points.
    """
    a0, a1, b0, b1 = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (a0, a1, b0, b1))
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)

    a_pt = a <= _EPS
    e_pt = e <= _EPS
    safe_a = np.where(a_pt, 1.0, a)
    safe_e = np.where(e_pt, 1.0, e)
    denom = a * e - b * b

    s = np.where(denom > _EPS * np.maximum(a * e, _EPS),
                 np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    lo = t < 0.0
    hi = t > 1.0
    s = np.where(lo, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(hi, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate branches
    s = np.where(e_pt, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(e_pt, 0.0, t)
    s = np.where(a_pt, 0.0, s)
    t = np.where(a_pt, np.clip(f / safe_e, 0.0, 1.0), t)
    both = a_pt & e_pt
    s = np.where(both, 0.0, s)
    t = np.where(both, 0.0, t)

    pa = a0 + d1 * s[:, None]
    pb = b0 + d2 * t[:, None]
    dist = np.linalg.norm(pa - pb, axis=1)
    return pa, pb, dist


def segment_segment_distance(a0, a1, b0, b1):
    """Exact minimum distance between two 3D segments."""
    d1 = float(closest_points_segments(a0, a1, b0, b1)[2][0])
    d2 = float(closest_points_segments(b0, b1, a0, a1)[2][0])
    # symmetric by construction
    return min(d1, d2)


def capsule_distance(c1: Capsule, c2: Capsule) -> float:
    """Surface-to-surface distance; negative when the capsules interpenetrate."""
    return segment_segment_distance(c1.p0, c1.p1, c2.p0, c2.p1) - (c1.radius + c2.radius)


def ray_capsule_intersect(origins, dirs, p0, p1, radius):
    """Ray parameter of the first hit of each ray on one capsule, ``inf`` when missed.

    ``dirs`` must be unit vectors. Rays starting inside the capsule are not
    reported as hits.
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    r2 = float(radius) ** 2
    ba = p1 - p0
    baba = ba @ ba
    oa = origins - p0
    bard = dirs @ ba
    baoa = oa @ ba
    rdoa = np.einsum("ij,ij->i", dirs, oa)
    oaoa = np.einsum("ij,ij->i", oa, oa)

    out = np.full(len(origins), np.inf)
    if baba > _EPS:
        a = baba - bard * bard
        b = baba * rdoa - baoa * bard
        c = baba * oaoa - baoa * baoa - r2 * baba
        h = b * b - a * c
        ok = (h >= 0.0) & (a > _EPS)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (-b - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, a, 1.0)
        y = baoa + t * bard
        body = ok & (y > 0.0) & (y < baba) & (t > 0.0)
        out[body] = t[body]
    # spherical caps
    for centre in (p0, p1):
        oc = origins - centre
        b = np.einsum("ij,ij->i", dirs, oc)
        c = np.einsum("ij,ij->i", oc, oc) - r2
        h = b * b - c
        ok = (h > 0.0) & (c > 0.0)
        t = -b - np.sqrt(np.where(ok, h, 0.0))
        hit = ok & (t > 0.0)
        out = np.where(hit & (t < out), t, out)
    # an origin inside the cylinder part is outside both cap spheres
    h = np.clip(baoa / baba, 0.0, 1.0) if baba > _EPS else np.zeros(len(origins))
    off = oa - h[:, None] * ba
    out[np.einsum("ij,ij->i", off, off) < r2] = np.inf
    return out


@dataclass(frozen=True)
class Camera:
    """Pinhole depth camera. ``pose`` maps world points into the camera frame
    (x right, y down, z along the optical axis)."""

    pose: RigidTransform
    fx: float = 220.0
    fy: float = 220.0
    cx: float = 80.0
    cy: float = 80.0
    width: int = 160
    height: int = 160
    z_near: float = 0.1
    z_far: float = 1.0
    camera_id: int = 0

    def __post_init__(self):
        if not (0 < self.z_near < self.z_far):
            raise ValueError("require 0 < z_near < z_far")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def position(self):
        """Camera centre in world coordinates."""
        return self.pose.inverse().translation

    @property
    def optical_axis(self):
        """World-frame unit vector of the camera z axis."""
        return self.pose.rotation[2].copy()

    def to_camera(self, points):
        return self.pose.apply(points)

    def project(self, points_cam):
        p = np.atleast_2d(points_cam)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx,
                         self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)

    def ray_directions(self):
        """Unit camera-frame ray per pixel centre, shape ``(H*W, 3)``."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def intrinsics_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "z_near": self.z_near, "z_far": self.z_far}


@dataclass
class DepthImage:
    """Row-major depth map in meters with ``z_far`` as background."""

    data: np.ndarray
    z_near: float
    z_far: float
    fx: float
    fy: float
    cx: float
    cy: float
    camera_id: int = 0

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def background(self):
        return self.data >= self.z_far

    def check(self):
        d = self.data
        if not np.all(np.isfinite(d)):
            raise ImageFormatError("depth image contains non-finite values")
        fg = d[d < self.z_far]
        if fg.size and (fg.min() < self.z_near):
            raise ImageFormatError("foreground depth below z_near")
        return self


def render_capsules(P0, P1, radii, camera: Camera, noise_std=0.0, rng=None) -> DepthImage:
    """Ray cast world-frame capsules into a depth image.

    Each capsule only tests pixels inside the projection of its bounding
    box, which is conservative, so the result equals a full per-pixel cast.
    """
    W, H = camera.width, camera.height
    depth = np.full(H * W, camera.z_far)
    dirs = camera.ray_directions()
    dz = dirs[:, 2]
    Q0 = camera.to_camera(np.atleast_2d(P0))
    Q1 = camera.to_camera(np.atleast_2d(P1))
    for q0, q1, r in zip(Q0, Q1, np.atleast_1d(radii)):
        idx = _candidate_pixels(q0, q1, r, camera)
        if idx is None:
            continue
        if idx.size == 0:
            continue
        t = ray_capsule_intersect(np.zeros((idx.size, 3)), dirs[idx], q0, q1, r)
        z = t * dz[idx]
        valid = np.isfinite(z) & (z >= camera.z_near) & (z < camera.z_far)
        sel = idx[valid]
        depth[sel] = np.minimum(depth[sel], z[valid])
    if noise_std > 0.0:
        rng = np.random.default_rng() if rng is None else rng
        fg = depth < camera.z_far
        noisy = depth[fg] + rng.normal(0.0, noise_std, size=int(fg.sum()))
        depth[fg] = np.clip(noisy, camera.z_near, np.nextafter(camera.z_far, 0.0))
    data = depth.reshape(H, W).astype(np.float32)
    # float32 rounding must not push foreground onto the background sentinel
    data = np.where((depth.reshape(H, W) < camera.z_far) & (data >= camera.z_far),
                    np.nextafter(np.float32(camera.z_far), np.float32(0)), data).astype(np.float32)
    return DepthImage(data, camera.z_near, camera.z_far, camera.fx, camera.fy,
                      camera.cx, camera.cy, camera.camera_id)


def _candidate_pixels(q0, q1, r, camera):
    lo = np.minimum(q0, q1) - r
    hi = np.maximum(q0, q1) + r
    if hi[2] <= 0.0:
        return None
    W, H = camera.width, camera.height
    if lo[2] <= 1e-6:
        return np.arange(W * H)
    xs = (lo[0] / lo[2], lo[0] / hi[2], hi[0] / lo[2], hi[0] / hi[2])
    ys = (lo[1] / lo[2], lo[1] / hi[2], hi[1] / lo[2], hi[1] / hi[2])
    u0 = int(np.floor(camera.fx * min(xs) + camera.cx - 0.5)) - 1
    u1 = int(np.ceil(camera.fx * max(xs) + camera.cx - 0.5)) + 1
    v0 = int(np.floor(camera.fy * min(ys) + camera.cy - 0.5)) - 1
    v1 = int(np.ceil(camera.fy * max(ys) + camera.cy - 0.5)) + 1
    u0, v0 = max(u0, 0), max(v0, 0)
    u1, v1 = min(u1, W - 1), min(v1, H - 1)
    if u0 > u1 or v0 > v1:
        return np.empty(0, dtype=int)
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    return (vv * W + uu).ravel()


def render_depth(model, theta, camera: Camera, noise_std=0.0, rng=None) -> DepthImage:
    """Depth image of the robot hand posed at ``theta``."""
    P0, P1, radii = posed_capsules(model, theta, fk_arrays(model, theta))
    return render_capsules(P0, P1, radii, camera, noise_std=noise_std, rng=rng)


def resize_nearest(img, size):
    """Nearest-neighbor resample of a ``(..., H, W)`` array to ``size x size``."""
    img = np.asarray(img)
    H, W = img.shape[-2:]
    rows = np.minimum(((np.arange(size) + 0.5) * H / size).astype(int), H - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * W / size).astype(int), W - 1)
    return img[..., rows[:, None], cols[None, :]]


def crop_resize_normalize(img: DepthImage, center, cube_size, out_size=100):
    """Crop a cube of side ``cube_size`` around camera-frame ``center``.

    Depth is clipped to the cube and mapped affinely so the front face is -1,
    the back face +1; background and out-of-image pixels are +1.
    """
    center = np.asarray(center, dtype=float)
    if center[2] <= 0:
        raise ValueError("crop centre must lie in front of the camera")
    half = 0.5 * cube_size
    cu = img.fx * center[0] / center[2] + img.cx
    cv = img.fy * center[1] / center[2] + img.cy
    hu = img.fx * half / center[2]
    hv = img.fy * half / center[2]
    step_u = 2.0 * hu / out_size
    step_v = 2.0 * hv / out_size
    us = np.floor(cu - hu + (np.arange(out_size) + 0.5) * step_u).astype(int)
    vs = np.floor(cv - hv + (np.arange(out_size) + 0.5) * step_v).astype(int)
    inside_u = (us >= 0) & (us < img.width)
    inside_v = (vs >= 0) & (vs < img.height)
    src = img.data[np.clip(vs, 0, img.height - 1)[:, None], np.clip(us, 0, img.width - 1)[None, :]]
    src = src.astype(np.float64)
    bg = (src >= img.z_far) | ~(inside_v[:, None] & inside_u[None, :])
    front = center[2] - half
    out = (np.clip(src, front, center[2] + half) - center[2]) / half
    out[bg] = 1.0
    return out.astype(np.float32)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    Image ``y`` points down, i.e. against ``up``.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return RigidTransform(R, -R @ eye)


#: Nominal hand centre in frame F that every default camera looks at.
HAND_CENTER = (0.0, -0.01, 0.07)


def camera_from_angles(azimuth, elevation, radius=0.35, center=HAND_CENTER, camera_id=0, **intrinsics):
    """Camera on a sphere around ``center``; azimuth 0, elevation 0 is the palm-side view."""
    center = np.asarray(center, dtype=float)
    eye = center + radius * np.array([np.sin(azimuth) * np.cos(elevation),
                                      -np.cos(azimuth) * np.cos(elevation),
                                      np.sin(elevation)])
    return Camera(pose=look_at(eye, center), camera_id=camera_id, **intrinsics)


def default_cameras(radius=0.35, center=HAND_CENTER, spread_deg=30.0, **intrinsics) -> List[Camera]:
    """Nine cameras: 3 azimuths x 3 elevations spanning ``+-spread_deg``."""
    angles = np.deg2rad([-spread_deg, 0.0, spread_deg])
    cams = []
    for el in angles[::-1]:
        for az in angles:
            cams.append(camera_from_angles(az, el, radius, center, camera_id=len(cams), **intrinsics))
    return cams


def write_image_blob(path, data, meta):
    """Write ``data`` as raw little-endian float32 plus a ``.json`` sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ImageFormatError("image blobs must be 2-D")
    side = dict(meta)
    side["height"], side["width"] = int(arr.shape[0]), int(arr.shape[1])
    path.write_bytes(arr.tobytes())
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")


def read_image_blob(path):
    """Read a blob written by :func:`write_image_blob`; returns ``(data, meta)``."""
    path = Path(path)
    side = path.with_suffix(".json")
    try:
        meta = json.loads(side.read_text())
        w, h = int(meta["width"]), int(meta["height"])
    except (OSError, KeyError, ValueError) as exc:
        raise ImageFormatError(f"bad sidecar {side}: {exc}") from exc
    raw = path.read_bytes()
    if len(raw) != w * h * 4:
        raise ImageFormatError(f"{path}: expected {w * h * 4} bytes for {w}x{h}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float32)
    return data, meta


def write_depth(path, img: DepthImage):
    meta = {"z_near": img.z_near, "z_far": img.z_far, "camera_id": img.camera_id,
            "fx": img.fx, "fy": img.fy, "cx": img.cx, "cy": img.cy}
    write_image_blob(path, img.data, meta)


def read_depth(path) -> DepthImage:
    data, meta = read_image_blob(path)
    return DepthImage(data, meta["z_near"], meta["z_far"], meta["fx"], meta["fy"],
                      meta["cx"], meta["cy"], meta.get("camera_id", 0)).check()
