"""Robot hand kinematic model and forward kinematics.

The model is a link tree rooted at the wrist. Every link carries a fixed
transform to its parent and, when actuated, a revolute axis. Forward
kinematics output is expressed in the common frame ``F`` shared with the
human hand: ``F`` sits ``wrist_offset_z`` above the robot wrist, so the robot
wrist itself is at ``(0, 0, -wrist_offset_z)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "JOINT_NAMES",
    "FINGERS",
    "KEYPOINT_KINDS",
    "ModelError",
    "RigidTransform",
    "KinematicModel",
    "load_model",
    "default_model_path",
    "forward_kinematics",
    "keypoint_positions",
    "link_directions",
    "clamp_to_limits",
    "within_limits",
    "rotation_about_axis",
]

N_JOINTS = 17

#: Canonical joint ordering used for every serialized joint vector.
JOINT_NAMES = (
    "FFJ2", "FFJ3", "FFJ4",
    "MFJ2", "MFJ3", "MFJ4",
    "RFJ2", "RFJ3", "RFJ4",
    "LFJ2", "LFJ3", "LFJ4", "LFJ5",
    "THJ2", "THJ3", "THJ4", "THJ5",
)
FINGERS = ("FF", "MF", "RF", "LF", "TH")
KEYPOINT_KINDS = ("TIP", "PIP", "MCP")


class ModelError(ValueError):
    """Raised when a kinematic model config is malformed or violates an invariant."""


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix for a unit ``axis`` and ``angle`` in radians."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _rpy_matrix(rpy):
    r, p, y = rpy
    return (rotation_about_axis((0.0, 0.0, 1.0), y)
            @ rotation_about_axis((0.0, 1.0, 0.0), p)
            @ rotation_about_axis((1.0, 0.0, 0.0), r))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation; maps local points to the parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points):
        """Transform a point or an ``(n, 3)`` array of points."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other):
        """Return ``self * other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    fixed: RigidTransform
    axis: Optional[np.ndarray]


@dataclass(frozen=True)
class Keypoint:
    finger: str
    kind: str
    link: str
    offset: np.ndarray


@dataclass(frozen=True)
class CapsuleSpec:
    link: str
    p0: np.ndarray
    p1: np.ndarray
    radius: float


@dataclass(frozen=True)
class CollisionPair:
    a: str
    b: str
    r_col: float


@dataclass(frozen=True, eq=False)
class KinematicModel:
    """Immutable robot hand description.

    ``joint_index_map[k]`` is the index of the link driven by joint slot ``k``
    of the canonical ordering :data:`JOINT_NAMES`.
    """

    name: str
    links: Tuple[Link, ...]
    joint_index_map: Tuple[int, ...]
    theta_min: np.ndarray
    theta_max: np.ndarray
    keypoints: Tuple[Keypoint, ...]
    direction_links: Tuple[Tuple[str, np.ndarray], ...]
    capsules: Tuple[CapsuleSpec, ...]
    collision_pairs: Tuple[CollisionPair, ...]
    wrist_offset_z: float = 0.034
    notes: str = ""
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        jol = np.full(len(self.links), -1, dtype=int)
        for k, li in enumerate(self.joint_index_map):
            jol[li] = k
        object.__setattr__(self, "_joint_of_link", jol)
        object.__setattr__(self, "_kp_links", np.array([self._index[k.link] for k in self.keypoints], dtype=int))
        object.__setattr__(self, "_kp_offsets", np.array([k.offset for k in self.keypoints]))
        object.__setattr__(self, "_dir_links", np.array([self._index[n] for n, _ in self.direction_links], dtype=int))
        object.__setattr__(self, "_dir_local", np.array([d for _, d in self.direction_links]))
        object.__setattr__(self, "_cap_links", np.array([self._index[c.link] for c in self.capsules], dtype=int))
        object.__setattr__(self, "_cap_p0", np.array([c.p0 for c in self.capsules]).reshape(-1, 3))
        object.__setattr__(self, "_cap_p1", np.array([c.p1 for c in self.capsules]).reshape(-1, 3))
        object.__setattr__(self, "_cap_r", np.array([c.radius for c in self.capsules]))
        hats = np.zeros((len(self.links), 3, 3))
        for i, l in enumerate(self.links):
            if l.axis is not None:
                x, y, z = l.axis
                hats[i] = [[0, -z, y], [z, 0, -x], [-y, x, 0]]
        object.__setattr__(self, "_axis_hat", hats)
        object.__setattr__(self, "_fixed_R", np.array([l.fixed.rotation for l in self.links]))
        object.__setattr__(self, "_fixed_t", np.array([l.fixed.translation for l in self.links]))
        depth = []
        for l in self.links:
            depth.append(0 if l.parent < 0 else depth[l.parent] + 1)
        depth = np.array(depth)
        levels = [np.flatnonzero(depth == d) for d in range(depth.max() + 1)]
        parents = np.array([l.parent for l in self.links])
        object.__setattr__(self, "_levels", levels)
        object.__setattr__(self, "_level_parents", [parents[lv] for lv in levels])

    @property
    def link_names(self):
        return [l.name for l in self.links]

    @property
    def n_joints(self):
        return len(self.joint_index_map)

    def link_index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown link {name!r}") from None

    def joint_of_link(self):
        """Array mapping link index to joint slot, -1 for fixed links."""
        return self._joint_of_link.copy()

    def ancestors(self, link):
        """Indices of ``link`` and all links above it, leaf first."""
        i = self.link_index(link) if isinstance(link, str) else int(link)
        chain = []
        while i >= 0:
            chain.append(i)
            i = self.links[i].parent
        return chain

    def subtree(self, link):
        """Indices of ``link`` and every link below it."""
        root = self.link_index(link) if isinstance(link, str) else int(link)
        out = {root}
        for i, l in enumerate(self.links):
            if l.parent in out:
                out.add(i)
        return sorted(out)

    @property
    def mid_range(self):
        return 0.5 * (self.theta_min + self.theta_max)


def default_model_path():
    return Path(str(resources.files("teachnet") / "data" / "shadow_hand.json"))


def _vec3(value, what):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ModelError(f"{what} must be a finite 3-vector, got {value!r}")
    return arr


def model_from_dict(cfg):
    """Build and validate a :class:`KinematicModel` from a parsed config."""
    try:
        link_cfg = cfg["links"]
        order = list(cfg.get("joint_order", JOINT_NAMES))
        limits = cfg["limits"]
        kp_cfg = cfg["keypoints"]
        dir_cfg = cfg["direction_links"]
        cap_cfg = cfg["capsules"]
        pair_cfg = cfg["collision_pairs"]
    except KeyError as exc:
        raise ModelError(f"missing config key {exc.args[0]!r}") from None

    if len(order) != N_JOINTS:
        raise ModelError(f"expected {N_JOINTS} actuated joints, config lists {len(order)}")
    if tuple(order) != JOINT_NAMES:
        raise ModelError("joint_order must follow the canonical ordering " + ",".join(JOINT_NAMES))

    index = {}
    links = []
    joint_links = {}
    for i, lc in enumerate(link_cfg):
        name = lc["name"]
        if name in index:
            raise ModelError(f"duplicate link name {name!r}")
        parent = lc.get("parent")
        if parent is None:
            if i != 0:
                raise ModelError(f"link {name!r} has no parent but is not the first link")
            pidx = -1
        else:
            if parent not in index:
                raise ModelError(f"link {name!r}: parent {parent!r} must appear before it")
            pidx = index[parent]
        rot = _rpy_matrix(_vec3(lc.get("rpy", (0, 0, 0)), f"{name}.rpy"))
        fixed = RigidTransform(rot, _vec3(lc.get("xyz", (0, 0, 0)), f"{name}.xyz"))
        axis = lc.get("axis")
        joint = lc.get("joint")
        if (axis is None) != (joint is None):
            raise ModelError(f"link {name!r}: axis and joint must be given together")
        if axis is not None:
            axis = _vec3(axis, f"{name}.axis")
            norm = np.linalg.norm(axis)
            if norm == 0:
                raise ModelError(f"link {name!r}: zero joint axis")
            axis = axis / norm
            if joint in joint_links:
                raise ModelError(f"joint {joint!r} drives more than one link")
            joint_links[joint] = i
        index[name] = i
        links.append(Link(name, pidx, fixed, axis))
    if not links:
        raise ModelError("model has no links")

    missing = [j for j in order if j not in joint_links]
    if missing or len(joint_links) != N_JOINTS:
        raise ModelError(f"actuated joints must be exactly {N_JOINTS}; missing {missing}")
    joint_index_map = tuple(joint_links[j] for j in order)

    try:
        lo = np.array([float(limits[j][0]) for j in order])
        hi = np.array([float(limits[j][1]) for j in order])
    except KeyError as exc:
        raise ModelError(f"no limits for joint {exc.args[0]!r}") from None
    bad = np.flatnonzero(~(lo < hi))
    if bad.size:
        raise ModelError("theta_min must be < theta_max; violated for "
                         + ", ".join(order[b] for b in bad))

    keypoints = []
    for kc in kp_cfg:
        if kc["link"] not in index:
            raise ModelError(f"keypoint link {kc['link']!r} does not exist")
        keypoints.append(Keypoint(kc["finger"], kc["kind"], kc["link"],
                                  _vec3(kc["offset"], "keypoint offset")))
    combos = {(k.finger, k.kind) for k in keypoints}
    if len(keypoints) != 15 or combos != {(f, k) for f in FINGERS for k in KEYPOINT_KINDS}:
        raise ModelError("keypoints must be exactly {TIP, PIP, MCP} x 5 fingers")

    directions = []
    for dc in dir_cfg:
        if dc["link"] not in index:
            raise ModelError(f"direction link {dc['link']!r} does not exist")
        d = _vec3(dc["direction"], "direction")
        n = np.linalg.norm(d)
        if n == 0:
            raise ModelError(f"direction for {dc['link']!r} is zero")
        directions.append((dc["link"], d / n))
    if len(directions) != 6:
        raise ModelError(f"exactly 6 direction links required, got {len(directions)}")

    capsules = []
    for lname, cc in cap_cfg.items():
        if lname not in index:
            raise ModelError(f"capsule link {lname!r} does not exist")
        r = float(cc["radius"])
        if not r > 0:
            raise ModelError(f"capsule radius for {lname!r} must be positive")
        capsules.append(CapsuleSpec(lname, _vec3(cc["p0"], "p0"), _vec3(cc["p1"], "p1"), r))
    cap_links = {c.link for c in capsules}

    pairs = []
    for pc in pair_cfg:
        a, b, r = pc["a"], pc["b"], float(pc["r_col"])
        for l in (a, b):
            if l not in cap_links:
                raise ModelError(f"collision pair references link {l!r} without a capsule")
        if not r > 0:
            raise ModelError(f"r_col for pair ({a}, {b}) must be positive")
        pairs.append(CollisionPair(a, b, r))

    offset = float(cfg.get("wrist_offset_z", 0.034))
    return KinematicModel(
        name=cfg.get("name", "robot_hand"),
        links=tuple(links),
        joint_index_map=joint_index_map,
        theta_min=lo,
        theta_max=hi,
        keypoints=tuple(keypoints),
        direction_links=tuple(directions),
        capsules=tuple(capsules),
        collision_pairs=tuple(pairs),
        wrist_offset_z=offset,
        notes=cfg.get("notes", ""),
        _index=index,
    )


def load_model(config_path=None):
    """Load a kinematic model from a JSON config (the bundled Shadow-like hand by default)."""
    path = Path(config_path) if config_path is not None else default_model_path()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"cannot parse {path}: {exc}") from exc
    return model_from_dict(cfg)


def _check_theta(theta, n=N_JOINTS):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n,):
        raise ValueError(f"joint vector must have length {n}, got shape {theta.shape}")
    return theta


def fk_arrays(model, theta):
    """Forward kinematics as stacked arrays ``(R, t)`` of shape ``(L, 3, 3)`` and ``(L, 3)``.

    Links are processed one tree level at a time; each level is a batched
    product ``parent * fixed * joint_rotation``.
    """
    theta = _check_theta(theta, model.n_joints)
    ang = np.zeros(len(model.links))
    act = model._joint_of_link >= 0
    ang[act] = theta[model._joint_of_link[act]]
    K = model._axis_hat
    s = np.sin(ang)[:, None, None]
    c = (1.0 - np.cos(ang))[:, None, None]
    local_R = model._fixed_R @ (np.eye(3) + s * K + c * (K @ K))
    R = np.empty((len(model.links), 3, 3))
    t = np.empty((len(model.links), 3))
    root = model._levels[0]
    R[root] = local_R[root]
    t[root] = model._fixed_t[root] + np.array([0.0, 0.0, -model.wrist_offset_z])
    for idx, par in zip(model._levels[1:], model._level_parents[1:]):
        Rp = R[par]
        R[idx] = Rp @ local_R[idx]
        t[idx] = np.einsum("nij,nj->ni", Rp, model._fixed_t[idx]) + t[par]
    return R, t


def forward_kinematics(model, theta):
    """World transform (frame ``F``) of every link, keyed by link name."""
    R, t = fk_arrays(model, theta)
    return {l.name: RigidTransform(R[i], t[i]) for i, l in enumerate(model.links)}


def keypoint_positions(model, theta, fk=None):
    """``15x3`` keypoint positions in meters, rows in ``model.keypoints`` order."""
    R, t = fk if fk is not None else fk_arrays(model, theta)
    idx = model._kp_links
    return np.einsum("nij,nj->ni", R[idx], model._kp_offsets) + t[idx]


def link_directions(model, theta, fk=None):
    """``6x3`` unit direction vectors of the direction links in frame ``F``."""
    R, _ = fk if fk is not None else fk_arrays(model, theta)
    return np.einsum("nij,nj->ni", R[model._dir_links], model._dir_local)


def clamp_to_limits(model, theta):
    return np.clip(np.asarray(theta, dtype=float), model.theta_min, model.theta_max)


def within_limits(model, theta):
    theta = np.asarray(theta, dtype=float)
    return theta.shape == (model.n_joints,) and bool(
        np.all(theta >= model.theta_min) and np.all(theta <= model.theta_max))


def keypoint_indices(model, kind: str) -> List[int]:
    """Rows of ``model.keypoints`` with the given kind, in finger order."""
    rows = {(k.finger, k.kind): i for i, k in enumerate(model.keypoints)}
    return [rows[(f, kind)] for f in FINGERS]


def sample_uniform(model, rng, n: Optional[int] = None):
    """Joint vectors drawn uniformly within limits."""
    size = (model.n_joints,) if n is None else (n, model.n_joints)
    return rng.uniform(model.theta_min, model.theta_max, size=size)


def posed_capsules(model, theta, fk=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame capsule endpoints ``(P0, P1)`` and radii for every capsule."""
    R, t = fk if fk is not None else fk_arrays(model, theta)
    idx = model._cap_links
    P0 = np.einsum("nij,nj->ni", R[idx], model._cap_p0) + t[idx]
    P1 = np.einsum("nij,nj->ni", R[idx], model._cap_p1) + t[idx]
    return P0, P1, model._cap_r.copy()


def capsule_index(model) -> Dict[str, int]:
    return {c.link: i for i, c in enumerate(model.capsules)}


def theta_from_names(values: Dict[str, float]) -> np.ndarray:
    """Joint vector from a name-to-angle mapping; missing joints default to 0."""
    unknown = set(values) - set(JOINT_NAMES)
    if unknown:
        raise KeyError(f"unknown joints: {sorted(unknown)}")
    return np.array([float(values.get(j, 0.0)) for j in JOINT_NAMES])


def names_from_theta(theta: Sequence[float]) -> Dict[str, float]:
    theta = _check_theta(theta)
    return {j: float(v) for j, v in zip(JOINT_NAMES, theta)}
