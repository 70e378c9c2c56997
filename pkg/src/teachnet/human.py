"""Synthetic articulated human hand used in place of a recorded pose corpus.

Each finger is a serial chain rooted at its MCP position in frame ``F``
(wrist at the origin, fingers along +z, palm facing -y). Joint angles are
drawn uniformly within per-joint ranges; the DIP (thumb IP) angle follows
the preceding flexion through a coupling coefficient. Global hand
orientation is not sampled here; viewpoint variety comes from the camera.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Tuple

import numpy as np

from .kinematics import rotation_about_axis
from .retarget import HUMAN_KEYPOINT_NAMES, HumanHand

__all__ = ["SyntheticHumanModel", "sample_human_pose", "human_pose_from_angles",
           "human_capsules", "DOF_NAMES"]

_X = (1.0, 0.0, 0.0)
_Y = (0.0, 1.0, 0.0)
# 35 deg off +z towards +x
_LF_CMC_AXIS = (float(np.sin(np.deg2rad(35.0))), 0.0, float(np.cos(np.deg2rad(35.0))))

#: Free angles, in sampling order.
DOF_NAMES = (
    "I_ABD", "I_MCP", "I_PIP",
    "M_ABD", "M_MCP", "M_PIP",
    "R_ABD", "R_MCP", "R_PIP",
    "P_CMC", "P_ABD", "P_MCP", "P_PIP",
    "T_ROT", "T_CMC", "T_MCP_FLEX", "T_MCP_ABD",
)


def _default_ranges():
    r = {}
    for f in "IMR":
        r[f + "_ABD"] = (-0.25, 0.25)
        r[f + "_MCP"] = (-0.2, 1.4)
        r[f + "_PIP"] = (0.0, 1.4)
    r["P_CMC"] = (0.0, 0.6)
    r["P_ABD"] = (-0.25, 0.25)
    r["P_MCP"] = (-0.2, 1.4)
    r["P_PIP"] = (0.0, 1.4)
    r["T_ROT"] = (-0.9, 0.9)
    r["T_CMC"] = (0.0, 1.1)
    r["T_MCP_FLEX"] = (-0.15, 0.15)
    r["T_MCP_ABD"] = (-0.4, 0.4)
    return r


def _default_bones():
    b = {}
    for f, (p, m, d) in {"I": (0.043, 0.024, 0.024), "M": (0.046, 0.026, 0.025),
                         "R": (0.043, 0.025, 0.024), "P": (0.038, 0.021, 0.022)}.items():
        b[f + "_proximal"], b[f + "_middle"], b[f + "_distal"] = p, m, d
    b["T_metacarpal"], b["T_proximal"], b["T_distal"] = 0.038, 0.030, 0.027
    b["P_metacarpal"] = 0.064
    return b


@dataclass(frozen=True)
class SyntheticHumanModel:
    """Bone lengths (m), joint ranges (rad) and flexion couplings of the sampler."""

    bones: Dict[str, float] = field(default_factory=_default_bones)
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=_default_ranges)
    #: DIP angle = coupling * PIP angle (fingers); thumb IP = coupling * MCP abduction magnitude
    coupling: Dict[str, float] = field(default_factory=lambda: {"I": 0.5, "M": 0.5, "R": 0.5,
                                                                 "P": 0.5, "T": 0.5})
    mcp: Dict[str, Tuple[float, float, float]] = field(default_factory=lambda: {
        "I": (0.032, 0.0, 0.093), "M": (0.011, 0.0, 0.097), "R": (-0.011, 0.0, 0.093),
        "T": (0.034, -0.0085, 0.029), "P_CMC": (-0.033, 0.0, 0.0207)})
    thumb_tilt: float = 0.785398

    def __post_init__(self):
        for k, v in self.bones.items():
            if not v > 0:
                raise ValueError(f"bone length {k} must be positive")
        for k in DOF_NAMES:
            lo, hi = self.ranges[k]
            if not lo <= hi:
                raise ValueError(f"empty range for {k}")

    def midpoints(self):
        return np.array([0.5 * (self.ranges[k][0] + self.ranges[k][1]) for k in DOF_NAMES])

    def to_dict(self):
        d = asdict(self)
        d["ranges"] = {k: list(v) for k, v in d["ranges"].items()}
        d["mcp"] = {k: list(v) for k, v in d["mcp"].items()}
        return d


def _chain(R, p, steps):
    """Walk a serial chain. ``steps`` is a list of (axis, angle, bone_length);
    rotations apply before translating along the local z axis. Returns the
    positions after every step."""
    out = []
    for axis, angle, length in steps:
        if axis is not None:
            R = R @ rotation_about_axis(axis, angle)
        p = p + R[:, 2] * length
        out.append(p)
    return R, out


def human_pose_from_angles(model: SyntheticHumanModel, angles) -> HumanHand:
    """Keypoints for explicit DOF values (ordered as :data:`DOF_NAMES`)."""
    a = dict(zip(DOF_NAMES, np.asarray(angles, dtype=float)))
    b, c = model.bones, model.coupling
    kp = np.zeros((21, 3))
    idx = {n: i for i, n in enumerate(HUMAN_KEYPOINT_NAMES)}

    def finger(letter, R0, base):
        kp[idx[letter + "_MCP"]] = base
        R = R0 @ rotation_about_axis((0.0, -1.0, 0.0) if letter in "IM" else _Y, a[letter + "_ABD"])
        flex = [(_X, a[letter + "_MCP"], b[letter + "_proximal"]),
                (_X, a[letter + "_PIP"], b[letter + "_middle"]),
                (_X, c[letter] * a[letter + "_PIP"], b[letter + "_distal"])]
        _, pts = _chain(R, np.asarray(base, dtype=float), flex)
        kp[idx[letter + "_PIP"]], kp[idx[letter + "_DIP"]], kp[idx[letter + "_TIP"]] = pts

    for letter in "IMR":
        finger(letter, np.eye(3), model.mcp[letter])

    # little finger hangs off a cupping metacarpal
    Rm = rotation_about_axis(_LF_CMC_AXIS, a["P_CMC"])
    base = np.asarray(model.mcp["P_CMC"]) + Rm[:, 2] * b["P_metacarpal"]
    finger("P", Rm, base)

    Rt = rotation_about_axis(_Y, model.thumb_tilt)
    base = np.asarray(model.mcp["T"], dtype=float)
    kp[idx["T_MCP"]] = base
    steps = [((0.0, 0.0, -1.0), a["T_ROT"], 0.0),
             (_X, a["T_CMC"], b["T_metacarpal"]),
             (_X, a["T_MCP_FLEX"], 0.0),
             ((0.0, -1.0, 0.0), a["T_MCP_ABD"], b["T_proximal"]),
             ((0.0, -1.0, 0.0), c["T"] * a["T_MCP_ABD"], b["T_distal"])]
    _, pts = _chain(Rt, base, steps)
    kp[idx["T_PIP"]], kp[idx["T_DIP"]], kp[idx["T_TIP"]] = pts[1], pts[3], pts[4]
    return HumanHand(kp)


def sample_human_pose(model: SyntheticHumanModel, rng) -> HumanHand:
    """Uniform draw of every free DOF within its range."""
    lo = np.array([model.ranges[k][0] for k in DOF_NAMES])
    hi = np.array([model.ranges[k][1] for k in DOF_NAMES])
    return human_pose_from_angles(model, rng.uniform(lo, hi))


_BONES = [("WRIST", f + "_MCP", 0.011) for f in "IMRP"] + [("WRIST", "T_MCP", 0.013),
                                                           ("I_MCP", "P_MCP", 0.011)]
for _f in "IMRP":
    _BONES += [(_f + "_MCP", _f + "_PIP", 0.0095), (_f + "_PIP", _f + "_DIP", 0.0085),
               (_f + "_DIP", _f + "_TIP", 0.0075)]
_BONES += [("T_MCP", "T_PIP", 0.012), ("T_PIP", "T_DIP", 0.010), ("T_DIP", "T_TIP", 0.009)]


def human_capsules(hand: HumanHand):
    """Capsule skeleton ``(P0, P1, radii)`` of a human pose for rendering.

    Fingertip capsules are shortened by their radius so the surface ends at
    the TIP keypoint.
    """
    idx = {n: i for i, n in enumerate(HUMAN_KEYPOINT_NAMES)}
    kp = hand.keypoints
    P0, P1, radii = [], [], []
    for a, b, r in _BONES:
        p0, p1 = kp[idx[a]], kp[idx[b]]
        if b.endswith("_TIP"):
            v = p1 - p0
            n = np.linalg.norm(v)
            if n > r:
                p1 = p1 - v / n * r
        P0.append(p0)
        P1.append(p1)
        radii.append(r)
    return np.array(P0), np.array(P1), np.array(radii)
