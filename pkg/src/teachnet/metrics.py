"""Evaluation metrics on predicted joint vectors and CSV report emission.

Curves are "fraction of frames whose error is at most ``t``" over a grid of
thresholds. Report CSVs store values with 6 significant digits; the values
returned by :func:`emit_report` are rounded the same way, so re-parsing a
written file reproduces them exactly.
"""

import csv
import math
from pathlib import Path
from typing import Dict, NamedTuple

import numpy as np

from ._validation import check_joint_matrix
from .kinematics import JOINT_NAMES, keypoint_positions

TABLE_THRESHOLDS = (0.1, 0.15, 0.2)


def angle_grid(step=0.02, stop=1.0):
    """Thresholds 0..``stop`` rad. Built from integer multiples so that 0.1,
    0.15 and 0.2 are represented exactly as the parsed decimal literals."""
    n = int(round(stop / step))
    return np.array([float(f"{i * step:.10g}") for i in range(n + 1)])


def distance_grid(step=0.002, stop=0.08):
    """Thresholds 0..80 mm in meters."""
    return angle_grid(step, stop)


class FrameErrors(NamedTuple):
    max: np.ndarray
    mean: np.ndarray


def _pair(pred, gt):
    pred = check_joint_matrix(pred, name="pred")
    gt = check_joint_matrix(gt, name="gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred and gt shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def _exact_mean(rows):
    # correctly rounded sums, so the result does not depend on summation order
    return np.array([math.fsum(r) for r in rows]) / rows.shape[1]


def frame_angle_errors(pred, gt) -> FrameErrors:
    """Per-frame max and mean of ``|pred - gt|`` over the 17 joints (rad)."""
    pred, gt = _pair(pred, gt)
    e = np.abs(pred - gt)
    return FrameErrors(e.max(axis=1), _exact_mean(e))


def fraction_below(errors, thresholds):
    """``count(err <= t) / N`` for each threshold ``t``."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    if e.size == 0:
        raise ValueError("no errors to summarize")
    t = np.asarray(thresholds, dtype=float)
    return np.searchsorted(e, t, side="right") / e.size


def joint_distance_errors(model, pred, gt) -> FrameErrors:
    """Per-frame max and mean Euclidean distance between the 15 robot
    keypoints of ``pred`` and ``gt`` (meters)."""
    pred, gt = _pair(pred, gt)
    d = np.empty((len(pred), len(model.keypoints)))
    for i, (p, g) in enumerate(zip(pred, gt)):
        d[i] = np.linalg.norm(keypoint_positions(model, p) - keypoint_positions(model, g), axis=1)
    return FrameErrors(d.max(axis=1), _exact_mean(d))


def per_joint_mean_error(pred, gt):
    """Mean ``|pred_i - gt_i|`` across frames, one value per joint slot."""
    pred, gt = _pair(pred, gt)
    return _exact_mean(np.abs(pred - gt).T)


def round_sig(x, digits=6):
    """Round to ``digits`` significant digits via the decimal formatting used
    in the CSV files."""
    return np.array([float(f"{v:.{digits}g}") for v in np.ravel(x)]).reshape(np.shape(x))


def _fmt(v):
    return f"{v:.6g}"


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def compute_report(pred, gt, model=None, angle_thresholds=None, distance_thresholds=None) -> Dict:
    """All curves, the per-joint errors and the summary as rounded arrays.

    Distance curves need ``model``; they are skipped without it.
    """
    pred, gt = _pair(pred, gt)
    ta = angle_grid() if angle_thresholds is None else np.asarray(angle_thresholds, float)
    ang = frame_angle_errors(pred, gt)
    curves = {
        "angle_max": (ta, fraction_below(ang.max, ta)),
        "angle_mean": (ta, fraction_below(ang.mean, ta)),
    }
    if model is not None:
        td = distance_grid() if distance_thresholds is None else np.asarray(distance_thresholds, float)
        dist = joint_distance_errors(model, pred, gt)
        curves["distance_max"] = (td, fraction_below(dist.max, td))
        curves["distance_mean"] = (td, fraction_below(dist.mean, td))
    summary = {t: (fraction_below(ang.max, [t])[0], fraction_below(ang.mean, [t])[0])
               for t in TABLE_THRESHOLDS}
    return {
        "curves": {k: (round_sig(t), round_sig(f)) for k, (t, f) in curves.items()},
        "per_joint": round_sig(per_joint_mean_error(pred, gt)),
        "summary": {t: tuple(float(x) for x in round_sig(np.array(v))) for t, v in summary.items()},
        "n_frames": len(pred),
    }


def emit_report(pred, gt, out_dir, model=None, angle_thresholds=None, distance_thresholds=None):
    """Write ``curve_<name>.csv``, ``per_joint.csv`` and ``summary.csv``; return
    the in-memory report (see :func:`compute_report`).

    Nothing is written when the prediction set is empty or malformed.
    """
    report = compute_report(pred, gt, model, angle_thresholds, distance_thresholds)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (t, f) in report["curves"].items():
        unit = "threshold_m" if name.startswith("distance") else "threshold_rad"
        _write(out / f"curve_{name}.csv", [unit, "fraction"], [[_fmt(a), _fmt(b)] for a, b in zip(t, f)])
    _write(out / "per_joint.csv", ["joint", "mean_abs_error_rad"],
           [[n, _fmt(v)] for n, v in zip(JOINT_NAMES, report["per_joint"])])
    _write(out / "summary.csv", ["threshold_rad", "fraction_max_error", "fraction_mean_error"],
           [[_fmt(t), _fmt(a), _fmt(b)] for t, (a, b) in report["summary"].items()])
    return report


def read_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(a), float(b)] for a, b in rows])
