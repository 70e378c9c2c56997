"""Human-to-robot hand retargeting.

A human pose becomes a set of weighted goals in frame ``F``: fingertip and
PIP positions, plus directions of the five proximal phalanges and the thumb
distal phalanx. Robot joint angles minimize

    sum w_tip |p_tip - g_tip|^2 + sum w_pip |p_pip - g_pip|^2
      + sum w_dir (1 - d . g_dir) + collision_weight * collision_cost

from several starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_keypoints, check_joint_vector
from .geometry import closest_points_segments
from .kinematics import (
    FINGERS,
    clamp_to_limits,
    fk_arrays,
    keypoint_indices,
    load_model,
)

__all__ = [
    "HUMAN_KEYPOINT_NAMES",
    "HumanHand",
    "GoalSet",
    "GoalError",
    "SolveConfig",
    "IKSolution",
    "DEFAULT_WEIGHTS",
    "align_to_common_frame",
    "build_goalset",
    "goals_from_theta",
    "collision_cost",
    "pair_distances",
    "retarget_cost",
    "solve_ik",
    "retarget_hand",
    "Retargeter",
]

#: 21-point human hand layout: wrist, the five MCPs, then PIP/DIP/TIP per finger.
HUMAN_KEYPOINT_NAMES = (
    "WRIST",
    "T_MCP", "I_MCP", "M_MCP", "R_MCP", "P_MCP",
    "T_PIP", "T_DIP", "T_TIP",
    "I_PIP", "I_DIP", "I_TIP",
    "M_PIP", "M_DIP", "M_TIP",
    "R_PIP", "R_DIP", "R_TIP",
    "P_PIP", "P_DIP", "P_TIP",
)
WRIST = 0
# robot finger -> human finger letter
_FINGER_MAP = {"FF": "I", "MF": "M", "RF": "R", "LF": "P", "TH": "T"}


def human_index(finger, kind):
    """Row of a human keypoint given a robot finger code (``FF``...) or human letter."""
    letter = _FINGER_MAP.get(finger, finger)
    return HUMAN_KEYPOINT_NAMES.index(f"{letter}_{kind}")


#: ``(w_tip, w_pip, w_dir)``
DEFAULT_WEIGHTS = (1.0, 0.2, 0.2)
_BARRIER_WEIGHT = 100.0


class GoalError(ValueError):
    """Goal construction failed, e.g. a zero-length bone."""


@dataclass(frozen=True)
class HumanHand:
    keypoints: np.ndarray

    def __post_init__(self):
        kp = check_keypoints(self.keypoints)
        object.__setattr__(self, "keypoints", kp)

    def __getitem__(self, name):
        return self.keypoints[HUMAN_KEYPOINT_NAMES.index(name)]


@dataclass(frozen=True)
class GoalSet:
    """Weighted targets in frame ``F``. Rows follow finger order FF, MF, RF, LF, TH;
    direction rows are the four finger proximals, thumb proximal, thumb distal."""

    tip: np.ndarray
    pip: np.ndarray
    directions: np.ndarray
    tip_weights: np.ndarray
    pip_weights: np.ndarray
    direction_weights: np.ndarray

    def __post_init__(self):
        for name, shape in (("tip", (5, 3)), ("pip", (5, 3)), ("directions", (6, 3)),
                            ("tip_weights", (5,)), ("pip_weights", (5,)),
                            ("direction_weights", (6,))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise GoalError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.tip_weights < 0) or np.any(self.pip_weights < 0) or np.any(self.direction_weights < 0):
            raise GoalError("goal weights must be non-negative")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise GoalError("direction goals must be unit vectors")

    def scaled(self, c):
        return replace(self, tip_weights=c * self.tip_weights, pip_weights=c * self.pip_weights,
                       direction_weights=c * self.direction_weights)

    def with_weights(self, w_tip, w_pip, w_dir):
        return replace(self, tip_weights=np.full(5, float(w_tip)), pip_weights=np.full(5, float(w_pip)),
                       direction_weights=np.full(6, float(w_dir)))


@dataclass(frozen=True)
class SolveConfig:
    restarts: int = 4
    max_iterations: int = 300
    collision_weight: float = 10.0
    tol: float = 1e-12
    seed: int = 0
    #: extra clearance added to every pair's R_col inside the optimizer only
    collision_margin: float = 5e-4
    gradient: str = "analytic"

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.collision_weight < 0:
            raise ValueError("collision_weight must be >= 0")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")


class IKSolution(NamedTuple):
    theta: np.ndarray
    cost: float
    diagnostics: dict


def align_to_common_frame(hand: HumanHand, scale=1.0) -> HumanHand:
    """Translate so the wrist sits at the origin of ``F``; optionally scale about it."""
    kp = hand.keypoints - hand.keypoints[WRIST]
    if scale != 1.0:
        kp = kp * float(scale)
    return HumanHand(kp)


def _unit(v, what):
    n = np.linalg.norm(v)
    if not n > 1e-12:
        raise GoalError(f"degenerate zero-length bone for {what}")
    return v / n


def build_goalset(hand: HumanHand, weights=DEFAULT_WEIGHTS) -> GoalSet:
    """Goals from an aligned human hand."""
    kp = hand.keypoints
    tip = np.array([kp[human_index(f, "TIP")] for f in FINGERS])
    pip = np.array([kp[human_index(f, "PIP")] for f in FINGERS])
    dirs = [_unit(kp[human_index(f, "PIP")] - kp[human_index(f, "MCP")], f"{f} proximal")
            for f in FINGERS]
    dirs.append(_unit(kp[human_index("TH", "TIP")] - kp[human_index("TH", "DIP")], "TH distal"))
    w_tip, w_pip, w_dir = weights
    return GoalSet(tip, pip, np.array(dirs), np.full(5, float(w_tip)), np.full(5, float(w_pip)),
                   np.full(6, float(w_dir)))


def goals_from_theta(model, theta, weights=DEFAULT_WEIGHTS) -> GoalSet:
    """Goals reproducing the robot's own keypoints and directions at ``theta``."""
    tk = _Terms.of(model)
    R, t = fk_arrays(model, theta)
    kp = np.einsum("nij,nj->ni", R[model._kp_links], model._kp_offsets) + t[model._kp_links]
    dirs = np.einsum("nij,nj->ni", R[model._dir_links], model._dir_local)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    w_tip, w_pip, w_dir = weights
    return GoalSet(kp[tk.tip_rows], kp[tk.pip_rows], dirs, np.full(5, float(w_tip)),
                   np.full(5, float(w_pip)), np.full(6, float(w_dir)))


class _Terms:
    """Per-model index tables for the cost and its Jacobians."""

    _cache = {}

    def __init__(self, model):
        self.tip_rows = np.array(keypoint_indices(model, "TIP"))
        self.pip_rows = np.array(keypoint_indices(model, "PIP"))
        n_links = len(model.links)
        self.joint_links = np.array(model.joint_index_map)
        self.joint_axes = np.array([model.links[i].axis for i in self.joint_links])
        # mask[l, k]: joint k moves link l
        mask = np.zeros((n_links, model.n_joints))
        jol = model.joint_of_link()
        for l in range(n_links):
            for a in model.ancestors(l):
                if jol[a] >= 0:
                    mask[l, jol[a]] = 1.0
        self.mask = mask
        cap = {c.link: i for i, c in enumerate(model.capsules)}
        self.pair_a = np.array([cap[p.a] for p in model.collision_pairs], dtype=int)
        self.pair_b = np.array([cap[p.b] for p in model.collision_pairs], dtype=int)
        self.r_col = np.array([p.r_col for p in model.collision_pairs])
        self.radius_sum = model._cap_r[self.pair_a] + model._cap_r[self.pair_b]

    @classmethod
    def of(cls, model):
        terms = cls._cache.get(id(model))
        if terms is None or terms[0] is not model:
            terms = (model, cls(model))
            cls._cache[id(model)] = terms
        return terms[1]


def pair_distances(model, theta, fk=None):
    """Capsule surface distance for every collision pair, in model order."""
    tk = _Terms.of(model)
    R, t = fk if fk is not None else fk_arrays(model, theta)
    idx = model._cap_links
    P0 = np.einsum("nij,nj->ni", R[idx], model._cap_p0) + t[idx]
    P1 = np.einsum("nij,nj->ni", R[idx], model._cap_p1) + t[idx]
    a, b = tk.pair_a, tk.pair_b
    pa, pb, dist = closest_points_segments(P0[a], P1[a], P0[b], P1[b])
    return dist - tk.radius_sum, pa, pb, dist


def collision_cost(model, theta):
    """Sum over collision pairs of ``max(0, R_col - d)``, ``d`` the capsule distance."""
    d = pair_distances(model, check_joint_vector(theta))[0]
    return float(np.sum(np.maximum(0.0, _Terms.of(model).r_col - d)))


def _cross(a, b):
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _point_jacobian(tk, links, points, axes_w, origins_w):
    """``(n, 3, 17)`` Jacobians of world points rigidly attached to ``links``."""
    rel = points[:, None, :] - origins_w[None, :, :]
    J = _cross(axes_w[None, :, :], rel) * tk.mask[links][:, :, None]
    return J.transpose(0, 2, 1)


def _evaluate(model, theta, goals, collision_weight, margin=0.0, grad=False):
    tk = _Terms.of(model)
    R, t = fk_arrays(model, theta)
    kp_links = model._kp_links
    kp = np.einsum("nij,nj->ni", R[kp_links], model._kp_offsets) + t[kp_links]
    dirs = np.einsum("nij,nj->ni", R[model._dir_links], model._dir_local)

    r_tip = kp[tk.tip_rows] - goals.tip
    r_pip = kp[tk.pip_rows] - goals.pip
    cos = np.einsum("ij,ij->i", dirs, goals.directions)
    cost = (np.sum(goals.tip_weights * np.einsum("ij,ij->i", r_tip, r_tip))
            + np.sum(goals.pip_weights * np.einsum("ij,ij->i", r_pip, r_pip))
            + np.sum(goals.direction_weights * (1.0 - cos)))

    pen, pa, pb, dist = pair_distances(model, theta, (R, t))
    hinge = tk.r_col + margin - pen
    active = hinge > 0.0
    col = float(np.sum(hinge[active]))
    cost += collision_weight * col

    lo = np.minimum(theta - model.theta_min, 0.0)
    hi = np.maximum(theta - model.theta_max, 0.0)
    excess = lo + hi
    cost += _BARRIER_WEIGHT * (1.0 + collision_weight) * np.sum(excess * excess)
    if not grad:
        return float(cost)

    axes_w = np.einsum("nij,nj->ni", R[tk.joint_links], tk.joint_axes)
    origins_w = t[tk.joint_links]
    rows = np.concatenate([tk.tip_rows, tk.pip_rows])
    J = _point_jacobian(tk, kp_links[rows], kp[rows], axes_w, origins_w)
    w = np.concatenate([goals.tip_weights, goals.pip_weights])
    res = np.concatenate([r_tip, r_pip])
    g = 2.0 * np.einsum("n,ni,nik->k", w, res, J)

    # d(R d_local)/dtheta_k = a_k x d  for joints above the link
    dcross = _cross(axes_w[None, :, :], dirs[:, None, :]) * tk.mask[model._dir_links][:, :, None]
    g -= np.einsum("n,ni,nki->k", goals.direction_weights, goals.directions, dcross)

    if np.any(active) and collision_weight > 0:
        act = np.flatnonzero(active & (dist > 1e-12))
        if act.size:
            n = (pa[act] - pb[act]) / dist[act, None]
            la = model._cap_links[tk.pair_a[act]]
            lb = model._cap_links[tk.pair_b[act]]
            Ja = _point_jacobian(tk, la, pa[act], axes_w, origins_w)
            Jb = _point_jacobian(tk, lb, pb[act], axes_w, origins_w)
            g -= collision_weight * np.einsum("ni,nik->k", n, Ja - Jb)

    g += 2.0 * _BARRIER_WEIGHT * (1.0 + collision_weight) * excess
    return float(cost), g


def retarget_cost(model, theta, goals: GoalSet, collision_weight=10.0):
    """Weighted goal residuals plus the collision hinge and an out-of-limit barrier."""
    return _evaluate(model, check_joint_vector(theta), goals, collision_weight)


def retarget_cost_grad(model, theta, goals: GoalSet, collision_weight=10.0, margin=0.0):
    """``(cost, gradient)`` with the analytic Jacobian."""
    return _evaluate(model, check_joint_vector(theta), goals, collision_weight, margin, grad=True)


def solve_ik(model, goals: GoalSet, cfg: Optional[SolveConfig] = None) -> IKSolution:
    """Multi-start bounded quasi-Newton minimization of :func:`retarget_cost`.

    Restart 0 starts from the mid-range pose, the others from uniform draws
    seeded by ``(cfg.seed, restart)``. Restarts stop early once a result
    reaches ``cfg.tol``.
    """
    cfg = cfg or SolveConfig()
    bounds = list(zip(model.theta_min, model.theta_max))
    lam, margin = cfg.collision_weight, cfg.collision_margin
    if cfg.gradient == "analytic":
        fun = lambda x: _evaluate(model, x, goals, lam, margin, grad=True)
        jac = True
    else:
        fun = lambda x: _evaluate(model, x, goals, lam, margin)
        jac = None

    best = None
    records = []
    for r in range(cfg.restarts):
        if r == 0:
            x0 = model.mid_range.copy()
        else:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
            x0 = rng.uniform(model.theta_min, model.theta_max)
        f0 = _evaluate(model, x0, goals, lam, margin)
        res = minimize(fun, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.max_iterations, "ftol": 1e-15, "gtol": 1e-12,
                                "maxcor": 20})
        x = clamp_to_limits(model, res.x)
        f = _evaluate(model, x, goals, lam, margin)
        if not f <= f0:
            x, f = x0, f0
        records.append({"restart": r, "initial_cost": float(f0), "final_cost": float(f),
                        "iterations": int(res.nit), "evaluations": int(res.nfev)})
        if best is None or f < best[1]:
            best = (x, f, r)
        if best[1] <= cfg.tol:
            break

    theta, _, r_best = best
    cost = _evaluate(model, theta, goals, lam)
    diagnostics = {
        "restarts": records,
        "best_restart": r_best,
        "collision_cost": collision_cost(model, theta),
        "objective": float(best[1]),
    }
    return IKSolution(theta, float(cost), diagnostics)


def fingertip_errors(model, theta, goals: GoalSet):
    """Euclidean fingertip residuals (meters), one per finger."""
    tk = _Terms.of(model)
    R, t = fk_arrays(model, theta)
    rows = tk.tip_rows
    kp = np.einsum("nij,nj->ni", R[model._kp_links[rows]], model._kp_offsets[rows]) + t[model._kp_links[rows]]
    return np.linalg.norm(kp - goals.tip, axis=1)


def retarget_hand(model, keypoints, weights=DEFAULT_WEIGHTS, cfg=None, scale=1.0):
    """Full pipeline for one 21x3 human pose: align, build goals, solve."""
    hand = align_to_common_frame(HumanHand(keypoints), scale=scale)
    goals = build_goalset(hand, weights)
    return solve_ik(model, goals, cfg)


class Retargeter(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper mapping ``(n, 21, 3)`` human poses to ``(n, 17)`` joint angles.

    Parameters
    ----------
    model_path : str or None
        Kinematic model config; the bundled Shadow-like hand when None.
    tip_weight, pip_weight, direction_weight : float
        Goal weights.
    collision_weight : float
        Multiplier of the self-collision hinge.
    restarts, max_iter : int
        Multi-start count and per-start iteration cap.
    scale : float
        Uniform scale applied to the human pose about the wrist.
    random_state : int
        Seed of the restart draws.
    """

    def __init__(self, model_path=None, tip_weight=1.0, pip_weight=0.2, direction_weight=0.2,
                 collision_weight=10.0, restarts=4, max_iter=300, scale=1.0, random_state=0):
        self.model_path = model_path
        self.tip_weight = tip_weight
        self.pip_weight = pip_weight
        self.direction_weight = direction_weight
        self.collision_weight = collision_weight
        self.restarts = restarts
        self.max_iter = max_iter
        self.scale = scale
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.model_ = load_model(self.model_path)
        self.n_features_in_ = 63
        return self

    def _solve_config(self, i):
        seed = 0 if self.random_state is None else int(self.random_state)
        return SolveConfig(restarts=self.restarts, max_iterations=self.max_iter,
                           collision_weight=self.collision_weight, seed=seed + i)

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 63:
            X = X.reshape(-1, 21, 3)
        if X.ndim != 3 or X.shape[1:] != (21, 3):
            raise ValueError(f"expected poses of shape (n, 21, 3), got {X.shape}")
        weights = (self.tip_weight, self.pip_weight, self.direction_weight)
        out = np.empty((len(X), self.model_.n_joints))
        costs = np.empty(len(X))
        for i, kp in enumerate(X):
            sol = retarget_hand(self.model_, kp, weights, self._solve_config(i), self.scale)
            out[i], costs[i] = sol.theta, sol.cost
        self.costs_ = costs
        return out
