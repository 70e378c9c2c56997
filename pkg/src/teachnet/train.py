"""Training loops for the single-branch baselines and the teacher-student variants.

A teach step on a batch of paired samples does, in order:

1. robot (teacher) forward on one randomly chosen view per sample, an SGD
   step on ``L_teach``; its latent ``z_R`` from that forward is kept as a
   constant;
2. human (student) forward, an SGD step on ``L_stud`` whose consistency term
   pulls ``z_H`` toward the constant ``z_R``;
3. soft consistency only: one discriminator step on the realism objective,
   using the ``z_R`` and ``z_H`` of this step.

All loss values are computed with the parameters in effect before the step
and logged per branch.
"""

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_joint_matrix
from .kinematics import load_model
from .net import losses
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.layers import DTYPE
from .net.model import Branch, Discriminator, NetworkConfig, SGDMomentum

VARIANTS = ("single_human", "single_robot",
            "teach_soft_early", "teach_soft_late", "teach_hard_early", "teach_hard_late")

LOG_FIELDS = ("step", "epoch", "branch", "L_ang", "L_cons", "L_phy", "total", "lr")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one run. ``input_size`` is the side images are
    resampled to before entering the network."""

    variant: str = "teach_hard_late"
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_halve_every: int = 10
    input_size: int = 32
    channels: Tuple[int, int, int] = (8, 16, 32)
    n_residual: int = 2
    latent_dim: int = 64
    hidden_dim: int = 128
    squared_hard: bool = False
    discriminator_hidden: int = 32
    #: robot-branch-only epochs run before joint training
    teacher_pretrain_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.epochs < 0 or self.teacher_pretrain_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch normalization")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValueError("need learning_rate > 0 and 0 <= momentum < 1")
        if self.lr_halve_every < 1:
            raise ValueError("lr_halve_every must be >= 1")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def teaches(self):
        return self.variant.startswith("teach_")

    def network_config(self) -> NetworkConfig:
        if self.teaches:
            _, consistency, alignment = self.variant.split("_")
        else:
            # the baselines share the late layout so that the only
            # difference from teach_hard_late is the consistency term
            consistency, alignment = "none", "late"
        return NetworkConfig(input_size=self.input_size, channels=self.channels,
                             n_residual=self.n_residual, latent_dim=self.latent_dim,
                             hidden_dim=self.hidden_dim, alignment=alignment,
                             consistency=consistency, squared_hard=self.squared_hard,
                             discriminator_hidden=self.discriminator_hidden)

    def lr_at(self, epoch):
        return self.learning_rate * 0.5 ** (epoch // self.lr_halve_every)

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


class TeachNet:
    """The branches, discriminator and optimizers of one run.

    Only the branches a variant trains are built: ``robot`` for
    ``single_robot``, ``human`` for ``single_human``, both (plus the
    discriminator in soft mode) for the teach variants.
    """

    def __init__(self, cfg: TrainConfig, model=None):
        self.cfg = cfg
        self.net_cfg = cfg.network_config()
        self.model = model if model is not None else load_model()
        self.lo, self.hi = self.model.theta_min, self.model.theta_max
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        mid = 0.5 * (self.lo + self.hi)
        self.robot = self.human = self.disc = None
        if cfg.variant != "single_human":
            self.robot = Branch(self.net_cfg, rng, output_bias=mid)
        if cfg.variant != "single_robot":
            self.human = Branch(self.net_cfg, rng, output_bias=mid)
        if self.net_cfg.consistency == "soft":
            self.disc = Discriminator(self.net_cfg, rng)
        self.opt = {name: SGDMomentum(cfg.learning_rate, cfg.momentum) for name in self.parts()}
        self.step_count = 0
        self.epoch = 0
        #: extra checkpoint header entries, kept across load/save
        self.meta = {}

    def parts(self) -> Dict[str, object]:
        return {k: v for k, v in (("robot", self.robot), ("human", self.human),
                                  ("discriminator", self.disc)) if v is not None}

    @property
    def eval_branch(self):
        return "robot" if self.cfg.variant == "single_robot" else "human"

    # -- losses ---------------------------------------------------------------

    def _supervised(self, branch, images, j, train):
        z, theta_hat, cache = branch.forward(images, train)
        l_ang, g_ang = losses.loss_ang(theta_hat, j.astype(DTYPE), grad=True)
        l_phy, g_phy = losses.loss_phy(theta_hat, self.lo, self.hi, grad=True)
        return z, cache, l_ang, l_phy, (g_ang + g_phy).astype(DTYPE)

    def _consistency(self, z_h, z_r):
        mode = self.net_cfg.consistency
        if mode == "hard":
            return losses.loss_cons_hard(z_h, z_r, grad=True, squared=self.net_cfg.squared_hard)
        return losses.loss_cons_soft(self.disc, z_h, grad=True)

    def batch_losses(self, human_images=None, robot_images=None, j=None):
        """Per-branch loss rows on a batch, as :meth:`step` would log them,
        without changing any parameter or running statistic."""
        rows = {}
        z_r = None
        branches = [b for b in (self.robot, self.human) if b is not None]
        for b in branches:
            b.set_bn_update(False)
        try:
            if self.robot is not None:
                z_r, _, l_ang, l_phy, _ = self._supervised(self.robot, robot_images, j, train=True)
                rows["robot"] = _row(l_ang, 0.0, l_phy, 1.0)
            if self.human is not None:
                z_h, _, l_ang, l_phy, _ = self._supervised(self.human, human_images, j, train=True)
                teach = self.cfg.teaches
                l_cons = self._consistency(z_h, z_r)[0] if teach else 0.0
                rows["human"] = _row(l_ang, l_cons, l_phy, self.net_cfg.alpha if teach else 0.0)
                if self.disc is not None:
                    rows["discriminator"] = _row(0.0, losses.discriminator_loss(self.disc, z_r, z_h)[0],
                                                 0.0, 1.0)
        finally:
            for b in branches:
                b.set_bn_update(True)
        return rows

    # -- one optimization step ------------------------------------------------

    def step(self, human_images=None, robot_images=None, j=None, lr=None, teacher_only=False):
        """One SGD step on every trained part; returns the logged loss rows."""
        lr = self.cfg.lr_at(self.epoch) if lr is None else lr
        rows = {}
        z_r = None
        if self.robot is not None:
            z_r, cache, l_ang, l_phy, g = self._supervised(self.robot, robot_images, j, train=True)
            rows["robot"] = _row(l_ang, 0.0, l_phy, 1.0)
            grads = self.robot.backward(cache, g)
            self.opt["robot"].lr = lr
            self.opt["robot"].step(self.robot.parameters(), grads)
            z_r = z_r.copy()
        if self.human is not None and not teacher_only:
            z_h, cache, l_ang, l_phy, g = self._supervised(self.human, human_images, j, train=True)
            dz = None
            l_cons = 0.0
            if self.cfg.teaches:
                l_cons, g_cons = self._consistency(z_h, z_r)
                dz = (self.net_cfg.alpha * g_cons).astype(DTYPE)
            rows["human"] = _row(l_ang, l_cons, l_phy, self.net_cfg.alpha if self.cfg.teaches else 0.0)
            grads = self.human.backward(cache, g, dz)
            self.opt["human"].lr = lr
            self.opt["human"].step(self.human.parameters(), grads)
            if self.disc is not None:
                l_d, g_d = losses.discriminator_loss(self.disc, z_r, z_h)
                rows["discriminator"] = _row(0.0, l_d, 0.0, 1.0)
                self.opt["discriminator"].lr = lr
                self.opt["discriminator"].step(self.disc.parameters(), g_d)
        for name, r in rows.items():
            if not all(math.isfinite(v) for v in r.values()):
                raise TrainingDiverged(f"non-finite {name} loss at step {self.step_count}: {r}")
        self.step_count += 1
        return rows

    # -- inference ------------------------------------------------------------

    def predict(self, images, branch=None, batch_size=256):
        net = getattr(self, branch or self.eval_branch)
        if net is None:
            raise ValueError(f"variant {self.cfg.variant} has no {branch} branch")
        out = []
        for i in range(0, len(images), batch_size):
            out.append(net.forward(images[i:i + batch_size], train=False)[1])
        return np.concatenate(out).astype(np.float64)

    # -- persistence ----------------------------------------------------------

    def state(self):
        tensors = {}
        for name, part in self.parts().items():
            for k, v in part.state().items():
                tensors[f"{name}.{k}"] = v
        return tensors

    def save(self, path, extra=None):
        header = {"kind": "teachnet-checkpoint", "train": self.cfg.to_dict(),
                  "network": self.net_cfg.to_dict(), "step": self.step_count, "epoch": self.epoch}
        header.update(self.meta)
        header.update(extra or {})
        save_checkpoint(path, header, self.state())

    @classmethod
    def load(cls, path, model=None):
        header, tensors = load_checkpoint(path)
        net = cls(TrainConfig.from_dict(header["train"]), model=model)
        parts = net.parts()
        expected = set(net.state())
        if set(tensors) != expected:
            raise ValueError(f"{path}: checkpoint tensors do not match variant {net.cfg.variant}")
        for name, value in tensors.items():
            part, key = name.split(".", 1)
            parts[part].set_tensor(key, value)
        net.step_count, net.epoch = header["step"], header["epoch"]
        net.meta = {k: v for k, v in header.items()
                    if k not in ("kind", "train", "network", "step", "epoch", "blocks")}
        return net


def _row(l_ang, l_cons, l_phy, alpha):
    return {"L_ang": float(l_ang), "L_cons": float(l_cons), "L_phy": float(l_phy),
            "total": float(l_ang + alpha * l_cons + l_phy)}


def _batches(rng, n, batch_size):
    """Shuffled index batches; a trailing batch of one sample is dropped
    because batch statistics are undefined for it."""
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        b = perm[i:i + batch_size]
        if len(b) >= 2:
            yield b


def fit_arrays(cfg: TrainConfig, human, robot, theta, log_path=None, model=None, progress=None):
    """Train on in-memory arrays; returns the trained :class:`TeachNet`.

    ``human`` is ``(n, S, S)``, ``robot`` is ``(n, V, S, S)`` (one of the
    ``V`` views is drawn per sample and step) and ``theta`` is ``(n, 17)``.
    Arrays a variant does not use may be ``None``.
    """
    n = len(theta)
    if n < 2:
        raise ValueError("need at least 2 training samples")
    net = TeachNet(cfg, model=model)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    log_fh = open(log_path, "w", newline="") if log_path else None
    writer = None
    if log_fh:
        writer = csv.writer(log_fh)
        writer.writerow(LOG_FIELDS)
    schedule = [("pretrain", e) for e in range(cfg.teacher_pretrain_epochs if cfg.teaches else 0)]
    schedule += [("joint", e) for e in range(cfg.epochs)]
    try:
        for phase, epoch in schedule:
            net.epoch = epoch
            lr = cfg.lr_at(epoch)
            for idx in _batches(rng, n, cfg.batch_size):
                r_b = None
                if robot is not None and net.robot is not None:
                    views = rng.integers(robot.shape[1], size=len(idx))
                    r_b = robot[idx, views]
                h_b = human[idx] if (human is not None and net.human is not None) else None
                rows = net.step(h_b, r_b, theta[idx], lr=lr, teacher_only=(phase == "pretrain"))
                if writer:
                    for branch, r in rows.items():
                        writer.writerow([net.step_count - 1, epoch, branch] +
                                        [repr(r[k]) for k in LOG_FIELDS[3:7]] + [repr(lr)])
            if progress:
                progress(phase, epoch, rows)
        net.epoch = cfg.epochs
    finally:
        if log_fh:
            log_fh.close()
    return net


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    net: TeachNet = field(repr=False)


def train(manifest, variant="teach_hard_late", hyperparams=None, seed=0, out_dir=".",
          model=None, progress=None) -> TrainResult:
    """Train ``variant`` on every record of ``manifest``.

    Writes ``checkpoint.tnck`` and ``train_log.csv`` into ``out_dir``.
    """
    from .dataset import Manifest, load_arrays

    if not isinstance(manifest, Manifest):
        manifest = Manifest.load(manifest)
    if len(manifest) == 0:
        raise ValueError("training manifest is empty")
    params = dict(hyperparams or {})
    params.update(variant=variant, seed=seed)
    cfg = TrainConfig.from_dict(params)
    human, robot, theta, _ = load_arrays(manifest, cfg.input_size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = out / "train_log.csv"
    net = fit_arrays(cfg, human, robot, theta, log_path=log, model=model, progress=progress)
    ckpt = out / "checkpoint.tnck"
    net.meta["n_train"] = len(manifest)
    net.save(ckpt)
    return TrainResult(ckpt, log, net)


PRED_JOINTS = 17


def evaluate(checkpoint, manifest, out_path, branch=None, model=None):
    """Write per-frame predictions for ``manifest`` and return them.

    The human branch sees one image per sample; the robot branch sees all
    nine views, so each sample contributes nine frames. Columns are
    ``sample_id, view, pred_0..16, gt_0..16`` with floats in ``repr`` form,
    which round-trips exactly. ``view`` is ``-1`` for human frames.
    """
    from .dataset import Manifest, load_arrays

    if not isinstance(manifest, Manifest):
        manifest = Manifest.load(manifest)
    net = TeachNet.load(checkpoint, model=model)
    branch = branch or net.eval_branch
    human, robot, theta, ids = load_arrays(manifest, net.cfg.input_size)
    if branch == "human":
        pred = net.predict(human, "human")
        frames = [(sid, -1) for sid in ids]
        gt = theta
    elif branch == "robot":
        V = robot.shape[1]
        pred = net.predict(robot.reshape(-1, *robot.shape[2:]), "robot")
        frames = [(sid, v) for sid in ids for v in range(V)]
        gt = np.repeat(theta, V, axis=0)
    else:
        raise ValueError(f"branch must be 'human' or 'robot', got {branch!r}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "view"] + [f"pred_{i}" for i in range(PRED_JOINTS)]
                   + [f"gt_{i}" for i in range(PRED_JOINTS)])
        for (sid, v), p, g in zip(frames, pred, gt):
            w.writerow([sid, v] + [repr(float(x)) for x in p] + [repr(float(x)) for x in g])
    return pred, gt


def read_predictions(path):
    """``(pred (n,17), gt (n,17), frames [(sample_id, view)])`` from a predictions CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "view"]:
        raise ValueError(f"{path}: not a predictions file")
    body = rows[1:]
    pred = np.array([[float(x) for x in r[2:2 + PRED_JOINTS]] for r in body]).reshape(-1, PRED_JOINTS)
    gt = np.array([[float(x) for x in r[2 + PRED_JOINTS:]] for r in body]).reshape(-1, PRED_JOINTS)
    return pred, gt, [(r[0], int(r[1])) for r in body]


class TeachNetRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper: depth images in, 17 joint angles out.

    ``fit(X, y, robot_images=None)`` takes human images ``X`` of shape
    ``(n, S, S)``. Teach variants also need ``robot_images`` of shape
    ``(n, V, S, S)`` or ``(n, S, S)``. For ``single_robot``, ``X`` itself is
    the robot images. ``predict`` runs the evaluated branch (human, or robot
    for ``single_robot``).
    """

    def __init__(self, variant="teach_hard_late", epochs=30, batch_size=64, learning_rate=1e-3,
                 momentum=0.9, lr_halve_every=10, channels=(8, 16, 32), n_residual=2,
                 latent_dim=64, hidden_dim=128, squared_hard=False, teacher_pretrain_epochs=0,
                 random_state=0):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_halve_every = lr_halve_every
        self.channels = channels
        self.n_residual = n_residual
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.squared_hard = squared_hard
        self.teacher_pretrain_epochs = teacher_pretrain_epochs
        self.random_state = random_state

    def _config(self, size):
        p = self.get_params()
        seed = p.pop("random_state")
        return TrainConfig(input_size=size, seed=0 if seed is None else int(seed), **p)

    def fit(self, X, y, robot_images=None):
        y = check_joint_matrix(y, name="y")
        if self.variant == "single_robot":
            robot = check_images(X, ndim=(3, 4), name="X")
            human = None
        else:
            human = check_images(X, ndim=3, name="X")
            robot = None
            if self.variant.startswith("teach_"):
                if robot_images is None:
                    raise ValueError(f"variant {self.variant} needs robot_images")
                robot = check_images(robot_images, size=human.shape[-1], ndim=(3, 4),
                                     name="robot_images")
        if robot is not None and robot.ndim == 3:
            robot = robot[:, None]
        n_x = len(human) if human is not None else len(robot)
        if n_x != len(y) or (robot is not None and len(robot) != len(y)):
            raise ValueError("images and y have different lengths")
        size = (human if human is not None else robot).shape[-1]
        self.net_ = fit_arrays(self._config(size), human, robot, y)
        self.n_features_in_ = size * size
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_images(X, size=self.net_.cfg.input_size, ndim=3, name="X")
        return self.net_.predict(X)
