"""Central finite-difference verification of every layer and loss.

Each check contracts the layer output with a fixed random tensor ``R`` so
the probed scalar is ``sum(out * R)`` and the analytic gradient is the
backward pass of ``R``. Probes perturb single entries of the input and of
each parameter by ``+-h`` in float32. A probe whose two evaluations put
any ReLU on different sides of its kink is redrawn, since the one-sided
slopes there are both correct and the central difference matches neither.

The per-probe error is ``|a - n| / max(|a|, |n|, s)`` where ``s`` is the RMS
analytic gradient of the probed tensor. A float32 central difference carries
roundoff of order ``eps * |f| / h``; without the ``s`` term an entry whose
true gradient is near zero would fail on roundoff alone.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import losses
from .layers import (
    DTYPE,
    BatchNorm1d,
    Conv2D,
    Flatten,
    Linear,
    ReLU,
    ResidualBlock,
    Sigmoid,
)
from .model import Branch, Discriminator, NetworkConfig

H = 1e-3
TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_probes: int

    @property
    def passed(self):
        return self.max_rel_error < TOL


def _rel_errors(analytic, numeric, floor):
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def relu_masks(cache):
    """All ReLU masks (the only boolean arrays) in a nested forward cache."""
    if isinstance(cache, np.ndarray):
        return [cache] if cache.dtype == bool else []
    if isinstance(cache, (list, tuple)):
        return [m for c in cache for m in relu_masks(c)]
    return []


def _same_masks(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _probe(tensors: Dict[str, np.ndarray], analytic: Dict[str, np.ndarray], f: Callable,
           rng, n_probes, h=H, max_redraws=200):
    """Perturb ``n_probes`` random entries spread over ``tensors`` in place.

    ``f`` returns ``(value, cache)``.
    """
    names = list(tensors)
    errs = []
    for p in range(n_probes):
        name = names[p % len(names)]
        arr = tensors[name]
        for _ in range(max_redraws):
            idx = tuple(rng.integers(s) for s in arr.shape)
            old = arr[idx]
            hh = arr.dtype.type(h)
            arr[idx] = old + hh
            fp, cp = f()
            arr[idx] = old - hh
            fm, cm = f()
            arr[idx] = old
            if _same_masks(relu_masks(cp), relu_masks(cm)):
                break
        else:
            raise RuntimeError(f"no kink-free probe found for {name}")
        # the realized step after rounding
        step = float(arr.dtype.type(old + hh)) - float(arr.dtype.type(old - hh))
        num = (fp - fm) / step
        g = analytic[name]
        rms = float(np.sqrt(np.mean(np.asarray(g, float) ** 2)))
        errs.append(_rel_errors(g[idx], num, max(rms, 1e-12))[()])
    return float(np.max(errs))


def check_layer(name, layer, x, rng, n_probes=100, train=True):
    """Finite-difference check of ``layer`` at input ``x`` (input and parameters)."""
    x = np.array(x, dtype=DTYPE)
    out, cache = layer.forward(x, train)
    R = rng.standard_normal(out.shape).astype(DTYPE)
    dx, grads = layer.backward(cache, R)

    def f():
        o, c = layer.forward(x, train)
        return float(np.sum(o.astype(np.float64) * R)), c

    tensors = {"__input__": x}
    tensors.update(layer.params)
    analytic = {"__input__": dx}
    analytic.update(grads)
    return CheckResult(name, _probe(tensors, analytic, f, rng, n_probes), n_probes)


def _to_float64(layer):
    for sub in getattr(layer, "layers", []):
        _to_float64(sub)
    if not hasattr(layer, "layers"):
        for d in (layer.params, layer.buffers):
            for k in d:
                d[k] = d[k].astype(np.float64)


def check_discriminator(name, cfg: NetworkConfig, rng, n_probes=100, h=1e-6):
    """Discriminator as a whole and the soft consistency loss through it.

    The sigmoid output sits near 0.5 where a float32 ulp is large against
    the small input gradients, so both run in float64 like the branch check.
    """
    disc = Discriminator(cfg, rng)
    _to_float64(disc.net)
    z = rng.standard_normal((2, cfg.latent_dim))
    R = rng.standard_normal(2)
    p, cache = disc.forward(z)
    dz, grads = disc.backward(cache, R)

    def f():
        pp, c = disc.forward(z)
        return float(np.sum(pp * R)), c

    tensors = {"__input__": z}
    tensors.update(disc.parameters())
    analytic = {"__input__": dz}
    analytic.update(grads)
    out = [CheckResult(name, _probe(tensors, analytic, f, rng, n_probes, h=h), n_probes)]

    zh = rng.standard_normal((2, cfg.latent_dim))
    _, g = losses.loss_cons_soft(disc, zh, grad=True)

    def fl():
        return losses.loss_cons_soft(disc, zh), disc.forward(zh)[1]

    out.append(CheckResult("loss_cons_soft", _probe({"x": zh}, {"x": g}, fl, rng, n_probes, h=h), n_probes))
    return out


def check_branch(name, cfg: NetworkConfig, rng, n_probes=100, h=1e-6):
    """Whole-branch check with upstream gradients on both ``theta_hat`` and ``z``.

    This one tests how the layers are wired together rather than the layers
    themselves, which the per-layer checks cover in float32. A deep float32
    stack puts the central difference at ``h = 1e-3`` across ReLU kinks on
    most probes, so the branch is promoted to float64 and probed with a
    smaller step.
    """
    branch = Branch(cfg, rng)
    branch.set_bn_update(False)
    for seq in branch.modules.values():
        _to_float64(seq)
    x = rng.uniform(-1, 1, size=(4, cfg.input_size, cfg.input_size))
    z, theta, cache = branch.forward(x)
    Rt = rng.standard_normal(theta.shape)
    Rz = rng.standard_normal(z.shape)
    grads = branch.backward(cache, Rt, Rz)

    def f():
        zz, tt, c = branch.forward(x)
        return float(np.sum(tt.astype(np.float64) * Rt) + np.sum(zz.astype(np.float64) * Rz)), c

    return CheckResult(name, _probe(branch.parameters(), grads, f, rng, n_probes, h=h), n_probes)


def _check_vector_loss(name, fn, x, rng, n_probes=100):
    x = np.array(x, dtype=DTYPE)
    _, g = fn(x, True)

    def f():
        return float(fn(x, False)), None

    return CheckResult(name, _probe({"x": x}, {"x": np.asarray(g)}, f, rng, n_probes), n_probes)


def _away_from(x, points, margin):
    """Push entries of ``x`` at least ``margin`` away from each kink in ``points``."""
    x = x.copy()
    for p in np.atleast_1d(points):
        close = np.abs(x - p) < margin
        x[close] = p + np.sign(x[close] - p + 1e-12) * margin * 2
    return x


def run_all(seed=0, n_probes=100, input_size=16) -> List[CheckResult]:
    """Check every layer type, both branch layouts, the discriminator and the losses."""
    rng = np.random.default_rng(seed)
    results = []
    results.append(check_layer("linear", Linear(12, 7, rng), rng.standard_normal((5, 12)), rng, n_probes))
    results.append(check_layer("conv2d_s1", Conv2D(2, 3, rng), rng.standard_normal((2, 2, 7, 7)), rng, n_probes))
    results.append(check_layer("conv2d_s2", Conv2D(2, 3, rng, stride=2), rng.standard_normal((2, 2, 8, 8)),
                               rng, n_probes))
    results.append(check_layer("relu", ReLU(), _away_from(rng.standard_normal((6, 9)), 0.0, 0.05), rng, n_probes))
    results.append(check_layer("sigmoid", Sigmoid(), rng.standard_normal((6, 9)), rng, n_probes))
    results.append(check_layer("flatten", Flatten(), rng.standard_normal((3, 2, 4, 4)), rng, n_probes))
    bn = BatchNorm1d(6)
    bn.update_stats = False
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 6)
    bn.params["beta"][:] = rng.standard_normal(6)
    results.append(check_layer("batchnorm_train", bn, rng.standard_normal((8, 6)) + 1, rng, n_probes))
    bn.buffers["running_mean"] = rng.standard_normal(6).astype(DTYPE)
    bn.buffers["running_var"] = rng.uniform(0.5, 2.0, 6).astype(DTYPE)
    results.append(check_layer("batchnorm_eval", bn, rng.standard_normal((8, 6)), rng, n_probes, train=False))
    results.append(check_layer("residual_block", ResidualBlock(3, rng), rng.standard_normal((1, 3, 3, 3)),
                               rng, n_probes))

    for align in ("early", "late"):
        cfg = NetworkConfig(input_size=input_size, channels=(4, 6, 8), latent_dim=10, hidden_dim=12,
                            alignment=align)
        results.append(check_branch(f"branch_{align}", cfg, rng, n_probes))

    results.extend(check_discriminator("discriminator", NetworkConfig(input_size=input_size, latent_dim=10),
                                       rng, n_probes))

    # small batches: the batch mean shrinks gradients faster than roundoff
    j = rng.uniform(-1, 1, size=(2, 17))
    results.append(_check_vector_loss(
        "loss_ang", lambda x, g: losses.loss_ang(x, j, grad=g), rng.uniform(-1, 1, (2, 17)), rng, n_probes))
    zr = rng.standard_normal((2, 10))
    results.append(_check_vector_loss(
        "loss_cons_hard", lambda x, g: losses.loss_cons_hard(x, zr, grad=g), rng.standard_normal((2, 10)),
        rng, n_probes))
    lo, hi = -np.ones(17) * 0.5, np.ones(17) * 0.5
    t = _away_from(rng.uniform(-1.5, 1.5, (2, 17)), [-0.5, 0.5], 0.01)
    results.append(_check_vector_loss(
        "loss_phy", lambda x, g: losses.loss_phy(x, lo, hi, grad=g), t, rng, n_probes))
    return results
