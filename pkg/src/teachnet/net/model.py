"""Branch networks and discriminator of the teacher-student regressor."""

from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from .layers import (
    DTYPE,
    BatchNorm1d,
    Conv2D,
    Flatten,
    Linear,
    ReLU,
    ResidualBlock,
    Sequential,
    Sigmoid,
)

ALIGNMENTS = ("early", "late")
CONSISTENCIES = ("hard", "soft", "none")


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 100
    channels: Tuple[int, int, int] = (8, 16, 32)
    n_residual: int = 2
    latent_dim: int = 64
    hidden_dim: int = 128
    alignment: str = "late"
    consistency: str = "hard"
    #: ``||z_H - z_R||^2`` instead of the plain norm for the hard loss
    squared_hard: bool = False
    discriminator_hidden: int = 32
    output_dim: int = 17

    def __post_init__(self):
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if self.consistency not in CONSISTENCIES:
            raise ValueError(f"consistency must be one of {CONSISTENCIES}")
        if self.output_dim != 17:
            raise ValueError("output_dim is fixed at 17")
        if self.input_size < 8:
            raise ValueError("input_size too small for three stride-2 convolutions")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def alpha(self):
        return {"hard": 1.0, "soft": 0.1, "none": 0.0}[self.consistency]

    def feature_size(self):
        n = self.input_size
        for _ in range(3):
            n = (n + 2 - 3) // 2 + 1
        return self.channels[-1] * n * n

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class Branch:
    """Encoder -> embedding -> regression. ``forward`` returns the aligned
    latent ``z``, the 17 joint predictions and a cache for ``backward``.

    Early alignment takes ``z`` after the embedding (FC + BN + ReLU) and
    regresses through two FC layers; late alignment adds one FC + ReLU after
    the embedding, takes ``z`` there and regresses with a single FC layer.
    """

    def __init__(self, cfg: NetworkConfig, rng, output_bias=None):
        self.cfg = cfg
        c1, c2, c3 = cfg.channels
        enc = [Conv2D(1, c1, rng, stride=2), ReLU(),
               Conv2D(c1, c2, rng, stride=2), ReLU(),
               Conv2D(c2, c3, rng, stride=2), ReLU()]
        enc += [ResidualBlock(c3, rng) for _ in range(cfg.n_residual)]
        enc.append(Flatten())
        self.encoder = Sequential(*enc)
        F, Z, Hd = cfg.feature_size(), cfg.latent_dim, cfg.hidden_dim
        if cfg.alignment == "early":
            self.embedding = Sequential(Linear(F, Z, rng, bias=False), BatchNorm1d(Z), ReLU())
            self.regression = Sequential(Linear(Z, Hd, rng), ReLU(), Linear(Hd, 17, rng))
        else:
            self.embedding = Sequential(Linear(F, Hd, rng, bias=False), BatchNorm1d(Hd), ReLU(),
                                        Linear(Hd, Z, rng), ReLU())
            self.regression = Sequential(Linear(Z, 17, rng))
        out = self.regression.layers[-1]
        # start near the constant prediction ``output_bias``
        out.params["W"] *= DTYPE(0.1)
        if output_bias is not None:
            out.params["b"][:] = np.asarray(output_bias, dtype=DTYPE)
        self.modules = {"encoder": self.encoder, "embedding": self.embedding,
                        "regression": self.regression}

    def forward(self, images, train=True):
        # float64 input is kept as is (used by the gradient checks)
        x = np.asarray(images)
        x = x.astype(np.result_type(x.dtype, DTYPE), copy=False)
        if x.ndim == 3:
            x = x[:, None]
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise ValueError(f"expected images of shape (n, {s}, {s}), got {np.shape(images)}")
        f, c_enc = self.encoder.forward(x, train)
        z, c_emb = self.embedding.forward(f, train)
        theta, c_reg = self.regression.forward(z, train)
        return z, theta, (c_enc, c_emb, c_reg)

    def backward(self, cache, dtheta, dz=None):
        """Parameter gradients given upstream gradients on ``theta_hat`` and
        (optionally) on the latent ``z``."""
        c_enc, c_emb, c_reg = cache
        g_z, g_reg = self.regression.backward(c_reg, dtheta)
        if dz is not None:
            g_z = g_z + dz
        g_f, g_emb = self.embedding.backward(c_emb, g_z)
        _, g_enc = self.encoder.backward(c_enc, g_f)
        grads = {}
        for prefix, g in (("encoder", g_enc), ("embedding", g_emb), ("regression", g_reg)):
            for k, v in g.items():
                grads[f"{prefix}.{k}"] = v
        return grads

    def parameters(self):
        return {f"{m}.{k}": v for m, seq in self.modules.items() for k, v in seq.params.items()}

    def buffers(self):
        return {f"{m}.{k}": v for m, seq in self.modules.items() for k, v in seq.buffers.items()}

    def state(self):
        """Parameters followed by BN running statistics, in a fixed order."""
        out = dict(self.parameters())
        out.update(self.buffers())
        return out

    def set_tensor(self, name, value):
        m, k = name.split(".", 1)
        self.modules[m].set_param(k, np.asarray(value, dtype=DTYPE))

    def set_bn_update(self, flag):
        for seq in self.modules.values():
            for layer in seq.layers:
                if isinstance(layer, BatchNorm1d):
                    layer.update_stats = flag


class Discriminator:
    """``z -> sigmoid(FC(ReLU(FC(z))))``, a realism score in (0, 1)."""

    def __init__(self, cfg: NetworkConfig, rng):
        self.net = Sequential(Linear(cfg.latent_dim, cfg.discriminator_hidden, rng), ReLU(),
                              Linear(cfg.discriminator_hidden, 1, rng), Sigmoid())

    def forward(self, z):
        z = np.asarray(z)
        p, cache = self.net.forward(z.astype(np.result_type(z.dtype, DTYPE), copy=False))
        return p[:, 0], cache

    def backward(self, cache, dp):
        dp = np.asarray(dp)
        dz, g = self.net.backward(cache, dp.astype(np.result_type(dp.dtype, DTYPE), copy=False)[:, None])
        return dz, {f"net.{k}": v for k, v in g.items()}

    def parameters(self):
        return {f"net.{k}": v for k, v in self.net.params.items()}

    def state(self):
        return self.parameters()

    def set_tensor(self, name, value):
        self.net.set_param(name.split(".", 1)[1], np.asarray(value, dtype=DTYPE))


class SGDMomentum:
    """Heavy-ball SGD: ``v = mu * v + g``, ``p -= lr * v`` (in place)."""

    def __init__(self, lr=1e-3, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity = {}

    def step(self, params, grads):
        for k, p in params.items():
            g = grads[k]
            v = self.velocity.get(k)
            v = g.astype(DTYPE) if v is None else (self.momentum * v + g).astype(DTYPE)
            self.velocity[k] = v
            p -= DTYPE(self.lr) * v
