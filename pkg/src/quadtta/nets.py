"""Dense networks for the control stack, with hand-written backprop.

Four heads share one MLP building block:

  policy   [state; subgoal; latent] (47) -> tanh mean (4), learnable log-std
  value    observation (32) -> scalar
  encoder  [task embedding; observation] (64) -> subgoal (3), tanh scaled to 8 m
  tta      [x_t; u_t; x_{t+1}] (28) -> latent increment (32), tanh-bounded

All parameters are float32 (float64 available for gradient checking).
Hidden layers are tanh with orthogonal init at gain sqrt(2); output layers
use gain 0.01 (policy/encoder/tta, near-zero initial outputs) or 1.0 (value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import checkpoint as ckpt

__all__ = [
    "orthogonal_init",
    "Mlp",
    "NetDims",
    "PolicyNet",
    "ValueNet",
    "LangEncoder",
    "TtaNet",
    "NetSet",
    "gaussian_logp",
    "gaussian_entropy",
    "sample_action",
    "save_netset",
    "load_netset",
]

LOG_2PI = math.log(2.0 * math.pi)

HIDDEN_GAIN = math.sqrt(2.0)
SMALL_OUT_GAIN = 0.01
LOG_STD_INIT = -1.5


def orthogonal_init(
    rows: int, cols: int, gain: float, rng: np.random.Generator, dtype=np.float32
) -> np.ndarray:
    """Semi-orthogonal (rows, cols) matrix scaled by gain.

    QR of a Gaussian sample with sign correction; the thin factor gives
    W^T W = gain^2 I for rows >= cols and W W^T = gain^2 I otherwise.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q, dtype=dtype)


class Mlp:
    """Affine + tanh stack with an explicit backward pass.

    Weights are stored (out, in); forward consumes (batch, in) arrays. The
    output layer activation is 'tanh' or 'linear'.
    """

    def __init__(
        self,
        sizes: list[int],
        out_activation: str,
        rng: np.random.Generator,
        out_gain: float,
        hidden_gain: float = HIDDEN_GAIN,
        dtype=np.float32,
    ):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if out_activation not in ("tanh", "linear"):
            raise ValueError(f"unsupported output activation {out_activation!r}")
        self.sizes = list(sizes)
        self.out_activation = out_activation
        self.dtype = dtype
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i in range(len(sizes) - 1):
            gain = out_gain if i == last else hidden_gain
            self.weights.append(orthogonal_init(sizes[i + 1], sizes[i], gain, rng, dtype))
            self.biases.append(np.zeros(sizes[i + 1], dtype=dtype))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _activated(self, layer: int) -> bool:
        return layer < len(self.weights) - 1 or self.out_activation == "tanh"

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input (batch, {self.sizes[0]}), got {h.shape}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if self._activated(i):
                h = np.tanh(h)
        return h

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping per-layer inputs and outputs for backward."""
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input (batch, {self.sizes[0]}), got {h.shape}")
        cache = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inp = h
            h = h @ w.T + b
            if self._activated(i):
                h = np.tanh(h)
            cache.append((inp, h))
        return h, cache

    def backward(self, cache, dy: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (dx, grads) with grads aligned to (weights[i], biases[i]).
        """
        dy = np.asarray(dy, dtype=self.dtype)
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            inp, out = cache[i]
            dpre = dy * (1.0 - out * out) if self._activated(i) else dy
            dw = dpre.T @ inp
            db = dpre.sum(axis=0)
            grads[i] = (dw, db)
            dy = dpre @ self.weights[i]
        return dy, grads

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}/w{i}"] = w
            out[f"{prefix}/b{i}"] = b
        return out

    def named_grads(self, prefix: str, grads) -> dict[str, np.ndarray]:
        out = {}
        for i, (dw, db) in enumerate(grads):
            out[f"{prefix}/w{i}"] = dw
            out[f"{prefix}/b{i}"] = db
        return out


@dataclass(frozen=True)
class NetDims:
    """Architecture constants; defaults are the shipped configuration."""

    state_dim: int = 12
    action_dim: int = 4
    subgoal_dim: int = 3
    latent_dim: int = 32
    obs_dim: int = 32
    n_tasks: int = 5
    embed_dim: int = 32
    policy_hidden: tuple = (256, 256, 256)
    value_hidden: tuple = (256, 256, 256)
    enc_hidden: tuple = (64, 64)
    tta_hidden: tuple = (106,)
    subgoal_scale: float = 8.0

    @property
    def policy_in(self) -> int:
        return self.state_dim + self.subgoal_dim + self.latent_dim

    @property
    def enc_in(self) -> int:
        return self.embed_dim + self.obs_dim

    @property
    def tta_in(self) -> int:
        return 2 * self.state_dim + self.action_dim


class PolicyNet:
    """Gaussian action head: tanh-bounded mean plus a learnable log-std."""

    def __init__(self, dims: NetDims, rng: np.random.Generator, dtype=np.float32):
        self.dims = dims
        sizes = [dims.policy_in, *dims.policy_hidden, dims.action_dim]
        self.mlp = Mlp(sizes, "tanh", rng, out_gain=SMALL_OUT_GAIN, dtype=dtype)
        self.log_std = np.full(dims.action_dim, LOG_STD_INIT, dtype=dtype)

    def forward(self, xgz: np.ndarray) -> np.ndarray:
        return self.mlp.forward(xgz)

    def named_params(self) -> dict[str, np.ndarray]:
        out = self.mlp.named_params("policy")
        out["policy/log_std"] = self.log_std
        return out


class ValueNet:
    """State-value head on the full observation."""

    def __init__(self, dims: NetDims, rng: np.random.Generator, dtype=np.float32):
        sizes = [dims.obs_dim, *dims.value_hidden, 1]
        self.mlp = Mlp(sizes, "linear", rng, out_gain=1.0, dtype=dtype)

    def forward(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp.forward(obs)[:, 0]

    def named_params(self) -> dict[str, np.ndarray]:
        return self.mlp.named_params("value")


class LangEncoder:
    """Task-conditioned subgoal head: a learned per-task embedding
    concatenated with the observation, mapped to a bounded position delta."""

    def __init__(self, dims: NetDims, rng: np.random.Generator, dtype=np.float32):
        self.dims = dims
        self.embed = rng.standard_normal((dims.n_tasks, dims.embed_dim)).astype(dtype)
        sizes = [dims.enc_in, *dims.enc_hidden, dims.subgoal_dim]
        self.mlp = Mlp(sizes, "tanh", rng, out_gain=SMALL_OUT_GAIN, dtype=dtype)
        self.scale = dims.subgoal_scale

    def encode(self, task_ids: np.ndarray, obs: np.ndarray) -> np.ndarray:
        inp = np.concatenate([self.embed[task_ids], obs], axis=1)
        return self.scale * self.mlp.forward(inp)

    def encode_cached(self, task_ids: np.ndarray, obs: np.ndarray):
        inp = np.concatenate([self.embed[task_ids], obs], axis=1)
        out, cache = self.mlp.forward_cached(inp)
        return self.scale * out, (task_ids, cache)

    def backward(self, cache, dg: np.ndarray) -> dict[str, np.ndarray]:
        task_ids, mlp_cache = cache
        dout = self.scale * np.asarray(dg, dtype=self.embed.dtype)
        dinp, grads = self.mlp.backward(mlp_cache, dout)
        dembed = np.zeros_like(self.embed)
        np.add.at(dembed, task_ids, dinp[:, : self.dims.embed_dim])
        out = self.mlp.named_grads("encoder", grads)
        out["encoder/embed"] = dembed
        return out

    def named_params(self) -> dict[str, np.ndarray]:
        out = {"encoder/embed": self.embed}
        out.update(self.mlp.named_params("encoder"))
        return out


class TtaNet:
    """Transition-residual head producing bounded latent increments."""

    def __init__(self, dims: NetDims, rng: np.random.Generator, dtype=np.float32):
        sizes = [dims.tta_in, *dims.tta_hidden, dims.latent_dim]
        self.mlp = Mlp(sizes, "tanh", rng, out_gain=SMALL_OUT_GAIN, dtype=dtype)

    @property
    def n_params(self) -> int:
        return self.mlp.n_params

    def forward(self, transitions: np.ndarray) -> np.ndarray:
        return self.mlp.forward(transitions)

    def named_params(self) -> dict[str, np.ndarray]:
        return self.mlp.named_params("tta")


@dataclass
class NetSet:
    """The four trainable heads plus their architecture record."""

    dims: NetDims
    policy: PolicyNet
    value: ValueNet
    encoder: LangEncoder
    tta: TtaNet

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, dims: NetDims = NetDims(), dtype=np.float32
    ) -> "NetSet":
        # Construction order fixes rng consumption, hence the init is seeded.
        policy = PolicyNet(dims, rng, dtype)
        value = ValueNet(dims, rng, dtype)
        encoder = LangEncoder(dims, rng, dtype)
        tta = TtaNet(dims, rng, dtype)
        return cls(dims=dims, policy=policy, value=value, encoder=encoder, tta=tta)

    def named_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(self.policy.named_params())
        out.update(self.value.named_params())
        out.update(self.encoder.named_params())
        out.update(self.tta.named_params())
        return out

    def set_params(self, tensors: dict[str, np.ndarray]) -> None:
        """Overwrite every parameter in place from a name -> array table."""
        own = self.named_params()
        missing = sorted(set(own) - set(tensors))
        extra = sorted(set(tensors) - set(own))
        if missing or extra:
            raise ckpt.ShapeTableError(
                f"tensor table mismatch: missing={missing} unexpected={extra}"
            )
        for name, arr in own.items():
            src = tensors[name]
            if tuple(src.shape) != tuple(arr.shape):
                raise ckpt.ShapeTableError(
                    f"tensor {name!r}: expected shape {arr.shape}, got {src.shape}"
                )
            arr[...] = src

    def weights_digest(self) -> str:
        """Order-stable digest of all parameter bytes."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.named_params()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.named_params()[name], dtype=np.float32).tobytes())
        return h.hexdigest()[:16]


def gaussian_logp(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density of raw (unclamped) actions, per row."""
    std = np.exp(log_std)
    zscore = (actions - mean) / std
    return (-0.5 * zscore * zscore - log_std - 0.5 * LOG_2PI).sum(axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian (depends on log-std only)."""
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def sample_action(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: np.random.Generator | None,
    deterministic: bool = False,
):
    """Draw (or take the mean) action; clamp for execution, keep the raw
    sample for the density.

    Returns (u_raw, u_clamped, log_prob). The log-prob is evaluated on the
    unclamped Gaussian sample; the tanh-bounded mean makes clamping rare.
    """
    mean = np.asarray(mean)
    if deterministic or rng is None:
        u_raw = mean.copy()
    else:
        noise = rng.standard_normal(mean.shape).astype(mean.dtype)
        u_raw = mean + np.exp(log_std) * noise
    u = np.clip(u_raw, -1.0, 1.0)
    return u_raw, u, gaussian_logp(u_raw, mean, log_std)


_META_DIMS_KEY = "dims"


def save_netset(path, nets: NetSet, meta: dict) -> None:
    """Write all heads into one named-tensor checkpoint."""
    meta = dict(meta)
    meta[_META_DIMS_KEY] = asdict(nets.dims)
    tensors = {
        name: np.ascontiguousarray(arr, dtype=np.float32)
        for name, arr in nets.named_params().items()
    }
    ckpt.save_checkpoint(path, tensors, meta)


def load_netset(path) -> tuple[NetSet, dict]:
    """Rebuild a NetSet from a checkpoint; validates names and shapes."""
    tensors, meta = ckpt.load_checkpoint(path)
    if _META_DIMS_KEY not in meta:
        raise ckpt.ShapeTableError("checkpoint metadata lacks the architecture record")
    raw = dict(meta[_META_DIMS_KEY])
    for key in ("policy_hidden", "value_hidden", "enc_hidden", "tta_hidden"):
        raw[key] = tuple(raw[key])
    dims = NetDims(**raw)
    nets = NetSet.initialize(np.random.default_rng(0), dims)
    nets.set_params(tensors)
    return nets, meta
