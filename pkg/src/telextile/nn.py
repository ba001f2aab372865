"""Convolutional embedding network with hand-written forward/backward passes.

No autograd framework: every layer exposes ``forward(x) -> (y, cache)``
and ``backward(cache, dy) -> (dx, param_grads)``, and the encoder chains
them.  Parameters live in plain float arrays so the optimizer and the
momentum-copy update can treat them uniformly.

The architecture is a plain stack of strided convolutions with ReLU,
then global average pooling, a linear projection and L2 normalization
onto the unit sphere.  No normalization layers inside the stack: the
pooled channel energies are the texture signal, and standardizing them
per sample (instance norm) or per batch (batch norm, which would also
couple inference to batch composition) was found to erase most of what
separates one weave from another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig, inference_view
from .textures import TactileFrame


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int                # square input edge length after cropping
    conv_stages: tuple[tuple[int, int, int], ...] = (
        (8, 3, 2), (16, 3, 2), (32, 3, 2), (64, 3, 2),
    )  # (out_channels, kernel, stride) per stage
    embedding_dim: int = 64
    in_channels: int = 3

    def __post_init__(self):
        if self.input_size < 8:
            raise ValueError(f"input_size must be >= 8, got {self.input_size}")
        # coerce JSON-style nested lists so configs hash and compare cleanly
        object.__setattr__(self, "conv_stages",
                           tuple(tuple(int(v) for v in s) for s in self.conv_stages))
        if not self.conv_stages:
            raise ValueError("conv_stages must be nonempty")
        for stage in self.conv_stages:
            if len(stage) != 3 or any(v < 1 for v in stage):
                raise ValueError(f"each stage needs positive (out_channels, kernel, stride), got {stage}")
        if self.embedding_dim < 2:
            raise ValueError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.stage_sizes()[-1] < 1:
            raise ValueError("conv stack reduces the input below 1x1")

    def stage_sizes(self) -> list[int]:
        """Spatial edge length after each stage (kernel k, stride s, pad k//2)."""
        sizes = []
        n = self.input_size
        for _, k, s in self.conv_stages:
            n = (n + 2 * (k // 2) - k) // s + 1
            sizes.append(n)
        return sizes

    def param_count(self) -> int:
        """Total learnable parameters implied by the config."""
        total = 0
        in_ch = self.in_channels
        for out_ch, k, _ in self.conv_stages:
            total += out_ch * in_ch * k * k + out_ch
            in_ch = out_ch
        total += self.embedding_dim * in_ch + self.embedding_dim
        return total

    @classmethod
    def desk_default(cls) -> "EncoderConfig":
        return cls(input_size=56)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "conv_stages": [list(s) for s in self.conv_stages],
            "embedding_dim": self.embedding_dim,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if "conv_stages" in d:
            d["conv_stages"] = tuple(tuple(s) for s in d["conv_stages"])
        return cls(**d)


class Conv2d:
    """3x3 convolution via im2col; stride and zero padding are fixed at build."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int = 3, stride: int = 2,
                 pad: int = 1, *, rng: np.random.Generator, dtype=np.float32):
        fan_in = in_ch * ksize * ksize
        self.weight = (rng.standard_normal((out_ch, in_ch, ksize, ksize))
                       * math.sqrt(2.0 / fan_in)).astype(dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.ksize = ksize
        self.stride = stride
        self.pad = pad

    @property
    def params(self):
        return [self.weight, self.bias]

    def _cols(self, xp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        n, c = xp.shape[:2]
        k, s = self.ksize, self.stride
        cols = np.empty((n, c, k, k, out_h, out_w), dtype=xp.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * out_h:s, kj:kj + s * out_w:s]
        return cols.reshape(n, c * k * k, out_h * out_w)

    def forward(self, x: np.ndarray):
        n, c, h, w = x.shape
        k, s, p = self.ksize, self.stride, self.pad
        out_h = (h + 2 * p - k) // s + 1
        out_w = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = self._cols(xp, out_h, out_w)
        w_flat = self.weight.reshape(self.weight.shape[0], -1)
        y = np.matmul(w_flat, cols) + self.bias[:, None]
        y = y.reshape(n, -1, out_h, out_w)
        cache = (cols, (n, c, h, w), (out_h, out_w))
        return y, cache

    def backward(self, cache, dy: np.ndarray):
        cols, (n, c, h, w), (out_h, out_w) = cache
        k, s, p = self.ksize, self.stride, self.pad
        out_ch = self.weight.shape[0]
        dy_flat = dy.reshape(n, out_ch, out_h * out_w)
        w_flat = self.weight.reshape(out_ch, -1)

        dw = np.einsum("nop,nkp->ok", dy_flat, cols).reshape(self.weight.shape)
        db = dy_flat.sum(axis=(0, 2))
        dcols = np.matmul(w_flat.T, dy_flat)
        dcols = dcols.reshape(n, c, k, k, out_h, out_w)

        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + s * out_h:s, kj:kj + s * out_w:s] += dcols[:, :, ki, kj]
        dx = dxp[:, :, p:p + h, p:p + w]
        return dx, [dw, db.astype(dy.dtype)]


class ReLU:
    params: list = []

    def forward(self, x: np.ndarray):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy: np.ndarray):
        return dy * cache, []


class GlobalAvgPool:
    params: list = []

    def forward(self, x: np.ndarray):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, dy: np.ndarray):
        n, c, h, w = cache
        dx = np.broadcast_to(dy[:, :, None, None], (n, c, h, w)) / (h * w)
        return dx.astype(dy.dtype), []


class Linear:
    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator, dtype=np.float32):
        self.weight = (rng.standard_normal((out_features, in_features))
                       * math.sqrt(2.0 / in_features)).astype(dtype)
        self.bias = np.zeros(out_features, dtype=dtype)

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray):
        return x @ self.weight.T + self.bias, x

    def backward(self, cache, dy: np.ndarray):
        x = cache
        dw = dy.T @ x
        db = dy.sum(axis=0)
        dx = dy @ self.weight
        return dx, [dw, db]


class L2Normalize:
    """Project rows onto the unit sphere; gradients stay tangent to it."""

    params: list = []

    def forward(self, x: np.ndarray):
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
        norm = np.maximum(norm, 1e-12)
        y = x / norm
        return y, (y, norm)

    def backward(self, cache, dy: np.ndarray):
        y, norm = cache
        dot = (dy * y).sum(axis=1, keepdims=True)
        dx = (dy - y * dot) / norm
        return dx.astype(dy.dtype), []


class Encoder:
    """Frame embeddings on the unit sphere, built from the layers above.

    Construction is deterministic in ``seed``; two encoders built with the
    same config and seed start bit-identical, which the momentum copy in
    the training loop relies on.
    """

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = []
        in_ch = config.in_channels
        for out_ch, k, s in config.conv_stages:
            self.layers.append(Conv2d(in_ch, out_ch, ksize=k, stride=s, pad=k // 2,
                                      rng=rng, dtype=self.dtype))
            self.layers.append(ReLU())
            in_ch = out_ch
        self.layers.append(GlobalAvgPool())
        self.layers.append(Linear(in_ch, config.embedding_dim, rng=rng, dtype=self.dtype))
        self.layers.append(L2Normalize())

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray):
        """Batch of ``(N, C, S, S)`` frames -> ``(N, D)`` unit embeddings."""
        x = np.asarray(x, dtype=self.dtype)
        expect = (self.config.in_channels, self.config.input_size, self.config.input_size)
        if x.ndim != 4 or x.shape[1:] != expect:
            raise ValueError(f"expected input of shape (N, {expect[0]}, {expect[1]}, "
                             f"{expect[2]}), got {x.shape}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad_emb: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter, ordered like ``params``."""
        dy = np.asarray(grad_emb, dtype=self.dtype)
        grads_rev = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, pgrads = layer.backward(cache, dy)
            grads_rev.extend(reversed(pgrads))
        return list(reversed(grads_rev))

    # -- parameter plumbing ------------------------------------------------

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1).astype(np.float32) for p in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.num_params():
            raise ValueError(f"expected {self.num_params()} parameters, got {flat.size}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape).astype(self.dtype)
            pos += p.size

    def copy_params_from(self, other: "Encoder") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def clone(self) -> "Encoder":
        twin = Encoder(self.config, seed=0, dtype=self.dtype)
        twin.copy_params_from(self)
        return twin

    # -- inference ---------------------------------------------------------

    def embed_frames(self, frames, aug_cfg: AugmentConfig, batch_size: int = 64) -> np.ndarray:
        """Deterministic embeddings: center crop, normalize, forward.

        Accepts TactileFrames or raw ``H x W x 3`` arrays.
        """
        views = []
        for f in frames:
            px = f.pixels if isinstance(f, TactileFrame) else np.asarray(f)
            views.append(inference_view(px, aug_cfg).transpose(2, 0, 1))
        if not views:
            return np.zeros((0, self.config.embedding_dim), dtype=np.float32)
        stack = np.stack(views)
        out = []
        for start in range(0, len(stack), batch_size):
            emb, _ = self.forward(stack[start:start + batch_size])
            out.append(emb)
        return np.concatenate(out).astype(np.float32)


def gradient_check(encoder: Encoder, x: np.ndarray, *, eps: float = 1e-5,
                   samples_per_tensor: int | None = 5,
                   seed: int = 0) -> list[float]:
    """Central-difference check of every parameter tensor.

    Uses the scalar loss ``sum(emb * G)`` for a fixed random ``G`` so the
    whole chain, L2 normalization included, is exercised.  Returns one
    relative-error figure per parameter tensor; run the encoder in
    float64 for meaningful numbers.  The step must stay small: a coarse
    step (1e-3) walks perturbed pre-activations across the ReLU kink and
    the difference quotient stops matching the one-sided derivative.
    """
    rng = np.random.default_rng(seed)
    emb, caches = encoder.forward(x)
    g = rng.standard_normal(emb.shape).astype(encoder.dtype)
    analytic = encoder.backward(caches, g)

    def loss() -> float:
        e, _ = encoder.forward(x)
        return float((e * g).sum())

    errors = []
    for p, ga in zip(encoder.params, analytic):
        flat_idx = np.arange(p.size)
        if samples_per_tensor is not None and p.size > samples_per_tensor:
            flat_idx = rng.choice(p.size, size=samples_per_tensor, replace=False)
        worst = 0.0
        for idx in flat_idx:
            multi = np.unravel_index(int(idx), p.shape)
            orig = p[multi]
            p[multi] = orig + eps
            up = loss()
            p[multi] = orig - eps
            down = loss()
            p[multi] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric) + abs(float(ga[multi])), 1e-8)
            worst = max(worst, abs(numeric - float(ga[multi])) / denom)
        errors.append(worst)
    return errors
