"""Momentum-contrast training loop for the frame encoder.

One query encoder learns by gradient descent; a key encoder trails it as
an exponential moving average and fills a FIFO queue of negative
embeddings.  The InfoNCE objective scores each query against its
positive key and the whole queue.

Everything here is deterministic given the config seed: batch order,
augmentation draws, queue initialization and parameter init all derive
from it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, _augment_once, _pixels_of, make_positive_pair
from .checkpoint import Checkpoint
from .dataset import DatasetManifest, split_session
from .nn import Encoder, EncoderConfig


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message carries the location."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    momentum: float = 0.9          # SGD heavy-ball coefficient
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 32
    queue_size: int = 1024         # negatives held, FIFO
    key_momentum: float = 0.999    # EMA coefficient of the key encoder
    temperature: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.queue_size < self.batch_size:
            raise ValueError(f"queue_size {self.queue_size} must be >= batch_size {self.batch_size}")
        if not 0.0 < self.key_momentum < 1.0:
            raise ValueError(f"key_momentum must be in (0, 1), got {self.key_momentum}")

    @classmethod
    def desk_default(cls, **overrides) -> "TrainConfig":
        overrides.setdefault("epochs", 40)
        return cls(**overrides)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "queue_size": self.queue_size,
            "key_momentum": self.key_momentum,
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)      # mean batch loss per epoch
    top1: list[float] = field(default_factory=list)      # held-out kNN accuracy per epoch
    wall_time_s: float = 0.0

    @property
    def max_top1(self) -> float:
        return max(self.top1) if self.top1 else 0.0

    @property
    def final_top1(self) -> float:
        return self.top1[-1] if self.top1 else 0.0


def info_nce_loss(query: np.ndarray, positive: np.ndarray, queue: np.ndarray,
                  temperature: float) -> tuple[float, np.ndarray]:
    """Mean InfoNCE loss over a batch plus its gradient w.r.t. the queries.

    Logit layout per row: the positive similarity first, then one logit
    per queue entry.  Positive keys and queue entries are treated as
    constants; only the query gradient is returned.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    q = np.asarray(query, dtype=np.float64)
    k = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(queue, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("queue must be non-empty")
    b = q.shape[0]

    l_pos = (q * k).sum(axis=1, keepdims=True)       # (B, 1)
    l_neg = q @ neg.T                                # (B, Q)
    logits = np.concatenate([l_pos, l_neg], axis=1) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    loss = float(-np.log(p[:, 0]).mean())

    # d(loss)/d(logit) = softmax - onehot(0), averaged over the batch
    dl = p.copy()
    dl[:, 0] -= 1.0
    dl /= b * temperature
    dq = dl[:, :1] * k + dl[:, 1:] @ neg
    return loss, dq.astype(np.float32)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray],
             velocity: list[np.ndarray], cfg: TrainConfig) -> None:
    """In-place heavy-ball SGD with decoupled-from-nothing weight decay:
    g' = g + wd*p; v = momentum*v + g'; p -= lr*v."""
    for p, g, v in zip(params, grads, velocity):
        g_eff = g + cfg.weight_decay * p
        v *= cfg.momentum
        v += g_eff
        p -= cfg.learning_rate * v


def momentum_update(key_params: list[np.ndarray], query_params: list[np.ndarray],
                    m: float) -> None:
    """key <- m*key + (1-m)*query, elementwise and in place."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient must be in [0, 1], got {m}")
    for kp, qp in zip(key_params, query_params):
        kp *= m
        kp += (1.0 - m) * qp


class _NegativeQueue:
    """Fixed-capacity FIFO of unit vectors, stored as a ring buffer."""

    def __init__(self, buf: np.ndarray):
        self.buf = np.ascontiguousarray(buf, dtype=np.float32)
        self.ptr = 0

    def push(self, keys: np.ndarray) -> None:
        n = len(keys)
        size = len(self.buf)
        if n > size:
            keys = keys[-size:]
            n = size
        end = self.ptr + n
        if end <= size:
            self.buf[self.ptr:end] = keys
        else:
            split = size - self.ptr
            self.buf[self.ptr:] = keys[:split]
            self.buf[:end - size] = keys[split:]
        self.ptr = end % size

    def view(self) -> np.ndarray:
        return self.buf


def _warm_queue(key: Encoder, train_frames, aug_cfg: AugmentConfig,
                cfg: TrainConfig, rng: np.random.Generator) -> _NegativeQueue:
    """Prime the negative queue with key embeddings of augmented views.

    A queue of random unit vectors would sit nearly orthogonal to anything
    the untrained encoder can emit, so the first steps would score against
    negatives that are trivially far away.  Filling it from the key
    encoder instead means every slot is a plausible key from step zero;
    the FIFO then evicts these exactly like any later entry.
    """
    rows = []
    filled = 0
    while filled < cfg.queue_size:
        take = min(cfg.batch_size, cfg.queue_size - filled)
        idx = rng.integers(0, len(train_frames), size=take)
        views = [_augment_once(_pixels_of(train_frames[i]), aug_cfg, rng).transpose(2, 0, 1)
                 for i in idx]
        emb, _ = key.forward(np.stack(views))
        rows.append(emb.astype(np.float32))
        filled += take
    return _NegativeQueue(np.concatenate(rows, axis=0))


def _flatten_split(manifest: DatasetManifest, frames, train_count):
    """Chronological per-session split into (train, test) frame/label lists."""
    tr_f, tr_y, te_f, te_y = [], [], [], []
    for session, sess_frames in zip(manifest.sessions, frames):
        count = train_count if train_count is not None else round(0.8 * len(sess_frames))
        head, tail = split_session(sess_frames, count)
        tr_f.extend(head)
        tr_y.extend([session.sample_id] * len(head))
        te_f.extend(tail)
        te_y.extend([session.sample_id] * len(tail))
    return tr_f, tr_y, te_f, te_y


def knn_top1(train_emb: np.ndarray, train_labels, test_emb: np.ndarray, test_labels) -> float:
    """Fraction of test rows whose nearest training row shares their label.

    Embeddings are unit-norm, so max dot product and min Euclidean
    distance pick the same neighbor.
    """
    if len(test_emb) == 0:
        return 0.0
    sims = test_emb @ train_emb.T
    nearest = sims.argmax(axis=1)
    hits = sum(1 for i, j in enumerate(nearest) if train_labels[j] == test_labels[i])
    return hits / len(test_emb)


def train(dataset, aug_cfg: AugmentConfig, enc_cfg: EncoderConfig, cfg: TrainConfig,
          *, train_count: int | None = None,
          progress=None) -> tuple[Checkpoint, TrainHistory]:
    """Full contrastive run over a (manifest, session_frames) dataset.

    Each session is split chronologically (default four fifths train);
    held-out top-1 kNN accuracy is evaluated after every epoch with the
    current query encoder.  Ragged trailing batches are dropped so every
    step sees exactly ``batch_size`` pairs.
    """
    manifest, frames = dataset
    if not manifest.sessions or not frames:
        raise ValueError("dataset is empty")
    train_frames, train_labels, test_frames, test_labels = _flatten_split(
        manifest, frames, train_count)
    n = len(train_frames)
    if n < cfg.batch_size:
        raise ValueError(f"{n} training frames cannot fill a batch of {cfg.batch_size}")

    rng = np.random.default_rng(cfg.seed)
    query = Encoder(enc_cfg, seed=cfg.seed)
    key = Encoder(enc_cfg, seed=cfg.seed)
    key.copy_params_from(query)
    queue = _warm_queue(key, train_frames, aug_cfg, cfg, rng)
    velocity = [np.zeros_like(p) for p in query.params]

    history = TrainHistory()
    started = time.monotonic()
    steps_per_epoch = n // cfg.batch_size

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for step in range(steps_per_epoch):
            batch_idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            q_views, k_views = [], []
            for i in batch_idx:
                va, vb = make_positive_pair(train_frames[i], aug_cfg, rng)
                q_views.append(va.transpose(2, 0, 1))
                k_views.append(vb.transpose(2, 0, 1))
            q_emb, caches = query.forward(np.stack(q_views))
            k_emb, _ = key.forward(np.stack(k_views))

            loss, dq = info_nce_loss(q_emb, k_emb, queue.view(), cfg.temperature)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step} "
                    f"(last finite epoch means: {history.loss[-3:]})")
            grads = query.backward(caches, dq)
            sgd_step(query.params, grads, velocity, cfg)
            momentum_update(key.params, query.params, cfg.key_momentum)
            queue.push(k_emb.astype(np.float32))
            epoch_losses.append(loss)

        history.loss.append(float(np.mean(epoch_losses)))
        tr_emb = query.embed_frames(train_frames, aug_cfg)
        te_emb = query.embed_frames(test_frames, aug_cfg)
        history.top1.append(knn_top1(tr_emb, train_labels, te_emb, test_labels))
        if progress is not None:
            progress(epoch, history.loss[-1], history.top1[-1])

    history.wall_time_s = time.monotonic() - started
    ckpt = Checkpoint(
        encoder_config=enc_cfg,
        params=query.get_flat_params(),
        metadata={
            "epochs": cfg.epochs,
            "loss_history": history.loss,
            "top1_history": history.top1,
            "seed": cfg.seed,
            "augment": aug_cfg.to_dict(),
            "train": cfg.to_dict(),
        },
    )
    return ckpt, history
