"""Per-node contrastive training: stochastic two-view augmentation, the FIFO
key dictionary, the momentum key encoder, and one local pass over a shard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import EncoderParams, forward_batch, loss_and_grad
from .seeding import rng_for


class NegativeQueue:
    """FIFO store of key feature rows, evicting oldest beyond ``capacity``."""

    def __init__(self, capacity: int, entries=None):
        if capacity < 0:
            raise ValueError("queue capacity must be non-negative")
        self.capacity = int(capacity)
        self._entries: list[np.ndarray] = [np.asarray(e, dtype=np.float64) for e in entries] if entries else []
        overflow = len(self._entries) - self.capacity
        if overflow > 0:
            del self._entries[:overflow]

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, keys) -> None:
        keys = np.asarray(keys, dtype=np.float64)
        if keys.size:
            for row in keys.reshape(-1, keys.shape[-1]):
                self._entries.append(row.copy())
        overflow = len(self._entries) - self.capacity
        if overflow > 0:
            del self._entries[:overflow]

    def as_matrix(self, d: int) -> np.ndarray:
        if not self._entries:
            return np.zeros((0, d))
        return np.array(self._entries)

    def copy(self) -> "NegativeQueue":
        return NegativeQueue(self.capacity, self._entries)


def momentum_update(theta_d: EncoderParams, theta_q: EncoderParams, m: float) -> EncoderParams:
    """Key-encoder update ``m * theta_d + (1 - m) * theta_q``, element-wise."""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1), got {m}")
    if theta_d.shapes != theta_q.shapes:
        raise ShapeError("momentum update needs matching layer manifests")
    values = m * theta_d.values + (1.0 - m) * theta_q.values
    return EncoderParams(values, theta_q.shapes, theta_q.feature_dim)


def _rotate_nearest(img: np.ndarray, degrees: float) -> np.ndarray:
    h, w = img.shape
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr = rows - cr
    dc = cols - cc
    src_r = np.rint(cr + c * dr + s * dc).astype(int)
    src_c = np.rint(cc - s * dr + c * dc).astype(int)
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(img)
    out[valid] = img[src_r[valid], src_c[valid]]
    return out


def _crop_resize(img: np.ndarray, top: int, left: int, crop_h: int, crop_w: int) -> np.ndarray:
    h, w = img.shape
    patch = img[top : top + crop_h, left : left + crop_w]
    rows = np.minimum(((np.arange(h) + 0.5) * crop_h / h).astype(int), crop_h - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * crop_w / w).astype(int), crop_w - 1)
    return patch[np.ix_(rows, cols)]


def augment(image, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view: maybe horizontal flip, small rotation, crop and
    resize back, then a monotone gamma remap. Output stays within [0, 1].

    All six random draws happen on every call, so the stream layout does not
    depend on the sampled values; an all-zero image maps to itself.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    do_flip = rng.random() < 0.5
    angle = rng.uniform(-15.0, 15.0)
    scale = rng.uniform(0.7, 1.0)
    crop_h = min(h, max(1, int(round(scale * h))))
    crop_w = min(w, max(1, int(round(scale * w))))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    gamma = rng.uniform(0.7, 1.4)

    out = img[:, ::-1] if do_flip else img
    out = _rotate_nearest(out, angle)
    out = _crop_resize(out, top, left, crop_h, crop_w)
    out = np.power(np.clip(out, 0.0, 1.0), gamma)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class LocalHyperparams:
    batch_size: int
    lr: float
    sgd_momentum: float
    weight_decay: float
    momentum_coeff: float  # key-encoder momentum m
    temperature: float
    epochs: int = 1
    round_index: int = 1


@dataclass
class NodeTrainState:
    theta_q: EncoderParams
    theta_d: EncoderParams
    queue: NegativeQueue
    rng_seed: int
    momentum_buffer: np.ndarray | None = None


def local_update(state: NodeTrainState, dataset_shard, synthetic_negatives, hp: LocalHyperparams):
    """One local pass over the shard (``hp.epochs`` epochs of minibatches).

    Per batch: two views per image; queries run through theta_q, keys through
    theta_d (constants); the loss contrasts each query against its key, the
    current queue contents, and the given synthetic negatives; then an SGD
    step with momentum and weight decay updates theta_q, theta_d takes its
    momentum update from the new theta_q, and the fresh keys enter the queue.

    Returns ``(new_state, per_batch_losses)``. The input state is not
    mutated. An empty ``synthetic_negatives`` reduces the loss to the plain
    dictionary form.
    """
    images = np.asarray(dataset_shard, dtype=np.float64)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ValueError("dataset shard must be a non-empty (n, H, W) stack")
    d = state.theta_q.feature_dim
    if synthetic_negatives is None:
        synth = np.zeros((0, d))
    else:
        synth = np.asarray(synthetic_negatives, dtype=np.float64).reshape(-1, d)

    theta_q = state.theta_q.copy()
    theta_d = state.theta_d.copy()
    queue = state.queue.copy()
    buf = np.zeros_like(theta_q.values) if state.momentum_buffer is None else state.momentum_buffer.copy()
    rng = rng_for(state.rng_seed, "local-update", hp.round_index)

    n = images.shape[0]
    losses: list[float] = []
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            q_views, k_views = [], []
            for i in idx:
                q_views.append(augment(images[i], rng))
                k_views.append(augment(images[i], rng))
            keys = forward_batch(theta_d, np.stack(k_views))
            loss, grad = loss_and_grad(
                theta_q, np.stack(q_views), keys, queue.as_matrix(d), synth, hp.temperature
            )
            grad = grad + hp.weight_decay * theta_q.values
            buf = hp.sgd_momentum * buf + grad
            theta_q.values = theta_q.values - hp.lr * buf
            theta_d = momentum_update(theta_d, theta_q, hp.momentum_coeff)
            queue.push(keys)
            losses.append(loss)

    return NodeTrainState(theta_q, theta_d, queue, state.rng_seed, buf), losses
