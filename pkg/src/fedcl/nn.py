"""Dense encoder math: flat parameter vectors, batched forward passes, and
exact reverse-mode gradients for the contrastive training losses.

The encoder is a plain MLP over flattened pixels. ReLU follows every layer,
including the last, and the output head L2-normalizes, so features live in
the non-negative orthant with unit norm. An all-zero pre-normalization
activation maps to the all-zero feature vector by definition, and the
gradient through that point is taken to be zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .seeding import rng_for


@dataclass(frozen=True)
class LayerShape:
    """One dense layer: ``rows`` outputs, ``cols`` inputs, optional bias."""

    rows: int
    cols: int
    has_bias: bool = True

    @property
    def size(self) -> int:
        return self.rows * self.cols + (self.rows if self.has_bias else 0)


@dataclass
class EncoderParams:
    """Flat float64 parameter vector plus the layer manifest describing it.

    Instances with equal manifests combine element-wise (``+`` and scalar
    ``*``), which is what server-side weighted averaging relies on.
    """

    values: np.ndarray
    shapes: tuple[LayerShape, ...]
    feature_dim: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.shapes = tuple(self.shapes)
        expected = sum(s.size for s in self.shapes)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ShapeError(
                f"parameter vector has {self.values.size} entries, "
                f"manifest implies {expected}"
            )

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.values.copy(), self.shapes, self.feature_dim)

    def __add__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        if self.shapes != other.shapes:
            raise ShapeError("cannot add parameters with different manifests")
        return EncoderParams(self.values + other.values, self.shapes, self.feature_dim)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return EncoderParams(self.values * float(scalar), self.shapes, self.feature_dim)

    __rmul__ = __mul__


def validate_shapes(shapes) -> tuple[LayerShape, ...]:
    shapes = tuple(shapes)
    if not shapes:
        raise ConfigError("encoder needs at least one layer")
    for i, s in enumerate(shapes):
        if s.rows < 1 or s.cols < 1:
            raise ConfigError(f"layer {i} has a zero-dimensional shape {s.rows}x{s.cols}")
        if i > 0 and s.cols != shapes[i - 1].rows:
            raise ConfigError(
                f"layer {i} expects {s.cols} inputs but layer {i - 1} "
                f"produces {shapes[i - 1].rows}"
            )
    return shapes


def mlp_shapes(input_dim: int, hidden_dims, feature_dim: int) -> tuple[LayerShape, ...]:
    """Layer manifest for flatten -> hidden layer(s) -> feature head."""
    dims = [int(input_dim), *(int(h) for h in hidden_dims), int(feature_dim)]
    return validate_shapes(
        LayerShape(dims[i + 1], dims[i]) for i in range(len(dims) - 1)
    )


def init_params(shapes, seed: int) -> EncoderParams:
    """Fresh parameters, each layer uniform in [-s, s] with s = 1/sqrt(fan_in)."""
    shapes = validate_shapes(shapes)
    rng = rng_for(seed, "encoder-init")
    chunks = []
    for s in shapes:
        bound = 1.0 / np.sqrt(s.cols)
        chunks.append(rng.uniform(-bound, bound, s.rows * s.cols))
        if s.has_bias:
            chunks.append(rng.uniform(-bound, bound, s.rows))
    return EncoderParams(np.concatenate(chunks), shapes, shapes[-1].rows)


def layer_views(params: EncoderParams):
    """(weight, bias) array views into the flat vector; bias may be None."""
    out = []
    offset = 0
    for s in params.shapes:
        w = params.values[offset : offset + s.rows * s.cols].reshape(s.rows, s.cols)
        offset += s.rows * s.cols
        b = None
        if s.has_bias:
            b = params.values[offset : offset + s.rows]
            offset += s.rows
        out.append((w, b))
    return out


def normalize_rows(a: np.ndarray) -> np.ndarray:
    """L2-normalize rows; all-zero rows stay exactly zero."""
    a = np.asarray(a, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    out = np.zeros_like(a)
    nz = norms > 0.0
    out[nz] = a[nz] / norms[nz, None]
    return out


@dataclass
class ForwardCache:
    """Intermediate activations kept for the backward pass."""

    activations: list  # A_0 .. A_L (input, then post-ReLU per layer)
    preacts: list  # pre-activation per layer
    norms: np.ndarray  # (B,) L2 norms of A_L
    features: np.ndarray  # (B, d) normalized output


def _flatten_batch(params: EncoderParams, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    in_dim = params.shapes[0].cols
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ShapeError(f"expected inputs with {in_dim} values per sample, got {x.shape}")
    return x


def forward_cached(params: EncoderParams, images) -> ForwardCache:
    x = _flatten_batch(params, images)
    activations = [x]
    preacts = []
    a = x
    for w, b in layer_views(params):
        h = a @ w.T
        if b is not None:
            h = h + b
        preacts.append(h)
        a = np.maximum(h, 0.0)
        activations.append(a)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    features = np.zeros_like(a)
    nz = norms > 0.0
    features[nz] = a[nz] / norms[nz, None]
    return ForwardCache(activations, preacts, norms, features)


def forward_batch(params: EncoderParams, images) -> np.ndarray:
    """(B, d) feature rows for a stack of images or flat input rows."""
    return forward_cached(params, images).features


def forward(params: EncoderParams, image) -> np.ndarray:
    """Feature vector for a single image grid."""
    x = np.asarray(image, dtype=np.float64)
    return forward_cached(params, x.reshape(1, -1)).features[0]


def backward_features(params: EncoderParams, cache: ForwardCache, d_features) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector, given the
    loss gradient w.r.t. the normalized output features.

    Rows whose pre-normalization activation is exactly zero propagate no
    gradient, matching the zero-maps-to-zero head rule.
    """
    d_feats = np.asarray(d_features, dtype=np.float64)
    a_last = cache.activations[-1]
    da = np.zeros_like(a_last)
    nz = cache.norms > 0.0
    if np.any(nz):
        z = cache.features[nz]
        inner = np.einsum("ij,ij->i", d_feats[nz], z)
        da[nz] = (d_feats[nz] - inner[:, None] * z) / cache.norms[nz, None]

    views = layer_views(params)
    grads: list = [None] * len(views)
    for i in range(len(views) - 1, -1, -1):
        w, b = views[i]
        dh = da * (cache.preacts[i] > 0.0)
        gw = dh.T @ cache.activations[i]
        gb = dh.sum(axis=0) if b is not None else None
        grads[i] = (gw, gb)
        if i > 0:
            da = dh @ w
    flat = []
    for gw, gb in grads:
        flat.append(gw.ravel())
        if gb is not None:
            flat.append(gb)
    return np.concatenate(flat)


def _as_key_rows(keys, d: int) -> np.ndarray:
    if keys is None:
        return np.zeros((0, d))
    arr = np.asarray(keys, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, d))
    return arr.reshape(-1, d)


def loss_and_grad(params_q, batch_views, positives, negatives, synthetic_negatives, temperature):
    """Mean contrastive loss over the query batch and its exact gradient.

    ``positives``, ``negatives`` and ``synthetic_negatives`` are key-side
    feature rows and are treated as constants: gradients flow only through
    the query encoder. Either negative set may be empty; with both empty the
    softmax has a single term and the loss is exactly zero.

    Returns ``(loss, grad)`` with ``grad`` aligned with ``params_q.values``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    queries = np.asarray(batch_views, dtype=np.float64)
    if queries.size == 0 or queries.shape[0] == 0:
        raise ValueError("empty query batch")
    d = params_q.feature_dim
    pos = np.asarray(positives, dtype=np.float64).reshape(-1, d)
    cache = forward_cached(params_q, queries)
    z_q = cache.features
    batch = z_q.shape[0]
    if pos.shape[0] != batch:
        raise ShapeError(f"{batch} queries but {pos.shape[0]} positive keys")
    negs = np.vstack([_as_key_rows(negatives, d), _as_key_rows(synthetic_negatives, d)])

    tau = float(temperature)
    logits = np.empty((batch, 1 + negs.shape[0]))
    logits[:, 0] = np.einsum("ij,ij->i", z_q, pos) / tau
    logits[:, 1:] = (z_q @ negs.T) / tau

    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    total = expd.sum(axis=1)
    losses = peak[:, 0] + np.log(total) - logits[:, 0]
    loss = float(losses.mean())

    dlogits = expd / total[:, None]
    dlogits[:, 0] -= 1.0
    dlogits /= batch * tau
    d_z = dlogits[:, :1] * pos + dlogits[:, 1:] @ negs
    grad = backward_features(params_q, cache, d_z)
    return loss, grad
