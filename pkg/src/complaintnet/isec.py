"""Trainable image segment encoder with contextual attention.

One multi-head self-attention block over a CLS-augmented, positionally
encoded image-chunk sequence: scaled dot-product attention per head, head
concatenation projected by an output matrix, a residual from the block
input, then layer normalization. Forward and backward passes are written
out explicitly so analytic gradients can be verified against finite
differences.

All model math runs in float64; masked positions receive exactly zero
attention weight and are provably inert for valid outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data_model import EmbeddingSequence


@dataclass(frozen=True)
class AttentionConfig:
    """Width/head geometry and dropout for one attention block."""

    dim: int
    num_heads: int
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.dim < 1 or self.num_heads < 1:
            raise ValueError("dim and num_heads must be positive")
        if self.dim % self.num_heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads


def positional_encoding(seq_len: int, dim: int) -> np.ndarray:
    """Sinusoidal position table: sin at even columns, cos at odd columns.

    PE[pos, 2i] = sin(pos / 10000^(2i/dim)), PE[pos, 2i+1] = cos(same angle).
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    if dim % 2 != 0:
        raise ValueError(f"dim must be even for sin/cos pairing, got {dim}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, two_i / dim)
    pe = np.empty((seq_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def masked_softmax(scores: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with masked keys forced to weight 0."""
    masked = np.where(key_mask, scores, -np.inf)
    shifted = masked - np.max(masked, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def attention_weights(q: np.ndarray, k: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention weights: softmax(QK^T / sqrt(d_k)) with masking."""
    d_k = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(d_k)
    return masked_softmax(scores, key_mask)


def self_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Single-head scaled dot-product attention over (len x d_k) arrays.

    Masked key positions get exactly zero weight; every attention row is a
    probability simplex over the valid positions.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or q.shape != k.shape or k.shape != v.shape:
        raise ValueError(f"Q, K, V must share a (len, d_k) shape, got {q.shape}, {k.shape}, {v.shape}")
    if mask is None:
        mask = np.ones(q.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q.shape[0],):
        raise ValueError(f"mask length {mask.shape} must be ({q.shape[0]},)")
    if not mask.any():
        raise ValueError("attention requires at least one valid position")
    return attention_weights(q, k, mask) @ v


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    # Inverted dropout: surviving entries are pre-scaled by 1/keep.
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


class LayerNorm:
    """Per-row layer normalization with trainable gain and bias."""

    EPS = 1e-5

    def __init__(self, dim: int):
        self.gain = np.ones(dim, dtype=np.float64)
        self.bias = np.zeros(dim, dtype=np.float64)
        self.d_gain = np.zeros_like(self.gain)
        self.d_bias = np.zeros_like(self.bias)
        self._xhat: Optional[np.ndarray] = None
        self._inv_std: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered**2).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = centered * inv_std
        self._xhat, self._inv_std = xhat, inv_std
        return self.gain * xhat + self.bias

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        self.d_gain += (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
        self.d_bias += dy.sum(axis=tuple(range(dy.ndim - 1)))
        dxhat = dy * self.gain
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}

    def grads(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.gain": self.d_gain, f"{prefix}.bias": self.d_bias}

    def zero_grads(self):
        self.d_gain[...] = 0.0
        self.d_bias[...] = 0.0


class MultiHeadBlock:
    """LN(x + Concat(head_1..head_n) W_O): attention sublayer with residual + norm.

    The residual adds the pre-projection block input. Dropout (training only)
    is applied to the attention weights and to the sublayer output before the
    residual addition.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        d = cfg.dim
        self.cfg = cfg
        self.w_q = xavier_uniform(rng, d, d, (d, d))
        self.w_k = xavier_uniform(rng, d, d, (d, d))
        self.w_v = xavier_uniform(rng, d, d, (d, d))
        self.w_o = xavier_uniform(rng, d, d, (d, d))
        self.ln = LayerNorm(d)
        self.d_w_q = np.zeros_like(self.w_q)
        self.d_w_k = np.zeros_like(self.w_k)
        self.d_w_v = np.zeros_like(self.w_v)
        self.d_w_o = np.zeros_like(self.w_o)
        self._cache: Optional[dict] = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        length = x.shape[0]
        h, dk = self.cfg.num_heads, self.cfg.head_dim
        return x.reshape(length, h, dk).transpose(1, 0, 2)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        h, length, dk = x.shape
        return x.transpose(1, 0, 2).reshape(length, h * dk)

    def forward(
        self,
        x: np.ndarray,
        key_mask: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.cfg.dim:
            raise ValueError(f"input must be (len, {self.cfg.dim}), got {x.shape}")
        if key_mask.shape != (x.shape[0],):
            raise ValueError(f"mask shape {key_mask.shape} must be ({x.shape[0]},)")
        if not key_mask.any():
            raise ValueError("attention requires at least one valid position")
        dk = self.cfg.head_dim
        qh = self._split(x @ self.w_q)
        kh = self._split(x @ self.w_k)
        vh = self._split(x @ self.w_v)
        scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dk)
        probs = masked_softmax(scores, key_mask)
        drop_p = drop_a = None
        rate = self.cfg.dropout_rate
        if training and rate > 0.0:
            if rng is None:
                raise ValueError("training forward with dropout requires an rng")
            drop_p = _dropout_mask(rng, probs.shape, rate)
        probs_used = probs if drop_p is None else probs * drop_p
        heads = probs_used @ vh
        concat = self._merge(heads)
        attn_out = concat @ self.w_o
        if training and rate > 0.0:
            drop_a = _dropout_mask(rng, attn_out.shape, rate)
        attn_used = attn_out if drop_a is None else attn_out * drop_a
        z = x + attn_used
        y = self.ln.forward(z)
        self._cache = {
            "x": x,
            "qh": qh,
            "kh": kh,
            "vh": vh,
            "probs": probs,
            "probs_used": probs_used,
            "drop_p": drop_p,
            "drop_a": drop_a,
            "concat": concat,
        }
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        c = self._cache
        if c is None:
            raise RuntimeError("backward called before forward")
        dk = self.cfg.head_dim
        dz = self.ln.backward(dy)
        da_used = dz
        da = da_used if c["drop_a"] is None else da_used * c["drop_a"]
        self.d_w_o += c["concat"].T @ da
        dconcat = da @ self.w_o.T
        dheads = self._split(dconcat)
        dprobs_used = dheads @ c["vh"].transpose(0, 2, 1)
        dvh = c["probs_used"].transpose(0, 2, 1) @ dheads
        dprobs = dprobs_used if c["drop_p"] is None else dprobs_used * c["drop_p"]
        probs = c["probs"]
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dk)
        dqh = dscores @ c["kh"]
        dkh = dscores.transpose(0, 2, 1) @ c["qh"]
        dq = self._merge(dqh)
        dk_full = self._merge(dkh)
        dv = self._merge(dvh)
        x = c["x"]
        self.d_w_q += x.T @ dq
        self.d_w_k += x.T @ dk_full
        self.d_w_v += x.T @ dv
        return dz + dq @ self.w_q.T + dk_full @ self.w_k.T + dv @ self.w_v.T

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.w_o": self.w_o,
        }
        out.update(self.ln.params(f"{prefix}.ln"))
        return out

    def grads(self, prefix: str) -> dict[str, np.ndarray]:
        out = {
            f"{prefix}.w_q": self.d_w_q,
            f"{prefix}.w_k": self.d_w_k,
            f"{prefix}.w_v": self.d_w_v,
            f"{prefix}.w_o": self.d_w_o,
        }
        out.update(self.ln.grads(f"{prefix}.ln"))
        return out

    def zero_grads(self):
        self.d_w_q[...] = 0.0
        self.d_w_k[...] = 0.0
        self.d_w_v[...] = 0.0
        self.d_w_o[...] = 0.0
        self.ln.zero_grads()


class IsecEncoder:
    """CLS augmentation + positional encoding + one multi-head attention block.

    Output has one more row than the input sequence: the CLS summary sits at
    position 0 and is always valid. The CLS vector and every block weight are
    trainable; the positional table is fixed.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.cls_token = xavier_uniform(rng, cfg.dim, cfg.dim, (cfg.dim,))
        self.block = MultiHeadBlock(cfg, rng)
        self.d_cls = np.zeros_like(self.cls_token)

    def forward(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Encode an (L x dim) image-chunk sequence into ((L+1) x dim) with its mask."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2 or image.shape[1] != self.cfg.dim:
            raise ValueError(f"image sequence must be (len, {self.cfg.dim}), got {image.shape}")
        augmented = np.concatenate([self.cls_token[None, :], image], axis=0)
        out_mask = np.concatenate([[True], np.asarray(mask, dtype=bool)])
        g = augmented + positional_encoding(augmented.shape[0], self.cfg.dim)
        y = self.block.forward(g, out_mask, training=training, rng=rng)
        return y, out_mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Propagate to the image inputs; accumulates the CLS gradient."""
        dg = self.block.backward(dy)
        self.d_cls += dg[0]
        return dg[1:]

    def params(self, prefix: str = "isec") -> dict[str, np.ndarray]:
        out = {f"{prefix}.cls": self.cls_token}
        out.update(self.block.params(f"{prefix}.block"))
        return out

    def grads(self, prefix: str = "isec") -> dict[str, np.ndarray]:
        out = {f"{prefix}.cls": self.d_cls}
        out.update(self.block.grads(f"{prefix}.block"))
        return out

    def zero_grads(self):
        self.d_cls[...] = 0.0
        self.block.zero_grads()


def multi_head_attention(
    x: np.ndarray,
    block: MultiHeadBlock,
    mask: Optional[np.ndarray] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Apply one attention block to an (len x dim) sequence. Convenience wrapper."""
    x = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.ones(x.shape[0], dtype=bool)
    return block.forward(x, np.asarray(mask, dtype=bool), training=training, rng=rng)


def isec_forward(
    image_seq: EmbeddingSequence, encoder: IsecEncoder
) -> tuple[np.ndarray, np.ndarray]:
    """Encode a validated embedding sequence; returns (Y_is, mask) with CLS first."""
    return encoder.forward(image_seq.data.astype(np.float64), image_seq.mask)
