"""Multimodal fusion and the deep transformer classification stack.

Fusion concatenates the text-chunk sequence with the encoded image sequence
along the token axis. The classifier applies stacked transformer blocks
(attention sublayer per the segment-encoder formulas plus a position-wise
feed-forward of hidden width 4x dim), pools valid positions by masked mean,
and maps to a 5x3 logits matrix: one 3-way decision per aspect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .data_model import NUM_ASPECTS, NUM_STATES, AspectLabelVector
from .isec import AttentionConfig, LayerNorm, MultiHeadBlock, xavier_uniform, _dropout_mask

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NonFiniteError(FloatingPointError):
    """A forward pass produced non-finite values (overflown or NaN activations)."""


def gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u * _INV_SQRT2))


def gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u * _INV_SQRT2)) + u * np.exp(-0.5 * u * u) * _INV_SQRT2PI


@dataclass(frozen=True)
class LogitsMatrix:
    """5x3 unnormalized scores; column k corresponds to label state k."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)  # defensive copy
        if scores.shape != (NUM_ASPECTS, NUM_STATES):
            raise ValueError(f"logits must be {NUM_ASPECTS}x{NUM_STATES}, got {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("logits contain non-finite values")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)


def fuse(
    text: np.ndarray,
    text_mask: np.ndarray,
    y_is: np.ndarray,
    y_is_mask: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate text tokens and encoded image tokens along the sequence axis.

    Text rows come first; both operands keep their rows bit-for-bit and the
    masks are concatenated in the same order.
    """
    text = np.asarray(text, dtype=np.float64)
    y_is = np.asarray(y_is, dtype=np.float64)
    if text.ndim != 2 or y_is.ndim != 2:
        raise ValueError("fuse expects 2-D (len, dim) sequences")
    if text.shape[1] != y_is.shape[1]:
        raise ValueError(f"dim mismatch in fusion: {text.shape[1]} vs {y_is.shape[1]}")
    fused = np.concatenate([text, y_is], axis=0)
    mask = np.concatenate([np.asarray(text_mask, dtype=bool), np.asarray(y_is_mask, dtype=bool)])
    if mask.shape[0] != fused.shape[0]:
        raise ValueError("mask lengths must match their sequences")
    return fused, mask


class FeedForward:
    """Position-wise two-layer GELU network, hidden width 4x dim."""

    def __init__(self, dim: int, rng: np.random.Generator):
        hidden = 4 * dim
        self.w1 = xavier_uniform(rng, dim, hidden, (dim, hidden))
        self.b1 = np.zeros(hidden, dtype=np.float64)
        self.w2 = xavier_uniform(rng, hidden, dim, (hidden, dim))
        self.b2 = np.zeros(dim, dtype=np.float64)
        self.d_w1 = np.zeros_like(self.w1)
        self.d_b1 = np.zeros_like(self.b1)
        self.d_w2 = np.zeros_like(self.w2)
        self.d_b2 = np.zeros_like(self.b2)
        self._cache: Optional[dict] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = x @ self.w1 + self.b1
        act = gelu(pre)
        self._cache = {"x": x, "pre": pre, "act": act}
        return act @ self.w2 + self.b2

    def backward(self, dy: np.ndarray) -> np.ndarray:
        c = self._cache
        self.d_w2 += c["act"].T @ dy
        self.d_b2 += dy.sum(axis=0)
        dact = dy @ self.w2.T
        dpre = dact * gelu_grad(c["pre"])
        self.d_w1 += c["x"].T @ dpre
        self.d_b1 += dpre.sum(axis=0)
        return dpre @ self.w1.T

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }

    def grads(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.w1": self.d_w1,
            f"{prefix}.b1": self.d_b1,
            f"{prefix}.w2": self.d_w2,
            f"{prefix}.b2": self.d_b2,
        }

    def zero_grads(self):
        self.d_w1[...] = 0.0
        self.d_b1[...] = 0.0
        self.d_w2[...] = 0.0
        self.d_b2[...] = 0.0


class TransformerBlock:
    """Attention sublayer followed by a feed-forward sublayer, each residual + LN."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.attn = MultiHeadBlock(cfg, rng)
        self.ffn = FeedForward(cfg.dim, rng)
        self.ln2 = LayerNorm(cfg.dim)
        self._drop_f: Optional[np.ndarray] = None

    def forward(
        self,
        x: np.ndarray,
        key_mask: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        y1 = self.attn.forward(x, key_mask, training=training, rng=rng)
        f = self.ffn.forward(y1)
        self._drop_f = None
        if training and self.cfg.dropout_rate > 0.0:
            self._drop_f = _dropout_mask(rng, f.shape, self.cfg.dropout_rate)
            f = f * self._drop_f
        return self.ln2.forward(y1 + f)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dz = self.ln2.backward(dy)
        df = dz if self._drop_f is None else dz * self._drop_f
        dy1 = dz + self.ffn.backward(df)
        return self.attn.backward(dy1)

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.attn.params(f"{prefix}.attn")
        out.update(self.ffn.params(f"{prefix}.ffn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        return out

    def grads(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.attn.grads(f"{prefix}.attn")
        out.update(self.ffn.grads(f"{prefix}.ffn"))
        out.update(self.ln2.grads(f"{prefix}.ln2"))
        return out

    def zero_grads(self):
        self.attn.zero_grads()
        self.ffn.zero_grads()
        self.ln2.zero_grads()


class ClassifierStack:
    """Stacked transformer blocks + masked mean pooling + the 5x3 multitask head.

    The stack is optional (depth 0 leaves pooled raw embeddings + linear head,
    the frozen-encoder ablation). The head is one shared linear map to 15
    logits reshaped to aspects x states.
    """

    def __init__(self, cfg: AttentionConfig, num_blocks: int, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [TransformerBlock(cfg, rng) for _ in range(num_blocks)]
        out = NUM_ASPECTS * NUM_STATES
        self.head_w = xavier_uniform(rng, cfg.dim, out, (cfg.dim, out))
        self.head_b = np.zeros(out, dtype=np.float64)
        self.d_head_w = np.zeros_like(self.head_w)
        self.d_head_b = np.zeros_like(self.head_b)
        self._cache: Optional[dict] = None

    def forward(
        self,
        fused: np.ndarray,
        mask: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> LogitsMatrix:
        fused = np.asarray(fused, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if fused.ndim != 2 or fused.shape[1] != self.cfg.dim:
            raise ValueError(f"fused sequence must be (len, {self.cfg.dim}), got {fused.shape}")
        if mask.shape != (fused.shape[0],):
            raise ValueError("mask length must match the fused sequence")
        if not mask.any():
            raise ValueError("classification requires at least one valid position")
        h = fused
        for block in self.blocks:
            h = block.forward(h, mask, training=training, rng=rng)
        n_valid = int(mask.sum())
        pooled = h[mask].mean(axis=0)
        logits = pooled @ self.head_w + self.head_b
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError("classifier forward produced non-finite logits")
        self._cache = {"mask": mask, "n_valid": n_valid, "pooled": pooled, "seq_len": h.shape[0]}
        return LogitsMatrix(scores=logits.reshape(NUM_ASPECTS, NUM_STATES))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        c = self._cache
        if c is None:
            raise RuntimeError("backward called before forward")
        dflat = np.asarray(dlogits, dtype=np.float64).reshape(-1)
        self.d_head_w += np.outer(c["pooled"], dflat)
        self.d_head_b += dflat
        dpooled = self.head_w @ dflat
        dh = np.zeros((c["seq_len"], self.cfg.dim), dtype=np.float64)
        dh[c["mask"]] = dpooled / c["n_valid"]
        for block in reversed(self.blocks):
            dh = block.backward(dh)
        return dh

    def params(self, prefix: str = "classifier") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.block{i}"))
        out[f"{prefix}.head.w"] = self.head_w
        out[f"{prefix}.head.b"] = self.head_b
        return out

    def grads(self, prefix: str = "classifier") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.blocks):
            out.update(block.grads(f"{prefix}.block{i}"))
        out[f"{prefix}.head.w"] = self.d_head_w
        out[f"{prefix}.head.b"] = self.d_head_b
        return out

    def zero_grads(self):
        for block in self.blocks:
            block.zero_grads()
        self.d_head_w[...] = 0.0
        self.d_head_b[...] = 0.0


def classify_forward(
    fused: np.ndarray,
    mask: np.ndarray,
    stack: ClassifierStack,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> LogitsMatrix:
    """Run the full stack on a fused sequence. Convenience wrapper."""
    return stack.forward(fused, mask, training=training, rng=rng)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_labels(logits: LogitsMatrix) -> AspectLabelVector:
    """Per-aspect argmax over the 3 states; ties break toward the smaller state."""
    states = np.argmax(logits.scores, axis=1)  # np.argmax returns the first maximum
    return AspectLabelVector(states=tuple(int(s) for s in states))


def multitask_loss(logits: LogitsMatrix, gold: AspectLabelVector) -> float:
    """Sum over aspects of categorical cross-entropy against the gold state.

    Log-sum-exp stabilized: finite logits can never overflow.
    """
    scores = logits.scores
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    gold_idx = gold.to_array()
    picked = shifted[np.arange(NUM_ASPECTS), gold_idx]
    return float((log_norm - picked).sum())


def multitask_loss_grad(logits: LogitsMatrix, gold: AspectLabelVector) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. the logits matrix (softmax minus one-hot)."""
    loss = multitask_loss(logits, gold)
    probs = softmax_rows(logits.scores)
    grad = probs.copy()
    grad[np.arange(NUM_ASPECTS), gold.to_array()] -= 1.0
    return loss, grad
