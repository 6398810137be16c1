"""Adam optimization with per-module learning rates, the epoch loop, and gradcheck.

Training is a pure function of (manifest, seed, config): shuffling and
dropout draw from generators spawned off one seed, batches are processed in
a fixed order, and re-runs reproduce loss curves bit-exactly. Input
embeddings are never mutated; they stand in for frozen pretrained encoders.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .chunking import pad_batch
from .classifier import NonFiniteError, multitask_loss_grad, predict_labels
from .data_model import ChunkedReview, DatasetManifest
from .model import GROUP_ISEC, ComplaintModel, save_checkpoint

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("epoch", "train_loss", "test_hamming", "test_exact_match", "test_ac_micro_f1")


class NumericalAbortError(RuntimeError):
    """Raised when training hits a non-finite loss; the model keeps last-good weights."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters. Defaults follow the full-size recipe:
    1e-5 on the segment encoder, 1e-6 on the classifier, batch 8, 100 epochs."""

    lr_isec: float = 1e-5
    lr_classifier: float = 1e-6
    batch_size: int = 8
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: Optional[float] = None  # global-norm gradient clipping, off by default

    def __post_init__(self):
        if self.lr_isec < 0 or self.lr_classifier < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")

    def lr_for_group(self, group: str) -> float:
        return self.lr_isec if group == GROUP_ISEC else self.lr_classifier


@dataclass
class OptimizerState:
    """First/second moment estimates and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update, applied in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    Rejects non-finite gradients, naming the offending parameter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalAbortError(f"non-finite gradient in parameter {name!r}; step aborted")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    test_hamming: Optional[float] = None
    test_exact_match: Optional[float] = None
    test_ac_micro_f1: Optional[float] = None


@dataclass
class TrainResult:
    log: list[EpochLog]
    checkpoint_path: Optional[Path] = None

    def train_losses(self) -> list[float]:
        return [row.train_loss for row in self.log]


def write_loss_log(log: list[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_LOG_COLUMNS)
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.train_loss:.10f}",
                    "" if row.test_hamming is None else f"{row.test_hamming:.6f}",
                    "" if row.test_exact_match is None else f"{row.test_exact_match:.6f}",
                    "" if row.test_ac_micro_f1 is None else f"{row.test_ac_micro_f1:.6f}",
                ]
            )


def _batch_loss_and_grads(
    model: ComplaintModel,
    reviews: list[ChunkedReview],
    training: bool,
    rng: Optional[np.random.Generator],
) -> float:
    """Mean multitask loss over one batch; gradients accumulate into the model."""
    batch = pad_batch(reviews)
    if batch.labels is None:
        raise ValueError("training batches require gold labels on every review")
    n = batch.size
    total = 0.0
    for i in range(n):
        logits = model.forward_sample(
            batch.text[i], batch.image[i], batch.mask[i], training=training, rng=rng
        )
        loss, dlogits = multitask_loss_grad(logits, batch.labels[i])
        total += loss
        if training:
            model.backward_sample(dlogits / n)
    return total / n


def _test_metrics(
    model: ComplaintModel, test_reviews: list[ChunkedReview]
) -> tuple[float, float, float]:
    golds = []
    preds = []
    for review in test_reviews:
        text = review.text_sequence()
        image = review.image_sequence()
        logits = model.forward_sample(text.data, image.data, text.mask, training=False)
        golds.append(review.gold_label)
        preds.append(predict_labels(logits))
    report = metrics.evaluate_pairs(golds, preds)
    exact = float(np.mean([g.states == p.states for g, p in zip(golds, preds)]))
    return metrics.hamming_loss(golds, preds), exact, report.mean_ac_micro_f1()


def train(
    manifest: DatasetManifest,
    model: ComplaintModel,
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None,
) -> TrainResult:
    """Run the epoch loop; returns the per-epoch log and writes artifacts if asked.

    The final checkpoint is the last epoch (no test-based selection; the test
    split is evaluated each epoch but never selected on). On a non-finite
    loss the model is rolled back to the last completed epoch, that state is
    checkpointed, and NumericalAbortError is raised.
    """
    train_samples = manifest.split_samples("train")
    if not train_samples:
        raise ValueError("manifest has no samples in split 'train'")
    train_reviews = [manifest.load_review(s) for s in train_samples]
    test_reviews = [manifest.load_review(s) for s in manifest.split_samples("test")]
    if any(r.gold_label is None for r in train_reviews):
        raise ValueError("every training sample needs a gold label")

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    params = model.parameters()
    groups = model.param_groups()
    states = {g: OptimizerState.for_params({k: params[k] for k in names}) for g, names in groups.items()}

    out_path = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_path / "checkpoint.mcck" if out_path else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    def snapshot() -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in params.items()}

    def restore(snap: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            v[...] = snap[k]

    last_good = snapshot()
    log: list[EpochLog] = []
    n = len(train_reviews)

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss_sum = 0.0
        aborted = False
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            reviews = [train_reviews[i] for i in idx]
            model.zero_grads()
            try:
                # Overflow in a diverging forward pass is handled below, not warned.
                with np.errstate(over="ignore", invalid="ignore"):
                    batch_loss = _batch_loss_and_grads(model, reviews, training=True, rng=dropout_rng)
            except NonFiniteError:
                batch_loss = float("nan")
            if not np.isfinite(batch_loss):
                aborted = True
                break
            grads = model.gradients()
            if cfg.clip_norm is not None:
                _clip_gradients(grads, cfg.clip_norm)
            for group, names in groups.items():
                adam_step(
                    {k: params[k] for k in names},
                    {k: grads[k] for k in names},
                    states[group],
                    cfg.lr_for_group(group),
                    beta1=cfg.beta1,
                    beta2=cfg.beta2,
                    eps=cfg.eps,
                )
            epoch_loss_sum += batch_loss * len(reviews)
        if aborted:
            restore(last_good)
            if ckpt_path:
                save_checkpoint(model, ckpt_path)
            raise NumericalAbortError(
                f"non-finite loss in epoch {epoch}; rolled back to epoch {epoch - 1}"
            )
        train_loss = epoch_loss_sum / n
        if test_reviews:
            ham, exact, ac_micro = _test_metrics(model, test_reviews)
            row = EpochLog(epoch, train_loss, ham, exact, ac_micro)
        else:
            row = EpochLog(epoch, train_loss)
        log.append(row)
        logger.info("epoch %d: train_loss=%.6f", epoch, train_loss)
        last_good = snapshot()

    if ckpt_path:
        save_checkpoint(model, ckpt_path)
        write_loss_log(log, out_path / "loss.csv")
    return TrainResult(log=log, checkpoint_path=ckpt_path)


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Max relative error per parameter group, plus per-parameter detail."""

    per_group: dict[str, float]
    per_param: dict[str, float]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_group.values())

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def failures(self) -> list[str]:
        return [k for k, v in self.per_param.items() if v >= self.tolerance]


def _gradcheck_batch(model: ComplaintModel, dim: int, chunk_counts, seed: int):
    rng = np.random.default_rng(seed)
    samples = []
    for cs in chunk_counts:
        text = rng.normal(size=(cs, dim))
        image = rng.normal(size=(cs, dim))
        gold = rng.integers(0, 3, size=5)
        samples.append((text, image, gold))
    return samples


def gradcheck(
    model: ComplaintModel,
    seed: int = 0,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    chunk_counts: tuple[int, ...] = (3, 2),
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences at 64-bit.

    Builds a tiny random batch (mixed lengths exercise the padding mask),
    computes the batch-mean multitask loss, and checks every parameter entry.
    Relative error uses a small floor so near-zero true gradients do not
    inflate the ratio past finite-difference resolution.
    """
    from .data_model import AspectLabelVector

    dim = model.cfg.dim
    samples = _gradcheck_batch(model, dim, chunk_counts, seed)
    max_cs = max(cs for cs in chunk_counts)

    def padded(arr, cs):
        out = np.zeros((max_cs, dim))
        out[:cs] = arr
        return out

    batch = [
        (
            padded(text, text.shape[0]),
            padded(image, image.shape[0]),
            np.arange(max_cs) < text.shape[0],
            AspectLabelVector.from_sequence(gold),
        )
        for text, image, gold in samples
    ]

    def batch_loss() -> float:
        total = 0.0
        for text, image, mask, gold in batch:
            logits = model.forward_sample(text, image, mask, training=False)
            loss, _ = multitask_loss_grad(logits, gold)
            total += loss
        return total / len(batch)

    model.zero_grads()
    for text, image, mask, gold in batch:
        logits = model.forward_sample(text, image, mask, training=False)
        _, dlogits = multitask_loss_grad(logits, gold)
        model.backward_sample(dlogits / len(batch))
    analytic = {k: v.copy() for k, v in model.gradients().items()}

    params = model.parameters()
    per_param: dict[str, float] = {}
    floor = 1e-6
    for name, p in params.items():
        worst = 0.0
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = batch_loss()
            flat[i] = orig - h
            loss_minus = batch_loss()
            flat[i] = orig
            fd = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(abs(fd), abs(a_flat[i]), floor)
            worst = max(worst, abs(fd - a_flat[i]) / denom)
        per_param[name] = worst

    groups = model.param_groups()
    per_group = {
        g: max(per_param[name] for name in names) for g, names in groups.items()
    }
    return GradCheckReport(per_group=per_group, per_param=per_param, tolerance=tolerance)
