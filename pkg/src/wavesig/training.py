"""Triplet sampling, triplet loss, Adam, and the training loop.

Published hyperparameters are the defaults: learning rate 0.0005, batch
size 32, 100 epochs. The margin, optimizer moments, and negative-sampling
mix are documented config choices. Triplets are resampled fresh every
epoch with no hard mining, and the whole loop is deterministic for a
fixed seed in single-threaded mode.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FORGED, SignatureCatalog, SignatureImage
from .model import Embedding, ModelConfig, ModelWeights, embed_features, init_model, save_weights
from .scattering import FilterBank, build_filter_bank, scatter
from .tensor import Tensor, backward, relu

__all__ = [
    "Triplet",
    "TrainConfig",
    "EpochStats",
    "TrainReport",
    "AdamState",
    "triplet_loss",
    "sample_triplets",
    "adam_step",
    "train",
]


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive genuine pair plus a negative for the same anchor."""

    anchor: SignatureImage
    positive: SignatureImage
    negative: SignatureImage

    def __post_init__(self):
        if self.anchor.writer_id != self.positive.writer_id:
            raise ValueError("anchor and positive must come from the same writer")
        if self.anchor is self.positive:
            raise ValueError("anchor and positive must be distinct images")
        if self.anchor.label != "genuine" or self.positive.label != "genuine":
            raise ValueError("anchor and positive must be genuine signatures")
        if self.negative.writer_id == self.anchor.writer_id and self.negative.label == "genuine":
            raise ValueError("negative may never be a genuine signature of the anchor's writer")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 32
    epochs: int = 100
    margin: float = 0.5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    negative_mix: float = 0.5
    triplets_per_epoch: int = 128
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.triplets_per_epoch < 1:
            raise ValueError("batch_size and triplets_per_epoch must be >= 1, epochs >= 0")
        if not 0.0 <= self.negative_mix <= 1.0:
            raise ValueError("negative_mix must lie in [0, 1]")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    active_fraction: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    wall_time: float
    checkpoint_path: str | None

    def log_lines(self) -> list[str]:
        return [
            f"epoch={e.epoch} mean_loss={e.mean_loss:.6f} active_fraction={e.active_fraction:.4f}"
            for e in self.epochs
        ]


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Embedding):
        return Tensor(x.values)
    return Tensor(np.asarray(x))


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """max(d(a,p) - d(a,n) + margin, 0) on raw Euclidean embedding distance.

    Accepts graph tensors (training) or Embeddings (analysis). The loss is
    differentiable wherever it is positive and has exactly zero gradient
    on the floor.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    a, p, n = _as_tensor(anchor), _as_tensor(positive), _as_tensor(negative)
    d_ap = (a - p).square().sum().sqrt()
    d_an = (a - n).square().sum().sqrt()
    return relu(d_ap - d_an + margin)


def sample_triplets(
    catalog: SignatureCatalog,
    count: int,
    seed: int,
    negative_mix: float = 0.5,
    split: str = "train",
) -> list[Triplet]:
    """Draw `count` legal triplets from one split, deterministically.

    Writers with fewer than two genuine signatures are skipped as anchors.
    Negatives are the anchor writer's forgeries with probability
    `negative_mix`, otherwise another writer's genuine signature; when the
    drawn kind is unavailable for that writer the other kind is used.
    """
    writer_ids = catalog.writer_ids(split)
    eligible = [w for w in writer_ids if len(catalog.writers[w].genuine) >= 2]
    if not eligible:
        raise ValueError(f"no writer in split {split!r} has two genuine signatures")
    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    for _ in range(count):
        wid = eligible[int(rng.integers(len(eligible)))]
        entry = catalog.writers[wid]
        ai, pi = rng.choice(len(entry.genuine), size=2, replace=False)
        anchor, positive = entry.genuine[int(ai)], entry.genuine[int(pi)]

        other_writers = [
            w for w in writer_ids if w != wid and catalog.writers[w].genuine
        ]
        want_forgery = rng.random() < negative_mix
        if want_forgery and not entry.forged:
            want_forgery = False
        if not want_forgery and not other_writers:
            want_forgery = True
        if want_forgery:
            if not entry.forged:
                raise ValueError(
                    f"writer {wid} has no forgeries and no other writers exist; "
                    "cannot draw a negative"
                )
            negative = entry.forged[int(rng.integers(len(entry.forged)))]
        else:
            ow = other_writers[int(rng.integers(len(other_writers)))]
            pool = catalog.writers[ow].genuine
            negative = pool[int(rng.integers(len(pool)))]
        triplets.append(Triplet(anchor, positive, negative))
    return triplets


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_weights(cls, weights: ModelWeights) -> "AdamState":
        state = cls()
        for p in weights.parameters():
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def adam_step(
    weights: ModelWeights,
    gradients: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place on the weights."""
    state.step += 1
    t = state.step
    b1, b2, eps = config.beta1, config.beta2, config.adam_epsilon
    for p in weights.parameters():
        g = gradients.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.tensor.data -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.data.dtype
        )


def _scatter_features(
    images: list[SignatureImage], bank: FilterBank, threads: int
) -> dict[int, np.ndarray]:
    def one(img: SignatureImage) -> np.ndarray:
        return scatter(img.pixels, bank).coefficients

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            coeffs = list(pool.map(one, images))
    else:
        coeffs = [one(img) for img in images]
    return {id(img): c for img, c in zip(images, coeffs)}


def train(
    catalog: SignatureCatalog,
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_path=None,
    bank: FilterBank | None = None,
    log=None,
) -> tuple[ModelWeights, TrainReport]:
    """Fit the embedding branch on the catalog's train split.

    Each step embeds anchor/positive/negative with the shared weights,
    averages the triplet loss over the batch, backpropagates, and applies
    one Adam update. Scattering features are precomputed once per image
    since that stage has no trainable parameters.
    """
    start = time.time()
    train_images = catalog.images("train")
    if not train_images:
        raise ValueError("catalog has no images in the train split")
    if log is None:
        log = lambda line: None

    weights = init_model(model_config, train_config.seed)
    if bank is None:
        bank = build_filter_bank(model_config.scattering)
    features = _scatter_features(train_images, bank, train_config.threads)

    epoch_seeds = np.random.default_rng(train_config.seed).integers(
        0, 2**63, size=max(train_config.epochs, 1)
    )
    state = AdamState.for_weights(weights)
    stats: list[EpochStats] = []
    inv_margin_floor = 0.0  # loss values below this count as inactive

    for epoch in range(train_config.epochs):
        triplets = sample_triplets(
            catalog,
            count=train_config.triplets_per_epoch,
            seed=int(epoch_seeds[epoch]),
            negative_mix=train_config.negative_mix,
        )
        losses: list[float] = []
        for lo in range(0, len(triplets), train_config.batch_size):
            batch = triplets[lo : lo + train_config.batch_size]
            inv_b = 1.0 / len(batch)
            for i, trip in enumerate(batch):
                ea = embed_features(Tensor(features[id(trip.anchor)]), weights)
                ep = embed_features(Tensor(features[id(trip.positive)]), weights)
                en = embed_features(Tensor(features[id(trip.negative)]), weights)
                raw = triplet_loss(ea, ep, en, train_config.margin)
                backward(raw * inv_b, accumulate=i > 0)
                losses.append(raw.item())
            grads = {
                p.name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for p in weights.parameters()
            }
            adam_step(weights, grads, state, train_config)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise FloatingPointError(
                f"non-finite mean loss {mean_loss} at epoch {epoch + 1}; aborting"
            )
        active = float(np.mean([1.0 if l > inv_margin_floor else 0.0 for l in losses]))
        record = EpochStats(epoch=epoch + 1, mean_loss=mean_loss, active_fraction=active)
        stats.append(record)
        log(
            f"epoch={record.epoch} mean_loss={record.mean_loss:.6f} "
            f"active_fraction={record.active_fraction:.4f}"
        )

    if checkpoint_path is not None:
        save_weights(checkpoint_path, weights)
    report = TrainReport(
        epochs=stats,
        wall_time=time.time() - start,
        checkpoint_path=str(checkpoint_path) if checkpoint_path is not None else None,
    )
    return weights, report
