"""Training protocol: step-decay Adam over augmented mini-batches."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, augment
from .losses import total_loss
from .model import FLDNet, ModelConfig
from .optim import Adam
from .tensor import NonFiniteError, Tensor, no_grad, reset_tape

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    image_size: int = 64
    lr: float = 1e-4
    lr_decay: float = 10.0
    decay_every: int = 50
    epochs: int = 200
    batch_size: int = 4
    augment: bool = True
    hflip: float = 0.5
    vflip: float = 0.5
    brightness_lo: float = 0.7
    brightness_hi: float = 1.3
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.image_size % 32:
            raise ValueError(f"train.image_size={self.image_size}: extent must be a multiple of 32")
        if self.lr <= 0:
            raise ValueError("train.lr must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_every < 1:
            raise ValueError("train.batch_size and train.decay_every must be >= 1, train.epochs >= 0")

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.hflip, self.vflip, self.brightness_lo, self.brightness_hi)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Base rate divided by ``lr_decay`` once per ``decay_every`` epochs."""
    return config.lr / config.lr_decay ** (epoch // config.decay_every)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for weight init, shuffling and augmentation."""
    init, shuffle, aug = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init),
            "shuffle": np.random.default_rng(shuffle),
            "augment": np.random.default_rng(aug)}


@dataclass
class LossRecord:
    step: int
    epoch: int
    lr: float
    loss: float


@dataclass
class Trainer:
    """Everything needed to continue a run bit-exactly from an epoch boundary."""

    config: TrainConfig
    model_config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        rngs = rng_streams(self.config.seed)
        self.model = FLDNet(self.model_config, rngs["init"])
        self.optimizer = Adam(self.model.parameters())
        self.shuffle_rng = rngs["shuffle"]
        self.augment_rng = rngs["augment"]
        self.epoch = 0
        self.step = 0
        self.history: list[LossRecord] = []

    def _batches(self, n: int):
        order = self.shuffle_rng.permutation(n)
        bs = self.config.batch_size
        return [order[i:i + bs] for i in range(0, n, bs)]

    def run_epoch(self, dataset) -> None:
        cfg = self.config
        lr = lr_schedule(self.epoch, cfg)
        for idx in self._batches(len(dataset)):
            images, masks = [], []
            for i in idx:
                image, mask = dataset[i]
                if cfg.augment:
                    image, mask = augment(image, mask, cfg.augment_config, self.augment_rng)
                images.append(image)
                masks.append(mask)
            try:
                s3, s4 = self.model(Tensor(np.stack(images)))
                loss = total_loss(Tensor(np.stack(masks)), s3, s4)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss")
                loss.backward()
                self.optimizer.step(lr)
            except (NonFiniteError, FloatingPointError) as exc:
                reset_tape()
                raise TrainingError(f"non-finite value at step {self.step}: {exc}") from exc
            self.history.append(LossRecord(self.step, self.epoch, lr, value))
            self.step += 1
        self.epoch += 1

    def fit(self, dataset, until_epoch: int | None = None, on_epoch=None) -> list[LossRecord]:
        """Train up to ``until_epoch`` (default: ``config.epochs``)."""
        if not dataset:
            raise ValueError("cannot train on an empty dataset")
        size = self.config.image_size
        for image, _ in dataset:
            if image.shape[-2:] != (size, size):
                raise ValueError(f"image extent {image.shape[-2:]} != train.image_size {size}")
        stop = self.config.epochs if until_epoch is None else until_epoch
        while self.epoch < stop:
            self.run_epoch(dataset)
            log.info("epoch %d  lr %.3g  loss %.5f", self.epoch, self.history[-1].lr, self.history[-1].loss)
            if on_epoch is not None:
                on_epoch(self)
        return self.history


def train_loop(config: TrainConfig, dataset, model_config: ModelConfig | None = None):
    trainer = Trainer(config, model_config or ModelConfig())
    trainer.fit(dataset)
    return trainer.model, trainer.history


def infer(model: FLDNet, image, threshold: float = 0.5):
    """Binary mask and sigmoid score map for (3,H,W) or (N,3,H,W) input."""
    x = np.asarray(image)
    single = x.ndim == 3
    if single:
        x = x[None]
    with no_grad():
        s3, _ = model(Tensor(x))
    logits = s3.data.astype(np.float64)
    scores = np.where(logits >= 0, 1.0 / (1.0 + np.exp(-np.abs(logits))),
                      np.exp(-np.abs(logits)) / (1.0 + np.exp(-np.abs(logits))))
    mask = (scores >= threshold).astype(np.uint8)
    if single:
        return mask[0], scores[0]
    return mask, scores
