"""Minibatch training loop with early stopping, best-weight checkpointing
and learning-rate reduction on plateau.

The loop is written out longhand (one keras fit call per epoch) so the
callback semantics are exact and testable: the monitored metric is
validation loss, improvement means strictly smaller, the learning rate is
multiplied by the reduction factor after ``lr_reduce_patience`` stagnant
epochs, training halts after ``early_stop_patience`` stagnant epochs, and
the best epoch's weights are always restored at the end.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import LabeledImage
from .preprocess import AugmentConfig, PreprocessProfile, augment, resize_bilinear, rng_for_sample, standardize

# Keep the decoded-image cache comfortably inside a small machine's RAM;
# larger datasets fall back to per-batch decoding.
PRELOAD_BUDGET_BYTES = int(1.5e9)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class CallbackConfig:
    early_stop_patience: int = 5
    checkpoint_on: str = "val_loss"
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 3

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.lr_reduce_patience < 1:
            raise ValueError("patiences must be >= 1")
        if not 0.0 < self.lr_reduce_factor < 1.0:
            raise ValueError("lr_reduce_factor must be in (0, 1)")
        if self.checkpoint_on != "val_loss":
            raise ValueError("only validation loss is supported as the monitored metric")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "rmsprop"  # rmsprop | sgd
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    momentum: float = 0.9  # sgd only
    clipnorm: float | None = 1.0  # global-norm gradient clipping; None disables
    loss: str = "categorical_crossentropy"
    callbacks: CallbackConfig = field(default_factory=CallbackConfig)

    def __post_init__(self):
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ValueError(f"optimizer must be rmsprop or sgd, got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.clipnorm is not None and self.clipnorm <= 0:
            raise ValueError("clipnorm must be positive or None")

    def to_json(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "momentum": self.momentum,
            "clipnorm": self.clipnorm,
            "loss": self.loss,
            "callbacks": vars(self.callbacks),
        }


SGD_CONFIG = TrainConfig(optimizer="sgd", learning_rate=1e-2)
RMSPROP_CONFIG = TrainConfig(optimizer="rmsprop", learning_rate=1e-3)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch - 1].val_loss

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("epoch,lr,train_loss,train_acc,val_loss,val_acc\n")
            for r in self.epochs:
                f.write(
                    f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.train_acc!r},{r.val_loss!r},{r.val_acc!r}\n"
                )


def _decoded_cache(images: list[LabeledImage], profile: PreprocessProfile) -> np.ndarray | None:
    """Decode and resize every image once, stored as uint8 to halve memory.
    Returns None when the cache would not fit the budget."""
    th, tw = profile.target_size
    if len(images) * th * tw * 3 > PRELOAD_BUDGET_BYTES:
        return None
    cache = np.empty((len(images), th, tw, 3), dtype=np.uint8)
    for i, im in enumerate(images):
        cache[i] = np.clip(resize_bilinear(im.pixels, profile.target_size) + 0.5, 0, 255).astype(np.uint8)
    return cache


def _make_batches_class():
    # keras import is deferred so the pure-numpy modules stay importable
    # without a backend.
    import keras

    class ImageBatches(keras.utils.PyDataset):
        """Ordered batch source over labeled images. Standardizes (and for
        training, augments) per batch; per-sample augmentation streams are
        keyed by (seed, epoch, sample index) so worker parallelism cannot
        change the result."""

        def __init__(
            self,
            images: list[LabeledImage],
            profile: PreprocessProfile,
            batch_size: int,
            seed: int = 0,
            shuffle: bool = False,
            augment_config: AugmentConfig | None = None,
            **kwargs,
        ):
            super().__init__(**kwargs)
            self.images = images
            self.profile = profile
            self.batch_size = batch_size
            self.seed = seed
            self.shuffle = shuffle
            self.augment_config = augment_config
            self.epoch = 0
            self._cache = _decoded_cache(images, profile)
            self._order = np.arange(len(images))
            self.set_epoch(0)

        def set_epoch(self, epoch: int) -> None:
            self.epoch = epoch
            if self.shuffle:
                rng = np.random.default_rng([self.seed, epoch])
                self._order = rng.permutation(len(self.images))

        def __len__(self) -> int:
            return math.ceil(len(self.images) / self.batch_size)

        def _standardized(self, index: int) -> np.ndarray:
            if self._cache is not None:
                arr = self._cache[index].astype(np.float32)
                return arr / np.float32(255.0) if self.profile.normalize else arr
            return standardize(self.images[index], self.profile)

        def __getitem__(self, batch_index: int):
            lo = batch_index * self.batch_size
            idx = self._order[lo : lo + self.batch_size]
            xs = np.empty((len(idx), *self.profile.target_size, 3), dtype=np.float32)
            ys = np.zeros((len(idx), 2), dtype=np.float32)
            for row, i in enumerate(idx):
                x = self._standardized(int(i))
                if self.augment_config is not None:
                    x = augment(x, self.augment_config, rng_for_sample(self.seed, self.epoch, int(i)))
                xs[row] = x
                ys[row, self.images[int(i)].label] = 1.0
            return xs, ys

    return ImageBatches


_BATCHES_CLASS = None


def image_batches(*args, **kwargs):
    global _BATCHES_CLASS
    if _BATCHES_CLASS is None:
        _BATCHES_CLASS = _make_batches_class()
    return _BATCHES_CLASS(*args, **kwargs)


def _build_optimizer(config: TrainConfig):
    import keras

    kwargs = {"learning_rate": config.learning_rate}
    if config.clipnorm is not None:
        kwargs["clipnorm"] = config.clipnorm
    if config.optimizer == "sgd":
        return keras.optimizers.SGD(momentum=config.momentum, **kwargs)
    return keras.optimizers.RMSprop(**kwargs)


def train_model(
    model_or_graph,
    split,
    profile: PreprocessProfile,
    config: TrainConfig,
    seed: int = 0,
    verbose: bool = False,
):
    """Train under the given config and return (model, TrainingHistory).

    ``model_or_graph`` is a keras model or a LayerGraph (lowered first).
    Training is deterministic given the seed, up to backend floating-point
    reordering. Raises DivergenceError on a non-finite loss.
    """
    import keras

    from .cnn import LayerGraph, to_keras

    keras.utils.set_random_seed(seed)
    model = to_keras(model_or_graph) if isinstance(model_or_graph, LayerGraph) else model_or_graph
    if (model.input_shape[1], model.input_shape[2]) != tuple(profile.target_size):
        raise ValueError(
            f"profile target_size {profile.target_size} does not match model input {model.input_shape[1:3]}"
        )
    if not split.train or not split.validation:
        raise ValueError("training needs non-empty train and validation sets")

    cb = config.callbacks
    model.compile(optimizer=_build_optimizer(config), loss=config.loss, metrics=["accuracy"])

    train_seq = image_batches(
        split.train,
        profile,
        batch_size=config.batch_size,
        seed=seed,
        shuffle=True,
        augment_config=profile.augment,
    )
    val_seq = image_batches(split.validation, profile, batch_size=config.batch_size)

    history = TrainingHistory()
    lr = config.learning_rate
    best_loss = math.inf
    best_weights = None
    stagnant = 0  # epochs since the monitored metric last improved

    for epoch in range(1, config.max_epochs + 1):
        train_seq.set_epoch(epoch)
        fit = model.fit(train_seq, epochs=1, verbose=0, shuffle=False)
        train_loss = float(fit.history["loss"][0])
        train_acc = float(fit.history["accuracy"][0])
        val_loss, val_acc = (float(v) for v in model.evaluate(val_seq, verbose=0))
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}: train={train_loss}, val={val_loss} "
                f"(lr={lr}, optimizer={config.optimizer})"
            )

        history.epochs.append(
            EpochRecord(epoch=epoch, lr=lr, train_loss=train_loss, train_acc=train_acc,
                        val_loss=val_loss, val_acc=val_acc)
        )
        if verbose:
            print(
                f"epoch {epoch:3d}  lr {lr:.2e}  loss {train_loss:.4f}  acc {train_acc:.4f}"
                f"  val_loss {val_loss:.4f}  val_acc {val_acc:.4f}"
            )

        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = model.get_weights()
            history.best_epoch = epoch
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= cb.early_stop_patience:
                history.stopped_early = True
                break
            if stagnant % cb.lr_reduce_patience == 0:
                lr *= cb.lr_reduce_factor
                model.optimizer.learning_rate.assign(lr)

    if best_weights is not None:
        model.set_weights(best_weights)
    return model, history


def evaluate_model(model, images: list[LabeledImage], profile: PreprocessProfile, batch_size: int = 64):
    """(loss, accuracy) on a held-out set, standardize only."""
    seq = image_batches(images, profile, batch_size=batch_size)
    loss, acc = (float(v) for v in model.evaluate(seq, verbose=0))
    return loss, acc


def predict_images(
    model, images: list[LabeledImage], profile: PreprocessProfile, batch_size: int = 64
) -> np.ndarray:
    """Class probabilities for each image under the exact standardize
    contract (no caching shortcuts)."""
    out = np.empty((len(images), 2), dtype=np.float32)
    for lo in range(0, len(images), batch_size):
        chunk = images[lo : lo + batch_size]
        xs = np.stack([standardize(im, profile) for im in chunk])
        out[lo : lo + len(chunk)] = model.predict(xs, verbose=0)
    return out
