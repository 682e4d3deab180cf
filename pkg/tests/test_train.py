import math

import numpy as np
import pytest

from plasmodium.cnn import LayerGraph, conv, dense, dropout, flatten, maxpool
from plasmodium.dataset import DatasetSplit, LabeledImage, SplitScheme
from plasmodium.preprocess import AugmentConfig, PreprocessProfile
from plasmodium.train import (
    CallbackConfig,
    DivergenceError,
    TrainConfig,
    evaluate_model,
    image_batches,
    predict_images,
    train_model,
)

SIZE = 16
PROFILE = PreprocessProfile(target_size=(SIZE, SIZE))


def tiny_graph() -> LayerGraph:
    # batch-norm-free on purpose: with only a handful of optimizer steps the
    # BN moving statistics never converge, which makes eval-mode metrics
    # meaningless at this scale
    return LayerGraph(
        layers=[conv(8), maxpool(2), dropout(0.25), flatten(), dense(16, "relu"),
                dropout(0.5), dense(2, "softmax")],
        input_shape=(SIZE, SIZE, 3),
        name="tiny",
    )


def tiny_images(n, seed=0):
    """Separable toy task: class 1 is bright in the red channel."""
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n):
        label = i % 2
        arr = rng.integers(0, 90, (SIZE, SIZE, 3), dtype=np.uint8)
        if label:
            arr[..., 0] = rng.integers(160, 255, (SIZE, SIZE), dtype=np.uint8)
        images.append(LabeledImage.from_array(arr, label, f"mem://tiny/{i}"))
    return images


def tiny_split(n_train=24, n_val=8, n_test=8, seed=0) -> DatasetSplit:
    images = tiny_images(n_train + n_val + n_test, seed=seed)
    return DatasetSplit(
        train=images[:n_train],
        validation=images[n_train : n_train + n_val],
        test=images[n_train + n_val :],
        seed=seed,
        scheme=SplitScheme.CNN_SCHEME,
    )


class TestBatches:
    def test_batch_shapes_and_one_hot(self):
        images = tiny_images(10)
        seq = image_batches(images, PROFILE, batch_size=4)
        assert len(seq) == 3
        x, y = seq[0]
        assert x.shape == (4, SIZE, SIZE, 3) and x.dtype == np.float32
        assert y.shape == (4, 2)
        assert np.all(y.sum(axis=1) == 1.0)
        x_last, _ = seq[2]
        assert x_last.shape[0] == 2  # remainder batch

    def test_shuffle_is_per_epoch_deterministic(self):
        images = tiny_images(12)
        a = image_batches(images, PROFILE, batch_size=12, seed=5, shuffle=True)
        b = image_batches(images, PROFILE, batch_size=12, seed=5, shuffle=True)
        a.set_epoch(3)
        b.set_epoch(3)
        assert np.array_equal(a[0][0], b[0][0])
        b.set_epoch(4)
        assert not np.array_equal(a[0][0], b[0][0])

    def test_augmented_batches_reproducible(self):
        images = tiny_images(6)
        config = AugmentConfig()
        a = image_batches(images, PROFILE, batch_size=6, seed=1, augment_config=config)
        b = image_batches(images, PROFILE, batch_size=6, seed=1, augment_config=config)
        assert np.array_equal(a[0][0], b[0][0])

    def test_values_unit_range(self):
        seq = image_batches(tiny_images(4), PROFILE, batch_size=4, augment_config=AugmentConfig())
        x, _ = seq[0]
        assert x.min() >= 0.0 and x.max() <= 1.0


class TestTrainModel:
    def test_history_structure(self):
        config = TrainConfig(optimizer="sgd", learning_rate=1e-2, batch_size=8, max_epochs=2)
        _, history = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=0)
        assert len(history.epochs) <= 2
        for r in history.epochs:
            assert math.isfinite(r.train_loss) and math.isfinite(r.val_loss)
        assert history.epochs[0].epoch == 1

    def test_learns_separable_task(self):
        config = TrainConfig(optimizer="rmsprop", learning_rate=1e-3, batch_size=8, max_epochs=12)
        model, history = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=1)
        split = tiny_split()
        _, acc = evaluate_model(model, split.test, PROFILE)
        assert acc >= 0.75
        assert history.best_epoch >= 1

    def test_checkpoint_restore_property(self):
        config = TrainConfig(optimizer="rmsprop", learning_rate=5e-3, batch_size=8, max_epochs=10,
                             callbacks=CallbackConfig(early_stop_patience=3))
        model, history = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=2)
        val_loss, _ = evaluate_model(model, tiny_split().validation, PROFILE, batch_size=8)
        best = min(r.val_loss for r in history.epochs)
        assert history.best_val_loss == pytest.approx(best)
        assert val_loss == pytest.approx(best, abs=1e-5)

    def test_lr_trace_under_forced_stagnation(self):
        # lr so small weights never change: val loss is exactly constant, so
        # the monitored metric improves only at epoch 1. The recorded lr
        # trace is then fully determined by the patience arithmetic.
        lr0 = 1e-30
        config = TrainConfig(
            optimizer="sgd",
            learning_rate=lr0,
            batch_size=8,
            max_epochs=7,
            callbacks=CallbackConfig(early_stop_patience=6, lr_reduce_factor=0.5, lr_reduce_patience=2),
        )
        _, history = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=3)
        lrs = [r.lr for r in history.epochs]
        assert lrs == [lr0, lr0, lr0, lr0 / 2, lr0 / 2, lr0 / 4, lr0 / 4]
        assert history.best_epoch == 1
        assert history.stopped_early
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_eval_deterministic_dropout_off(self):
        config = TrainConfig(optimizer="sgd", learning_rate=1e-2, batch_size=8, max_epochs=1)
        model, _ = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=4)
        split = tiny_split()
        a = predict_images(model, split.test, PROFILE)
        b = predict_images(model, split.test, PROFILE)
        assert np.array_equal(a, b)

    def test_profile_mismatch_rejected(self):
        config = TrainConfig(max_epochs=1)
        with pytest.raises(ValueError):
            train_model(tiny_graph(), tiny_split(), PreprocessProfile((32, 32)), config)

    def test_empty_validation_rejected(self):
        split = tiny_split(n_val=0)
        with pytest.raises(ValueError):
            train_model(tiny_graph(), split, PROFILE, TrainConfig(max_epochs=1))

    def test_divergence_detected(self):
        config = TrainConfig(optimizer="sgd", learning_rate=1e18, batch_size=8, max_epochs=6)
        with pytest.raises(DivergenceError):
            train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=5)

    def test_overfit_one_batch_tiny(self):
        # quick version of the memorization oracle on the tiny model
        images = tiny_images(16, seed=6)
        split = DatasetSplit(train=images, validation=images[:8], test=images[8:],
                             seed=0, scheme=SplitScheme.CNN_SCHEME)
        config = TrainConfig(
            optimizer="rmsprop", learning_rate=1e-3, batch_size=16, max_epochs=60,
            callbacks=CallbackConfig(early_stop_patience=1000),
        )
        _, history = train_model(tiny_graph(), split, PROFILE, config, seed=6)
        assert max(r.train_acc for r in history.epochs) == 1.0


class TestConfigs:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="adam")
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            CallbackConfig(lr_reduce_factor=1.0)
        with pytest.raises(ValueError):
            CallbackConfig(early_stop_patience=0)

    def test_history_csv(self, tmp_path):
        config = TrainConfig(optimizer="sgd", learning_rate=1e-2, batch_size=8, max_epochs=2)
        _, history = train_model(tiny_graph(), tiny_split(), PROFILE, config, seed=7)
        path = tmp_path / "history.csv"
        history.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,lr,train_loss,train_acc,val_loss,val_acc"
        assert len(lines) == len(history.epochs) + 1
