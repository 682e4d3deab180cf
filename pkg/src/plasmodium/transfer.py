"""Transfer learning over three pretrained backbones with the freeze
schedule treated as a first-class, inspectable object.

Three regimes: train only a new head over a frozen backbone, a two-phase
schedule that then unfreezes the last two backbone blocks, and full
fine-tuning of every layer from pretrained initialization. "Block" is made
concrete per backbone (VGG's conv blocks, the inception module groups, the
Xception residual blocks) by assigning every layer to a contiguous
index range, so trainable masks can be asserted layer by layer.

Pretrained snapshots are read from a local cache (``PLASMODIUM_WEIGHTS_DIR``
or the ``weights_dir`` argument) as ``<name>_notop.weights.h5``; there is no
download path in this package.
"""

from __future__ import annotations

import enum
import hashlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import PreprocessProfile, SMALL_IMAGE_PROFILE
from .train import SGD_CONFIG, TrainConfig, TrainingHistory, predict_images, train_model

WEIGHTS_DIR_ENV = "PLASMODIUM_WEIGHTS_DIR"

HEAD_DENSE_UNITS = 256
HEAD_DROPOUT = 0.5


class Backbone(enum.Enum):
    VGG19 = "vgg19"
    INCEPTION_V3 = "inceptionv3"
    XCEPTION = "xception"

    @classmethod
    def parse(cls, text: str) -> "Backbone":
        for b in cls:
            if b.value == text.lower() or b.name.lower() == text.lower():
                return b
        raise ValueError(f"unknown backbone {text!r}")


class Regime(enum.Enum):
    FROZEN_HEAD_ONLY = "frozen"
    INCREMENTAL_UNFREEZE = "incremental"
    FULL_FINE_TUNE = "full"

    @classmethod
    def parse(cls, text: str) -> "Regime":
        for r in cls:
            if r.value == text.lower() or r.name.lower() == text.lower():
                return r
        raise ValueError(f"unknown regime {text!r}")


class PretrainedWeightsError(RuntimeError):
    """The requested pretrained snapshot is not in the local cache."""


def snapshot_path(backbone: Backbone, weights_dir: str | os.PathLike | None = None) -> Path:
    base = weights_dir or os.environ.get(WEIGHTS_DIR_ENV) or (Path.home() / ".cache" / "plasmodium")
    return Path(base) / f"{backbone.value}_notop.weights.h5"


@dataclass(frozen=True)
class BackboneSpec:
    name: Backbone
    weights: str  # "pretrained-cache" or "random"
    block_boundaries: tuple[tuple[int, int], ...]  # inclusive layer-index ranges
    block_names: tuple[str, ...]

    def __post_init__(self):
        expect = 0
        for lo, hi in self.block_boundaries:
            if lo != expect or hi < lo:
                raise ValueError("block boundaries must tile the backbone layers in order")
            expect = hi + 1

    @property
    def layer_count(self) -> int:
        return self.block_boundaries[-1][1] + 1

    def last_two_blocks(self) -> tuple[tuple[int, int], tuple[int, int]]:
        if len(self.block_boundaries) < 2:
            raise ValueError(f"{self.name.value} has fewer than two blocks")
        return self.block_boundaries[-2], self.block_boundaries[-1]


def _block_ids(backbone: Backbone, layers) -> list[int]:
    """Assign every backbone layer to a block id, in topological order.

    VGG19 and Xception carry ``blockN_`` name prefixes; InceptionV3 layers
    belong to the next ``mixedK`` merge at or after them. Unprefixed layers
    (input, residual adds, shortcut convs) inherit the previous layer's
    block.
    """
    names = [layer.name for layer in layers]
    ids: list[int] = []
    if backbone is Backbone.INCEPTION_V3:
        next_mixed = [0] * len(names)
        current = 0
        for i in range(len(names) - 1, -1, -1):
            m = re.fullmatch(r"mixed(\d+)", names[i])
            if m:
                current = int(m.group(1)) + 1
            next_mixed[i] = current
        # ids count down from the end; renumber to start at 0
        ids = next_mixed
    else:
        current = 1
        for name in names:
            m = re.match(r"block(\d+)_", name)
            if m:
                current = int(m.group(1))
            ids.append(current)
    base = ids[0]
    out = [i - base for i in ids]
    if any(b < a for a, b in zip(out, out[1:])):
        raise ValueError(f"{backbone.value} layer order does not yield contiguous blocks")
    return out


def _boundaries_from_ids(ids: list[int]) -> tuple[tuple[tuple[int, int], ...], tuple[str, ...]]:
    ranges: list[tuple[int, int]] = []
    labels: list[str] = []
    start = 0
    for i in range(1, len(ids) + 1):
        if i == len(ids) or ids[i] != ids[start]:
            ranges.append((start, i - 1))
            labels.append(f"block{ids[start]}")
            start = i
    return tuple(ranges), tuple(labels)


@dataclass
class TransferModel:
    """A backbone with its classifier head replaced by the project head
    (global average pool -> dense 256 -> dropout -> softmax pair)."""

    model: object  # keras.Model
    spec: BackboneSpec
    backbone_layer_count: int  # model.layers[:count] are backbone layers

    @property
    def head_indices(self) -> range:
        return range(self.backbone_layer_count, len(self.model.layers))

    @property
    def backbone_indices(self) -> range:
        return range(self.backbone_layer_count)

    def layer_table(self) -> list[tuple[str, str, int, bool]]:
        """(name, kind, parameter count, trainable) per layer."""
        return [
            (layer.name, type(layer).__name__, layer.count_params(), bool(layer.trainable))
            for layer in self.model.layers
        ]

    def conv_layer_count(self) -> int:
        """Weighted convolution layers retained from the backbone."""
        kinds = ("Conv2D", "SeparableConv2D", "DepthwiseConv2D")
        return sum(
            1
            for layer in self.model.layers[: self.backbone_layer_count]
            if type(layer).__name__ in kinds
        )

    def head_param_count(self) -> int:
        return sum(self.model.layers[i].count_params() for i in self.head_indices)

    def total_param_count(self) -> int:
        return int(self.model.count_params())

    def optimizable_param_count(self) -> int:
        """Every parameter an optimizer could touch: the full count minus
        batch-norm moving statistics, which are running buffers and never
        gradient-trained under any mask."""
        buffers = sum(
            int(np.prod(w.shape))
            for layer in self.model.layers
            for w in layer.weights
            if w.path.rsplit("/", 1)[-1].startswith("moving_")
        )
        return self.total_param_count() - buffers


def _build_backbone(backbone: Backbone, input_shape):
    import keras

    builders = {
        Backbone.VGG19: keras.applications.VGG19,
        Backbone.INCEPTION_V3: keras.applications.InceptionV3,
        Backbone.XCEPTION: keras.applications.Xception,
    }
    return builders[backbone](weights=None, include_top=False, input_shape=input_shape)


def build_transfer_model(
    backbone: Backbone | str,
    pretrained: bool = True,
    weights_dir: str | os.PathLike | None = None,
    profile: PreprocessProfile = SMALL_IMAGE_PROFILE,
) -> TransferModel:
    """Instantiate the headless backbone plus the project head.

    With ``pretrained`` the backbone weights load from the local snapshot
    cache; a missing snapshot raises PretrainedWeightsError naming the
    expected file. ``pretrained=False`` gives random initialization (useful
    for structural tests; the published regimes always start pretrained).
    """
    import keras
    from keras import layers as kl

    backbone = Backbone.parse(backbone) if isinstance(backbone, str) else backbone
    input_shape = (*profile.target_size, 3)
    base = _build_backbone(backbone, input_shape)
    if pretrained:
        path = snapshot_path(backbone, weights_dir)
        if not path.is_file():
            raise PretrainedWeightsError(
                f"pretrained snapshot for {backbone.value} not found at {path}; "
                f"set {WEIGHTS_DIR_ENV} to a directory containing "
                f"{path.name} (save one with save_backbone_snapshot on a machine "
                f"with the published weights available)"
            )
        base.load_weights(path)

    x = kl.GlobalAveragePooling2D(name="head_pool")(base.output)
    x = kl.Dense(HEAD_DENSE_UNITS, activation="relu", kernel_initializer="he_uniform", name="head_dense")(x)
    x = kl.Dropout(HEAD_DROPOUT, name="head_dropout")(x)
    out = kl.Dense(2, activation="softmax", name="head_predictions")(x)
    model = keras.Model(base.input, out, name=f"{backbone.value}_transfer")

    backbone_count = len(base.layers)
    ids = _block_ids(backbone, model.layers[:backbone_count])
    boundaries, labels = _boundaries_from_ids(ids)
    spec = BackboneSpec(
        name=backbone,
        weights="pretrained-cache" if pretrained else "random",
        block_boundaries=boundaries,
        block_names=labels,
    )
    return TransferModel(model=model, spec=spec, backbone_layer_count=backbone_count)


def save_backbone_snapshot(
    backbone: Backbone | str,
    weights_dir: str | os.PathLike,
    source_model=None,
    profile: PreprocessProfile = SMALL_IMAGE_PROFILE,
) -> Path:
    """Write a backbone-only snapshot into the cache layout. When
    ``source_model`` is None a freshly initialized backbone is saved (red
    herring for real use, but it gives tests a snapshot to verify the
    load/provenance path against)."""
    backbone = Backbone.parse(backbone) if isinstance(backbone, str) else backbone
    model = source_model or _build_backbone(backbone, (*profile.target_size, 3))
    path = snapshot_path(backbone, weights_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save_weights(path)
    return path


@dataclass(frozen=True)
class Phase:
    trainable_mask: tuple[bool, ...]  # one flag per model layer
    config: TrainConfig


@dataclass(frozen=True)
class RegimeSpec:
    regime: Regime
    phases: tuple[Phase, ...]


def plan_regime(
    regime: Regime | str,
    tmodel: TransferModel,
    base_config: TrainConfig = SGD_CONFIG,
) -> RegimeSpec:
    """Concrete phase masks and train configs for one regime on one model.

    Incremental unfreezing runs two phases: the head alone (up to 15
    epochs), then the head plus the last two backbone blocks at a tenth of
    the learning rate (up to 35 epochs).
    """
    regime = Regime.parse(regime) if isinstance(regime, str) else regime
    n = len(tmodel.model.layers)
    head_mask = tuple(i in tmodel.head_indices for i in range(n))

    if regime is Regime.FROZEN_HEAD_ONLY:
        return RegimeSpec(regime=regime, phases=(Phase(head_mask, base_config),))

    if regime is Regime.FULL_FINE_TUNE:
        return RegimeSpec(regime=regime, phases=(Phase(tuple([True] * n), base_config),))

    (lo1, hi1), (lo2, hi2) = tmodel.spec.last_two_blocks()
    phase2_mask = tuple(
        flag or (lo1 <= i <= hi1) or (lo2 <= i <= hi2) for i, flag in enumerate(head_mask)
    )
    from dataclasses import replace

    phase1_cfg = replace(base_config, max_epochs=min(15, base_config.max_epochs))
    phase2_cfg = replace(
        base_config,
        max_epochs=min(35, base_config.max_epochs),
        learning_rate=base_config.learning_rate / 10.0,
    )
    return RegimeSpec(
        regime=regime,
        phases=(Phase(head_mask, phase1_cfg), Phase(phase2_mask, phase2_cfg)),
    )


@dataclass
class MaskReport:
    per_layer: list[tuple[str, bool]]
    trainable_params: int
    frozen_params: int


def apply_regime(tmodel: TransferModel, spec: RegimeSpec, phase: int) -> MaskReport:
    """Set per-layer trainable flags for one phase and report the result."""
    if phase >= len(spec.phases):
        raise ValueError(f"regime {spec.regime.value} has {len(spec.phases)} phases, asked for {phase}")
    mask = spec.phases[phase].trainable_mask
    layers = tmodel.model.layers
    if len(mask) != len(layers):
        raise ValueError(
            f"trainable mask covers {len(mask)} layers but the model has {len(layers)}; "
            f"regime planned for a different backbone?"
        )
    for layer, flag in zip(layers, mask):
        layer.trainable = flag
    trainable = int(sum(int(np.prod(w.shape)) for w in tmodel.model.trainable_weights))
    total = tmodel.total_param_count()
    return MaskReport(
        per_layer=[(layer.name, bool(layer.trainable)) for layer in layers],
        trainable_params=trainable,
        frozen_params=total - trainable,
    )


def backbone_checksum(tmodel: TransferModel) -> str:
    """SHA-256 over the backbone weights in layer order; the frozen-regime
    invariant is that this survives training untouched."""
    digest = hashlib.sha256()
    for i in tmodel.backbone_indices:
        for w in tmodel.model.layers[i].weights:
            digest.update(np.ascontiguousarray(np.asarray(w), dtype=np.float32).tobytes())
    return digest.hexdigest()


@dataclass
class RegimeResult:
    model: object
    report: object  # metrics.EvaluationReport
    histories: list[TrainingHistory]
    mask_reports: list[MaskReport]
    scores: np.ndarray | None = None  # positive-class probabilities on test


def run_regime(
    tmodel: TransferModel,
    regime: Regime | str | RegimeSpec,
    split,
    profile: PreprocessProfile = SMALL_IMAGE_PROFILE,
    base_config: TrainConfig = SGD_CONFIG,
    seed: int = 0,
    verbose: bool = False,
) -> RegimeResult:
    """Execute every phase of a regime and evaluate on the test split."""
    from . import metrics

    spec = regime if isinstance(regime, RegimeSpec) else plan_regime(regime, tmodel, base_config)
    histories: list[TrainingHistory] = []
    mask_reports: list[MaskReport] = []
    for phase_index, phase in enumerate(spec.phases):
        mask_reports.append(apply_regime(tmodel, spec, phase_index))
        _, history = train_model(
            tmodel.model, split, profile, phase.config, seed=seed + phase_index, verbose=verbose
        )
        histories.append(history)

    probs = predict_images(tmodel.model, split.test, profile)
    truths = [im.label for im in split.test]
    report = metrics.evaluate(truths, probs.argmax(axis=1), scores=probs[:, 1])
    return RegimeResult(
        model=tmodel.model,
        report=report,
        histories=histories,
        mask_reports=mask_reports,
        scores=probs[:, 1],
    )
