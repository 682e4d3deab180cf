"""Declarative builders for the two hand-specified deep CNNs.

Model A stacks three conv/batch-norm/pool/dropout blocks with growing
filter counts in front of a 256-unit dense head and trains under RMSprop.
Model B works on 224x224 inputs, opens with a conv -> zero-pad -> conv ->
conv group and deepens through 64- and 128-filter stages before the same
dense head. Graphs are plain descriptor lists validated by shape
propagation, then lowered to keras functional models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DROPOUT_CONV = 0.25
DROPOUT_DENSE = 0.5


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | zeropad | batchnorm | maxpool | dropout | flatten | dense | gap | activation
    filters: int | None = None
    kernel: int | None = None
    units: int | None = None
    activation: str | None = None
    padding: str = "valid"
    rate: float | None = None
    pool: int | None = None
    pad: int | None = None


def conv(filters: int, kernel: int = 3, activation: str = "relu", padding: str = "valid") -> LayerSpec:
    return LayerSpec(kind="conv", filters=filters, kernel=kernel, activation=activation, padding=padding)


def zeropad(pad: int = 1) -> LayerSpec:
    return LayerSpec(kind="zeropad", pad=pad)


def batchnorm() -> LayerSpec:
    return LayerSpec(kind="batchnorm")


def maxpool(pool: int = 2) -> LayerSpec:
    return LayerSpec(kind="maxpool", pool=pool)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(kind="dropout", rate=rate)


def flatten() -> LayerSpec:
    return LayerSpec(kind="flatten")


def dense(units: int, activation: str) -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=activation)


@dataclass
class LayerGraph:
    """Sequential layer descriptors plus the declared input/output shape.
    ``propagate_shapes`` walks the chain and raises on any incompatibility,
    so an invalid graph fails before any backend work happens."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    output_units: int = 2
    name: str = "cnn"

    def __post_init__(self):
        shapes = self.propagate_shapes()
        last = self.layers[-1]
        if last.kind != "dense" or last.units != self.output_units or last.activation != "softmax":
            raise ValueError("final layer must be a softmax dense layer of output_units")
        if shapes[-1] != (self.output_units,):
            raise ValueError(f"output shape {shapes[-1]} != ({self.output_units},)")

    def propagate_shapes(self) -> list[tuple]:
        """Shape after each layer, starting from input_shape."""
        shape: tuple = self.input_shape
        out = []
        for i, spec in enumerate(self.layers):
            shape = _next_shape(shape, spec, position=i)
            out.append(shape)
        return out


def _next_shape(shape: tuple, spec: LayerSpec, position: int) -> tuple:
    def need_spatial():
        if len(shape) != 3:
            raise ValueError(f"layer {position} ({spec.kind}) needs a spatial input, got {shape}")

    if spec.kind == "conv":
        need_spatial()
        h, w, _ = shape
        if spec.padding == "same":
            return (h, w, spec.filters)
        nh, nw = h - spec.kernel + 1, w - spec.kernel + 1
        if nh < 1 or nw < 1:
            raise ValueError(f"layer {position}: conv kernel {spec.kernel} too large for {shape}")
        return (nh, nw, spec.filters)
    if spec.kind == "zeropad":
        need_spatial()
        h, w, c = shape
        return (h + 2 * spec.pad, w + 2 * spec.pad, c)
    if spec.kind == "maxpool":
        need_spatial()
        h, w, c = shape
        nh, nw = h // spec.pool, w // spec.pool
        if nh < 1 or nw < 1:
            raise ValueError(f"layer {position}: pool {spec.pool} too large for {shape}")
        return (nh, nw, c)
    if spec.kind in ("batchnorm", "dropout", "activation"):
        return shape
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    if spec.kind == "gap":
        need_spatial()
        return (shape[2],)
    if spec.kind == "dense":
        if len(shape) != 1:
            raise ValueError(f"layer {position}: dense needs a flat input, got {shape}")
        return (spec.units,)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def build_cnn_a() -> LayerGraph:
    """Three conv blocks (32/64/128 filters) each followed by batch norm,
    2x2 max pooling and dropout; dense 256 + batch norm + dropout; softmax
    pair output. Input 128x128x3."""
    layers: list[LayerSpec] = []
    for filters in (32, 64, 128):
        layers += [conv(filters), batchnorm(), maxpool(2), dropout(DROPOUT_CONV)]
    layers += [
        flatten(),
        dense(256, "relu"),
        batchnorm(),
        dropout(DROPOUT_DENSE),
        dense(2, "softmax"),
    ]
    return LayerGraph(layers=layers, input_shape=(128, 128, 3), name="cnn_a")


def build_cnn_b() -> LayerGraph:
    """The zero-padding variant on 224x224x3: conv32 -> zero-pad -> conv32
    x2 -> pool -> dropout, a 64-filter group of three convs with pool and
    dropout, a final conv128 stage, then flatten/dense-256/dropout/softmax."""
    layers: list[LayerSpec] = [
        conv(32),
        zeropad(1),
        conv(32),
        conv(32),
        maxpool(2),
        dropout(DROPOUT_CONV),
        conv(64),
        conv(64),
        conv(64),
        maxpool(2),
        dropout(DROPOUT_CONV),
        conv(128),
        maxpool(2),
        dropout(DROPOUT_CONV),
        flatten(),
        dense(256, "relu"),
        dropout(DROPOUT_DENSE),
        dense(2, "softmax"),
    ]
    return LayerGraph(layers=layers, input_shape=(224, 224, 3), name="cnn_b")


def to_keras(graph: LayerGraph):
    """Lower a LayerGraph to a keras functional model. ReLU conv/dense
    layers use He-uniform initialization; the softmax layer stays
    Glorot-uniform."""
    import keras
    from keras import layers as kl

    inp = keras.Input(shape=graph.input_shape, name=f"{graph.name}_input")
    x = inp
    for i, spec in enumerate(graph.layers):
        name = f"{graph.name}_{spec.kind}_{i}"
        if spec.kind == "conv":
            init = "he_uniform" if spec.activation == "relu" else "glorot_uniform"
            x = kl.Conv2D(
                spec.filters,
                spec.kernel,
                activation=spec.activation,
                padding=spec.padding,
                kernel_initializer=init,
                name=name,
            )(x)
        elif spec.kind == "zeropad":
            x = kl.ZeroPadding2D(spec.pad, name=name)(x)
        elif spec.kind == "batchnorm":
            x = kl.BatchNormalization(name=name)(x)
        elif spec.kind == "maxpool":
            x = kl.MaxPooling2D(spec.pool, name=name)(x)
        elif spec.kind == "dropout":
            x = kl.Dropout(spec.rate, name=name)(x)
        elif spec.kind == "flatten":
            x = kl.Flatten(name=name)(x)
        elif spec.kind == "gap":
            x = kl.GlobalAveragePooling2D(name=name)(x)
        elif spec.kind == "activation":
            x = kl.Activation(spec.activation, name=name)(x)
        elif spec.kind == "dense":
            init = "he_uniform" if spec.activation == "relu" else "glorot_uniform"
            x = kl.Dense(spec.units, activation=spec.activation, kernel_initializer=init, name=name)(x)
        else:  # pragma: no cover - guarded by propagate_shapes
            raise ValueError(f"unknown layer kind {spec.kind!r}")
    return keras.Model(inp, x, name=graph.name)


def graph_for_arch(arch: str) -> LayerGraph:
    if arch == "a":
        return build_cnn_a()
    if arch == "b":
        return build_cnn_b()
    raise ValueError(f"unknown architecture {arch!r}, expected 'a' or 'b'")
