import numpy as np
import pytest

from plasmodium.cnn import (
    LayerGraph,
    LayerSpec,
    build_cnn_a,
    build_cnn_b,
    conv,
    dense,
    flatten,
    graph_for_arch,
    maxpool,
    to_keras,
)


def hand_param_counts(graph: LayerGraph):
    """Independent shape-arithmetic oracle: walk the descriptors with
    first-principles formulas for every layer's parameter count."""
    h, w, c = graph.input_shape
    trainable = 0
    non_trainable = 0
    for spec in graph.layers:
        if spec.kind == "conv":
            trainable += (spec.kernel * spec.kernel * c + 1) * spec.filters
            if spec.padding == "valid":
                h, w = h - spec.kernel + 1, w - spec.kernel + 1
            c = spec.filters
        elif spec.kind == "zeropad":
            h, w = h + 2 * spec.pad, w + 2 * spec.pad
        elif spec.kind == "maxpool":
            h, w = h // spec.pool, w // spec.pool
        elif spec.kind == "batchnorm":
            trainable += 2 * c  # gamma, beta
            non_trainable += 2 * c  # moving mean, moving variance
        elif spec.kind == "flatten":
            c = h * w * c
            h = w = None
        elif spec.kind == "dense":
            trainable += (c + 1) * spec.units
            c = spec.units
        elif spec.kind == "dropout":
            pass
        else:
            raise AssertionError(f"oracle does not know {spec.kind}")
    return trainable, non_trainable


class TestGraphs:
    def test_cnn_a_structure(self):
        graph = build_cnn_a()
        assert graph.input_shape == (128, 128, 3)
        kinds = [s.kind for s in graph.layers]
        assert kinds[:4] == ["conv", "batchnorm", "maxpool", "dropout"]
        assert [s.filters for s in graph.layers if s.kind == "conv"] == [32, 64, 128]
        assert graph.layers[-1].units == 2 and graph.layers[-1].activation == "softmax"
        assert graph.propagate_shapes()[-1] == (2,)

    def test_cnn_b_structure(self):
        graph = build_cnn_b()
        assert graph.input_shape == (224, 224, 3)
        shapes = graph.propagate_shapes()
        assert shapes[0] == (222, 222, 32)  # first valid conv shrinks by 2
        assert shapes[1] == (224, 224, 32)  # zero padding restores the size
        assert [s.filters for s in graph.layers if s.kind == "conv"] == [32, 32, 32, 64, 64, 64, 128]
        assert shapes[-1] == (2,)

    def test_invalid_final_layer_rejected(self):
        with pytest.raises(ValueError):
            LayerGraph(layers=[conv(4), flatten(), dense(3, "softmax")], input_shape=(8, 8, 3))
        with pytest.raises(ValueError):
            LayerGraph(layers=[conv(4), flatten(), dense(2, "relu")], input_shape=(8, 8, 3))

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(ValueError):
            LayerGraph(
                layers=[conv(4, kernel=9), flatten(), dense(2, "softmax")], input_shape=(4, 4, 3)
            )
        with pytest.raises(ValueError):
            LayerGraph(layers=[dense(2, "softmax")], input_shape=(4, 4, 3))

    def test_graph_for_arch(self):
        assert graph_for_arch("a").name == "cnn_a"
        assert graph_for_arch("b").name == "cnn_b"
        with pytest.raises(ValueError):
            graph_for_arch("c")


@pytest.fixture(scope="module")
def keras_models():
    return {"a": to_keras(build_cnn_a()), "b": to_keras(build_cnn_b())}


class TestKerasLowering:
    def test_output_layer_shape(self, keras_models):
        for model in keras_models.values():
            assert model.output_shape == (None, 2)

    @pytest.mark.parametrize("arch", ["a", "b"])
    def test_parameter_counts_match_hand_oracle(self, keras_models, arch):
        graph = graph_for_arch(arch)
        model = keras_models[arch]
        expected_trainable, expected_non_trainable = hand_param_counts(graph)
        trainable = sum(int(np.prod(w.shape)) for w in model.trainable_weights)
        non_trainable = sum(int(np.prod(w.shape)) for w in model.non_trainable_weights)
        assert trainable == expected_trainable
        assert non_trainable == expected_non_trainable

    @pytest.mark.parametrize("arch", ["a", "b"])
    def test_shape_trace_matches_keras(self, keras_models, arch):
        graph = graph_for_arch(arch)
        model = keras_models[arch]
        keras_layers = model.layers[1:]  # skip the input layer
        assert len(keras_layers) == len(graph.layers)
        for spec_shape, layer in zip(graph.propagate_shapes(), keras_layers):
            assert tuple(layer.output.shape[1:]) == spec_shape

    @pytest.mark.parametrize("arch", ["a", "b"])
    def test_softmax_on_zero_input(self, keras_models, arch):
        model = keras_models[arch]
        x = np.zeros((1, *model.input_shape[1:]), dtype=np.float32)
        probs = model.predict(x, verbose=0)[0]
        assert probs.shape == (2,)
        assert np.all(probs >= 0)
        assert abs(probs.sum() - 1.0) <= 1e-6
