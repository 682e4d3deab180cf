import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import numpy as np
import pytest

from plasmodium.dataset import LabeledImage
from plasmodium.synthetic import synthesize_corpus


def stub_corpus(n_per_class: int, prefix: str = "mem") -> list[LabeledImage]:
    """In-memory corpus stand-ins for split logic tests; pixels are never
    touched."""
    out = []
    for label, name in enumerate(("uninfected", "parasitized")):
        for i in range(n_per_class):
            out.append(LabeledImage(source_path=f"{prefix}/{name}/img_{i:05d}.png", label=label))
    return out


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """A small on-disk synthetic corpus shared across tests (12 per class,
    64px)."""
    root = tmp_path_factory.mktemp("corpus")
    return synthesize_corpus(root, per_class=12, seed=7, size=64)


@pytest.fixture(scope="module")
def transfer_models():
    """The three backbones with heads, randomly initialized. Module-scoped
    (not session) so the ~250MB of weights are released between test
    modules on small machines."""
    from plasmodium.transfer import Backbone, build_transfer_model

    return {b: build_transfer_model(b, pretrained=False) for b in Backbone}


def random_unit_image(rng: np.random.Generator, h: int = 8, w: int = 8) -> np.ndarray:
    return rng.random((h, w, 3)).astype(np.float32)
