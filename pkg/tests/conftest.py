import math

import numpy as np
import pytest
import torch

from primassembly.geometry import Primitive
from primassembly.model import ModelConfig


def tiny_model_config(**overrides):
    base = dict(
        layers=2,
        hidden_size=32,
        attention_heads=2,
        condition_tokens=8,
        condition_points=64,
        class_embed_dim=8,
        attribute_embed_dim=4,
        max_sequence=16,
        fourier_frequencies=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_primitive(rng, class_label=None):
    c = int(rng.integers(3)) if class_label is None else class_label
    return Primitive(
        c,
        rng.uniform(0.05, 1.0, 3),
        rng.uniform(-math.pi, math.pi, 3),
        rng.uniform(-1.0, 1.0, 3),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
