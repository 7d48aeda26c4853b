from pathlib import Path

import numpy as np
import pytest

from ocsquant.graph import (
    AvgPool,
    BatchNorm,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    ModelGraph,
    ReLU,
)

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    path = FIXTURES / name
    if not path.exists():
        pytest.skip(f"committed fixture {name} not present")
    return path


def make_fc(name, rng, n_in, n_out, scale=0.5):
    return FullyConnected(
        name=name,
        weight=rng.normal(0.0, scale, size=(n_out, n_in)),
        bias=rng.normal(0.0, 0.1, size=n_out),
    )


def make_conv(name, rng, c_in, c_out, k=3, stride=1, pad=1, scale=0.5):
    return Conv2D(
        name=name,
        weight=rng.normal(0.0, scale, size=(c_out, c_in, k, k)),
        bias=rng.normal(0.0, 0.1, size=c_out),
        stride=stride,
        pad=pad,
    )


def small_cnn(seed=0) -> ModelGraph:
    """conv -> bn -> relu -> maxpool -> conv -> relu -> avgpool -> flatten -> fc -> relu -> fc"""
    rng = np.random.default_rng(seed)
    model = ModelGraph(
        layers=[
            make_conv("conv1", rng, 1, 8),
            BatchNorm("bn1", scale=rng.uniform(0.5, 1.5, 8), shift=rng.normal(0, 0.1, 8)),
            ReLU("relu1"),
            MaxPool("pool1", kernel=2, stride=2),
            make_conv("conv2", rng, 8, 16),
            ReLU("relu2"),
            AvgPool("pool2", kernel=4, stride=4),
            Flatten("flatten"),
            make_fc("fc1", rng, 16, 32),
            ReLU("relu3"),
            make_fc("fc2", rng, 32, 10),
        ],
        input_shape=(1, 8, 8),
    )
    model.validate()
    return model


def small_mlp(seed=0, widths=(12, 16, 10)) -> ModelGraph:
    rng = np.random.default_rng(seed)
    layers = []
    prev = widths[0]
    for i, w in enumerate(widths[1:], start=1):
        layers.append(make_fc(f"fc{i}", rng, prev, w))
        if i < len(widths) - 1:
            layers.append(ReLU(f"relu{i}"))
        prev = w
    model = ModelGraph(layers=layers, input_shape=(widths[0],))
    model.validate()
    return model
