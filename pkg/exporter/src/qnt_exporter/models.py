"""Fixture architectures, the digits dataset, and a small training loop."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.datasets import load_digits
from torch import nn


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


class DigitData:
    """8x8 grayscale digits, pixel range [0, 1], deterministic splits.

    ``eval`` holds 200 images never used for training; ``profile`` holds 512
    training images used for activation sampling. All inputs are rounded to
    float32 so every consumer sees identical values.
    """

    EVAL_COUNT = 200
    PROFILE_COUNT = 512

    def __init__(self, seed: int = 0):
        digits = load_digits()
        images = (digits.images / 16.0).astype(np.float32)
        labels = digits.target.astype(np.int64)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(labels))
        eval_idx = order[: self.EVAL_COUNT]
        train_idx = order[self.EVAL_COUNT :]
        profile_idx = train_idx[: self.PROFILE_COUNT]
        self.train_x = images[train_idx]
        self.train_y = labels[train_idx]
        self.profile_x = images[profile_idx]
        self.eval_x = images[eval_idx]
        self.eval_y = labels[eval_idx]

    def flat(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(len(x), -1)

    def imaged(self, x: np.ndarray) -> np.ndarray:
        return x[:, None, :, :]


def mlp_net(widths=(64, 32, 10)) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(widths) - 1):
        layers.append(nn.Linear(widths[i], widths[i + 1]))
        if i < len(widths) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def cnn_net() -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(1, 8, 3, padding=1),
        nn.BatchNorm2d(8),
        nn.ReLU(),
        nn.MaxPool2d(2, 2),
        nn.Conv2d(8, 32, 3, padding=1),
        nn.ReLU(),
        nn.AvgPool2d(4, 4),
        nn.Flatten(),
        nn.Linear(32, 10),
    )


def train(model: nn.Sequential, x: np.ndarray, y: np.ndarray, epochs: int,
          seed: int, lr: float = 1e-2, batch: int = 256) -> nn.Sequential:
    set_deterministic(seed)
    xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    yt = torch.from_numpy(y)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    gen = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(epochs):
        order = torch.randperm(len(yt), generator=gen)
        for lo in range(0, len(yt), batch):
            idx = order[lo : lo + batch]
            opt.zero_grad()
            loss = loss_fn(model(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    model.eval()
    return model


def accuracy(model: nn.Module, x: np.ndarray, y: np.ndarray) -> float:
    model.eval()
    dtype = next(model.parameters()).dtype
    xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).to(dtype)
    with torch.no_grad():
        pred = model(xt).argmax(dim=1).numpy()
    return float((pred == y).mean() * 100.0)
