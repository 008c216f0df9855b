"""Learning tasks: a small interface plus the default softmax-regression task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

__all__ = ["Task", "Dataset", "GaussianBlobTask", "softmax"]


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.size)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


class Task(Protocol):
    n_classes: int
    dim: int

    def init_params(self) -> np.ndarray: ...

    def loss_and_grad(self, params: np.ndarray, data: Dataset) -> tuple[float, np.ndarray]: ...

    def per_sample_loss(self, params: np.ndarray, data: Dataset) -> np.ndarray: ...

    def predict(self, params: np.ndarray, x: np.ndarray) -> np.ndarray: ...


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class GaussianBlobTask:
    """Multinomial logistic regression on isotropic Gaussian class blobs.

    Class centres are drawn once from ``N(0, separation^2 I)``; samples add
    unit-variance noise. Parameters are a flat ``(n_features + 1) * n_classes``
    vector (weights plus bias).
    """

    n_classes: int = 10
    n_features: int = 20
    train_per_class: int = 200
    test_per_class: int = 50
    separation: float = 0.6
    seed: int = 0
    train: Dataset = field(init=False, repr=False)
    test: Dataset = field(init=False, repr=False)
    centres: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_classes < 2 or self.n_features < 1:
            raise ValueError("need >= 2 classes and >= 1 feature")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("per-class sample counts must be >= 1")
        rng = np.random.default_rng([self.seed, 0xDA7A])
        self.centres = rng.normal(0.0, self.separation, size=(self.n_classes, self.n_features))
        self.train = self._draw(rng, self.train_per_class)
        self.test = self._draw(rng, self.test_per_class)

    def _draw(self, rng: np.random.Generator, per_class: int) -> Dataset:
        y = np.repeat(np.arange(self.n_classes), per_class)
        x = self.centres[y] + rng.normal(size=(y.size, self.n_features))
        return Dataset(x, y)

    @property
    def dim(self) -> int:
        return (self.n_features + 1) * self.n_classes

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _unpack(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if params.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {params.shape}, expected ({self.dim},)")
        m = params.reshape(self.n_features + 1, self.n_classes)
        return m[:-1], m[-1]

    def logits(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w, b = self._unpack(params)
        return x @ w + b

    def per_sample_loss(self, params: np.ndarray, data: Dataset) -> np.ndarray:
        z = self.logits(params, data.x)
        z = z - z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1))
        return log_norm - z[np.arange(len(data)), data.y]

    def loss_and_grad(self, params: np.ndarray, data: Dataset) -> tuple[float, np.ndarray]:
        if len(data) == 0:
            raise ValueError("empty dataset")
        probs = softmax(self.logits(params, data.x))
        n = len(data)
        loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), data.y], 1e-300))))
        probs[np.arange(n), data.y] -= 1.0
        probs /= n
        gw = data.x.T @ probs
        gb = probs.sum(axis=0)
        return loss, np.vstack([gw, gb]).ravel()

    def predict(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(params, x), axis=1)
