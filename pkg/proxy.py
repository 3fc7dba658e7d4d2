# proxy.py
"""
The proxy model f_p: one fully connected layer with a sigmoid output, trained
from scratch on frozen encoder features of the labeled set. Features are
standardized with the labeled set's column mean and scale before the layer.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import entr, expit
from sklearn.preprocessing import StandardScaler

from config import PROXY_LR
from errors import DataValidationError, ShapeError
from ndgrad import AdamState, Dense, Tensor, adam_step, backward, bce_with_logits, constant, no_grad
from simclr import ContrastiveModel, encode
from utils import params_digest

logger = logging.getLogger(__name__)


class ProxyHyper(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    learning_rate: float = Field(PROXY_LR, gt=0.0)
    epochs: int = Field(40, ge=0)
    batch_size: int = Field(128, ge=1)


@dataclass(eq=False)
class ProxyParams:
    weight: Tensor  # feature_dim x 1
    bias: Tensor    # 1 x 1
    hyper: ProxyHyper
    feature_mean: Optional[np.ndarray] = None   # per-column, identity when unset
    feature_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weight.cols != 1:
            raise ShapeError(f"proxy weight must have width 1, got {self.weight.shape}")
        width = self.weight.rows
        if self.feature_mean is None:
            self.feature_mean = np.zeros(width)
        if self.feature_scale is None:
            self.feature_scale = np.ones(width)
        if self.feature_mean.shape != (width,) or self.feature_scale.shape != (width,):
            raise ShapeError(f"proxy standardization must have width {width}")

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_scale

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def digest(self) -> str:
        return params_digest([self.weight.values, self.bias.values, self.feature_mean, self.feature_scale])


def extract_features(model: ContrastiveModel, samples) -> np.ndarray:
    """Encoder features h of the samples, projection head not applied, nothing tracked."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return np.empty((0, model.config.feature_dim))
    with no_grad():
        return encode(model, samples).values


def train_proxy(features: np.ndarray, labels: np.ndarray, hyper: ProxyHyper, rng: np.random.Generator,
                on_epoch_end: Optional[Callable[[int, ProxyParams], None]] = None) -> ProxyParams:
    """
    Fits a freshly initialized proxy with binary cross-entropy and Adam, on
    features standardized by the labeled set's own statistics.

    `on_epoch_end(epoch, proxy)` is called after every epoch (1-based), e.g. for
    periodic evaluation.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"features {features.shape} do not match {labels.shape[0]} labels")
    n = features.shape[0]
    if n < 2:
        raise DataValidationError(f"the proxy needs at least 2 labeled samples, got {n}")
    classes = set(np.unique(labels).tolist())
    if not classes <= {0, 1}:
        raise DataValidationError(f"labels must be binary, got classes {sorted(classes)}")
    if classes != {0, 1}:
        raise DataValidationError("the proxy needs both classes in its labeled set")

    scaler = StandardScaler().fit(features)
    layer = Dense.init(features.shape[1], 1, rng)
    proxy = ProxyParams(layer.weight, layer.bias, hyper, scaler.mean_, scaler.scale_)
    features = proxy.standardize(features)
    params = proxy.parameters()
    state = AdamState(lr=hyper.learning_rate)
    targets = labels.astype(np.float64).reshape(-1, 1)

    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss = bce_with_logits(layer(constant(features[idx])), targets[idx])
            adam_step(params, backward(loss, params), state)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, proxy)
    return proxy


def predict_proba(proxy: ProxyParams, features) -> np.ndarray:
    """sigmoid(standardized features @ W + b) per row, as a 1-D array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != proxy.weight.rows:
        raise ShapeError(f"proxy expects features of width {proxy.weight.rows}, got shape {features.shape}")
    return expit(proxy.standardize(features) @ proxy.weight.values + proxy.bias.values)[:, 0]


def entropy(p):
    """Binary Shannon entropy in nats, with 0 log 0 = 0; accepts a scalar or an array."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DataValidationError("entropy needs probabilities in [0, 1]")
    h = entr(arr) + entr(1.0 - arr)
    return float(h) if h.ndim == 0 else h
