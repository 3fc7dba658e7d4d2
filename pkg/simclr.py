# simclr.py
"""
The contrastive model: MLP encoder f, three-layer projection head g, NT-Xent
loss, the training routine run on the currently selected subset, and
checkpoint files.
"""

import json
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import CONTRASTIVE_LR, HEAD_BIAS_INIT, TEMPERATURE
from datagen import AugmentationConfig, augment_batch
from errors import ContractError, DataValidationError, ShapeError
from ndgrad import (
    AdamState, Dense, Tensor, activation, adam_step, backward, constant, gather,
    l2_normalize_rows, masked_logsumexp_rows, matmul, mean_all, parameter, scale, sub, transpose,
)
from utils import params_digest, progress

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# === CONFIGURATION ===

class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    input_dim: int = Field(64, ge=1)
    hidden_dims: List[int] = [128, 128]
    feature_dim: int = Field(64, ge=1)
    head_dims: List[int] = [64, 64, 32]

    @field_validator('hidden_dims', 'head_dims')
    @classmethod
    def _positive_widths(cls, widths):
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        return widths

    @field_validator('head_dims')
    @classmethod
    def _three_layer_head(cls, widths):
        if len(widths) != 3:
            raise ValueError(f"the projection head has exactly 3 layers, got {len(widths)}")
        return widths

    @property
    def projection_dim(self) -> int:
        return self.head_dims[-1]


class ContrastiveHyper(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    temperature: float = Field(TEMPERATURE, gt=0.0)
    batch_size: int = Field(64, ge=2)
    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(CONTRASTIVE_LR, gt=0.0)


# === MODEL ===

@dataclass(eq=False)
class ContrastiveModel:
    """Weights of g∘f plus the Adam state that continues across active iterations."""
    config: EncoderConfig
    encoder: List[Dense]
    head: List[Dense]
    optimizer: AdamState

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = []
        for group, layers in (('encoder', self.encoder), ('head', self.head)):
            for i, layer in enumerate(layers):
                named.append((f"{group}.{i}.weight", layer.weight))
                named.append((f"{group}.{i}.bias", layer.bias))
        return named

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def encoder_digest(self) -> str:
        return params_digest([p.values for layer in self.encoder for p in layer.parameters()])


def init_model(config: EncoderConfig, rng: np.random.Generator,
               learning_rate: float = CONTRASTIVE_LR) -> ContrastiveModel:
    """
    Glorot-uniform weights and fresh Adam state. Encoder biases start at zero,
    head biases at HEAD_BIAS_INIT: a head whose last hidden layer is entirely
    inactive for some input still maps it to a nonzero z.
    """
    widths = [config.input_dim, *config.hidden_dims, config.feature_dim]
    encoder = [Dense.init(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
    head_widths = [config.feature_dim, *config.head_dims]
    head = [Dense.init(a, b, rng, bias=HEAD_BIAS_INIT) for a, b in zip(head_widths[:-1], head_widths[1:])]
    return ContrastiveModel(config, encoder, head, AdamState(lr=learning_rate))


def encode(model: ContrastiveModel, batch) -> Tensor:
    """h = f(x): ReLU between layers, linear feature layer."""
    x = constant(batch)
    if x.cols != model.config.input_dim:
        raise ShapeError(f"encoder expects {model.config.input_dim} input columns, got {x.cols}")
    last = len(model.encoder) - 1
    for i, layer in enumerate(model.encoder):
        x = layer(x)
        if i < last:
            x = activation(x, 'relu')
    return x


def project(model: ContrastiveModel, h: Tensor) -> Tensor:
    """z = g(h), L2-normalized so cosine similarity is a dot product."""
    if h.cols != model.config.feature_dim:
        raise ShapeError(f"projection head expects width {model.config.feature_dim}, got {h.cols}")
    z = h
    for i, layer in enumerate(model.head):
        z = layer(z)
        if i < len(model.head) - 1:
            z = activation(z, 'relu')
    return l2_normalize_rows(z)


# === LOSS ===

def nt_xent_loss(z: Tensor, temperature: float) -> Tensor:
    """
    Mean NT-Xent over all 2N anchors.

    Rows are ordered [view-i block; view-j block], so row r pairs with row r+N.
    The denominator of each anchor sums over every other row, positive partner
    included; only the anchor itself is left out.
    """
    rows = z.rows
    if rows == 0 or rows % 2:
        raise ContractError(f"NT-Xent needs an even, non-zero number of rows, got {rows}")
    norms = np.linalg.norm(z.values, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ContractError("NT-Xent needs unit-norm rows")
    if temperature <= 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")

    n = rows // 2
    logits = scale(matmul(z, transpose(z)), 1.0 / temperature)
    denominator = masked_logsumexp_rows(logits, ~np.eye(rows, dtype=bool))
    anchors = np.arange(rows)
    positive = gather(logits, anchors, (anchors + n) % rows)
    return mean_all(sub(denominator, positive))


# === TRAINING ===

def train_contrastive(model: ContrastiveModel, pixels: np.ndarray, hyper: ContrastiveHyper,
                      augmentation: AugmentationConfig, patch_side: int,
                      shuffle_rng: np.random.Generator, augment_rng: np.random.Generator,
                      show_progress: bool = None) -> Tuple[ContrastiveModel, List[float]]:
    """
    Continues training g∘f on the given subset; returns the model and the mean loss of every epoch.

    The final minibatch is kept when it holds at least 2 samples.
    """
    n = pixels.shape[0]
    if n < 2:
        raise DataValidationError(f"contrastive training needs at least 2 samples, got {n}")

    model.optimizer.lr = hyper.learning_rate
    params = model.parameters()
    trace = []
    for epoch in progress(range(hyper.epochs), desc="contrastive epochs", total=hyper.epochs,
                          enabled=show_progress):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2:
                continue
            views = augment_batch(pixels[idx], patch_side, augmentation, augment_rng)
            loss = nt_xent_loss(project(model, encode(model, views)), hyper.temperature)
            adam_step(params, backward(loss, params), model.optimizer)
            batch_losses.append(loss.item())
        trace.append(float(np.mean(batch_losses)))
        logger.debug(f"contrastive epoch {epoch + 1}/{hyper.epochs}: loss {trace[-1]:.5f}")
    return model, trace


# === CHECKPOINTS ===

def save_checkpoint(model: ContrastiveModel, path: str):
    """npz file: a JSON header plus parameter and Adam-moment arrays in declaration order."""
    named = model.named_parameters()
    header = {
        'version': CHECKPOINT_VERSION,
        'config': model.config.model_dump(),
        'parameters': [name for name, _ in named],
        'adam': {
            'lr': model.optimizer.lr, 'beta1': model.optimizer.beta1,
            'beta2': model.optimizer.beta2, 'eps': model.optimizer.eps, 'step': model.optimizer.step,
        },
    }
    arrays = {'header': np.array(json.dumps(header, sort_keys=True))}
    for i, (_, p) in enumerate(named):
        arrays[f"param_{i:03d}"] = p.values
        arrays[f"adam_m_{i:03d}"] = model.optimizer.m.get(p.node_id, np.zeros(p.shape))
        arrays[f"adam_v_{i:03d}"] = model.optimizer.v.get(p.node_id, np.zeros(p.shape))
    with open(path, 'wb') as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str) -> ContrastiveModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data['header']))
        if header.get('version') != CHECKPOINT_VERSION:
            raise DataValidationError(f"Unsupported checkpoint version {header.get('version')}")
        config = EncoderConfig(**header['config'])
        model = init_model(config, np.random.default_rng(0), header['adam']['lr'])
        named = model.named_parameters()
        if [name for name, _ in named] != header['parameters']:
            raise DataValidationError(f"{path} does not match the layer layout of its own config")
        state = model.optimizer
        state.beta1, state.beta2 = header['adam']['beta1'], header['adam']['beta2']
        state.eps, state.step = header['adam']['eps'], header['adam']['step']
        for i, (_, p) in enumerate(named):
            saved = parameter(data[f"param_{i:03d}"])
            if saved.shape != p.shape:
                raise DataValidationError(f"Parameter {i} has shape {saved.shape}, expected {p.shape}")
            p.values = saved.values
            state.m[p.node_id] = np.array(data[f"adam_m_{i:03d}"])
            state.v[p.node_id] = np.array(data[f"adam_v_{i:03d}"])
    return model
