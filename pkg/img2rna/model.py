# -*- coding: utf-8 -*-
"""
CNN + transformer encoder that predicts gene expression from image slices.

Every selected slice of a patient goes through the same encoder:

    slice (1 x H x W)
      -> CNN stages (3x3 conv, stride 2, ReLU), each halving the resolution
      -> one token per spatial position (linear projection to width D)
      -> + learned positional embeddings
      -> pre-norm transformer encoder layers (attention + MLP)
      -> final layer normalization
    = token grid (T x D) with T = (H / 2**stages)**2

The token grids of a patient's slices are averaged into the patient
embedding. The prediction head applies dropout and a width-1 1D convolution
mapping each token to G genes, then averages over the T tokens.
"""
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from img2rna.autodiff import Tensor, reshape, stack
from img2rna.exceptions import ConfigError, DimensionError, InputError
from img2rna.layers import (DropoutConfig, conv1d_k1, conv2d, dropout, initialize, layernorm,
                            linear, mlp, multihead_self_attention, subset)
from img2rna.rng import substream


@dataclass
class ModelConfig:
    """Architecture hyperparameters."""
    input_slice_size: int = 64
    cnn_channels: tuple = (8, 16, 32)
    kernel_size: int = 3
    token_dim: int = 128
    encoder_layers: int = 8
    heads: int = 4
    mlp_hidden: int = 256
    head_dropout: float = 0.5
    gene_count: int = 1
    seed: int = 0

    def __post_init__(self):
        self.cnn_channels = tuple(int(c) for c in self.cnn_channels)
        if self.encoder_layers < 1:
            raise ConfigError("encoder_layers should be >= 1, got %s." % self.encoder_layers)
        if self.heads < 1 or self.token_dim % self.heads != 0:
            raise ConfigError("token_dim (%s) should be divisible by heads (%s)."
                              % (self.token_dim, self.heads))
        if self.gene_count < 1:
            raise ConfigError("gene_count should be >= 1, got %s." % self.gene_count)
        if len(self.cnn_channels) < 1:
            raise ConfigError("At least one CNN stage is needed.")
        if self.input_slice_size % (2 ** self.cnn_stages) != 0:
            raise ConfigError("input_slice_size %s is not divisible by 2**%s."
                              % (self.input_slice_size, self.cnn_stages))
        if not 0.0 <= self.head_dropout < 1.0:
            raise ConfigError("head_dropout should be in [0, 1), got %s." % self.head_dropout)

    @property
    def cnn_stages(self):
        return len(self.cnn_channels)

    @property
    def grid_size(self):
        return self.input_slice_size // (2 ** self.cnn_stages)

    @property
    def token_count(self):
        return self.grid_size ** 2

    def to_dict(self):
        out = asdict(self)
        out["cnn_channels"] = list(self.cnn_channels)
        return out

    @classmethod
    def from_dict(cls, values):
        return cls(**values)


@dataclass
class PatientEmbedding:
    """Token grid (T x D) aggregated over a patient's selected slices."""
    tokens: Tensor


@dataclass
class GeneTargetTransform:
    """
    log1p followed by per-gene standardization.

    Fitted on the training split only; the same transform is stored in the
    checkpoint so predictions can be mapped back to expression values.
    """
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    std: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, expression, gene_ids=None):
        """
        Fit on raw expression of shape (patients, genes).

        Genes with zero variance on the training split get a unit standard
        deviation and a warning.
        """
        logged = np.log1p(np.asarray(expression, dtype=np.float64))
        mean = logged.mean(axis=0)
        std = logged.std(axis=0)
        flat = np.ptp(logged, axis=0) == 0
        if np.any(flat):
            names = [gene_ids[i] for i in np.flatnonzero(flat)] if gene_ids is not None \
                else list(np.flatnonzero(flat))
            warnings.warn("%s gene(s) have zero variance on the training split, "
                          "using unit scale for: %s" % (len(names), names[:10]),
                          UserWarning, stacklevel=2)
            std = np.where(flat, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, expression):
        return (np.log1p(np.asarray(expression, dtype=np.float64)) - self.mean) / self.std

    def inverse(self, standardized):
        return np.expm1(np.asarray(standardized) * self.std + self.mean)


# Parameters
# ==========

def param_shapes(config):
    """Ordered list of (name, shape) for every parameter of ``config``."""
    k = config.kernel_size
    d = config.token_dim
    shapes = []

    c_in = 1
    for i, c_out in enumerate(config.cnn_channels):
        shapes.append(("cnn.%d.weight" % i, (c_out, c_in, k, k)))
        shapes.append(("cnn.%d.bias" % i, (c_out,)))
        c_in = c_out

    shapes.append(("tokens.weight", (d, c_in)))
    shapes.append(("tokens.bias", (d,)))
    shapes.append(("pos_embedding.weight", (config.token_count, d)))

    for layer in range(config.encoder_layers):
        prefix = "encoder.%d" % layer
        shapes.append((prefix + ".norm1.gain", (d,)))
        shapes.append((prefix + ".norm1.bias", (d,)))
        for proj in ("q", "k", "v", "out"):
            shapes.append(("%s.attn.%s.weight" % (prefix, proj), (d, d)))
            shapes.append(("%s.attn.%s.bias" % (prefix, proj), (d,)))
        shapes.append((prefix + ".norm2.gain", (d,)))
        shapes.append((prefix + ".norm2.bias", (d,)))
        shapes.append((prefix + ".mlp.fc1.weight", (config.mlp_hidden, d)))
        shapes.append((prefix + ".mlp.fc1.bias", (config.mlp_hidden,)))
        shapes.append((prefix + ".mlp.fc2.weight", (d, config.mlp_hidden)))
        shapes.append((prefix + ".mlp.fc2.bias", (d,)))

    shapes.append(("encoder.norm.gain", (d,)))
    shapes.append(("encoder.norm.bias", (d,)))
    shapes.append(("head.weight", (config.gene_count, d)))
    shapes.append(("head.bias", (config.gene_count,)))
    return shapes


def init_params(config, rng=None):
    """Initialize all parameters; draws from the 'init' substream of ``config.seed``."""
    if rng is None:
        rng = substream(config.seed, "init")
    params = {}
    for name, shape in param_shapes(config):
        if name in params:
            raise ConfigError("Duplicate parameter name '%s'." % name)
        params[name] = initialize(name, shape, rng)
    return params


# Forward pass
# ============

def _encode_batch(x, params, config):
    """Encode slices of shape (S, 1, H, W) into token grids (S, T, D)."""
    for i in range(config.cnn_stages):
        x = conv2d(x, subset(params, "cnn.%d" % i), stride=2,
                   padding=config.kernel_size // 2).relu()

    # One token per spatial position
    s, c, h, w = x.shape
    x = reshape(x, (s, c, h * w)).swapaxes(-1, -2)
    x = linear(x, subset(params, "tokens")) + params["pos_embedding.weight"]

    for layer in range(config.encoder_layers):
        block = subset(params, "encoder.%d" % layer)
        x = x + multihead_self_attention(layernorm(x, subset(block, "norm1")),
                                         subset(block, "attn"), config.heads)
        x = x + mlp(layernorm(x, subset(block, "norm2")), subset(block, "mlp"))

    return layernorm(x, subset(params, "encoder.norm"))


def _slice_batch(slices, config):
    h = config.input_slice_size
    arrays = []
    for s in slices:
        arr = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.shape != (1, h, h):
            raise DimensionError("Slice shape %s does not match the configured size (1, %s, %s)."
                                 % (arr.shape, h, h))
        arrays.append(arr)
    return Tensor(np.stack(arrays))


def encode_slice(slice_, params, config):
    """
    Encode one slice of shape (1, H, W) into a (T, D) token grid.

    Raises
    ------
    DimensionError
        When the slice size does not match ``config.input_slice_size``.
    """
    tokens = _encode_batch(_slice_batch([slice_], config), params, config)
    return reshape(tokens, (config.token_count, config.token_dim))


def embed_patient(slices, params, config):
    """
    Average the token grids of all selected slices of one patient.

    Parameters
    ----------
    slices : list
        Slices of shape (1, H, W) or (H, W) (arrays or Tensors).

    Raises
    ------
    InputError
        When ``slices`` is empty.
    """
    if len(slices) == 0:
        raise InputError("A patient needs at least one selected slice.")
    tokens = _encode_batch(_slice_batch(slices, config), params, config)
    return PatientEmbedding(tokens=tokens.mean(axis=0))


def predict_genes(embedding, head_params, mode="eval", rate=0.5, rng=None):
    """
    Prediction head: dropout -> width-1 1D convolution (D -> G) -> mean over tokens.

    Returns
    -------
    Tensor of shape (G,) with standardized log-expression predictions.
    """
    tokens = embedding.tokens
    if tokens.shape[-1] != head_params["weight"].shape[1]:
        raise DimensionError("Token width %s does not match head input width %s."
                             % (tokens.shape[-1], head_params["weight"].shape[1]))
    tokens = dropout(tokens, DropoutConfig(rate=rate, mode=mode), rng)
    return conv1d_k1(tokens, head_params).mean(axis=0)


def forward_patient(slices, params, config, mode="eval", rng=None):
    """Predict the (G,) standardized expression vector of one patient."""
    embedding = embed_patient(slices, params, config)
    return predict_genes(embedding, subset(params, "head"), mode=mode,
                         rate=config.head_dropout, rng=rng)


def forward_batch(batch_slices, params, config, mode="eval", rng=None):
    """Stack the predictions of several patients into a (B, G) tensor."""
    return stack([forward_patient(slices, params, config, mode=mode, rng=rng)
                  for slices in batch_slices])


def mse_loss(pred, target):
    """
    Mean over all elements of the squared difference.

    Raises
    ------
    DimensionError
        When the shapes differ.
    """
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError("mse_loss shape mismatch: %s and %s." % (pred.shape, target.shape))
    diff = pred - target
    return (diff * diff).mean()
