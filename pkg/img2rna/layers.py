# -*- coding: utf-8 -*-
"""
Neural network layers built on :mod:`img2rna.autodiff`.

Layers are plain functions taking an input tensor and a dictionary of
parameter tensors (keys relative to the layer, e.g. ``{'weight': .., 'bias': ..}``).
Use :func:`subset` to cut the parameters of one layer out of a model's
parameter dictionary.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import truncnorm

from img2rna.autodiff import Tensor, apply_op, as_tensor, matmul, reshape, swapaxes, softmax_lastaxis
from img2rna.exceptions import ConfigError, DimensionError

PROJECTION_STD = 0.02


@dataclass
class DropoutConfig:
    """Dropout rate in [0, 1) and mode ('train' or 'eval')."""
    rate: float = 0.5
    mode: str = "eval"

    def __post_init__(self):
        validate_dropout(self)


def validate_dropout(cfg):
    if not 0.0 <= cfg.rate < 1.0:
        raise ConfigError("Dropout rate should be in [0, 1), got %s." % cfg.rate)
    if cfg.mode not in ("train", "eval"):
        raise ConfigError("Dropout mode should be 'train' or 'eval', got '%s'." % cfg.mode)


def subset(params, prefix):
    """Return the parameters under ``prefix.`` with the prefix stripped."""
    start = prefix + "."
    return {name[len(start):]: t for name, t in params.items() if name.startswith(start)}


# Initialization
# ==============

def init_scheme(name):
    """Initialization scheme used for a parameter, derived from its name."""
    if name.endswith(".bias"):
        return "zeros"
    if name.endswith(".gain"):
        return "ones"
    if name.startswith("cnn.") and name.endswith(".weight"):
        return "he_truncated_normal"
    return "truncated_normal_0.02"


def initialize(name, shape, rng):
    """Create the parameter tensor ``name`` of ``shape`` drawing from ``rng``."""
    scheme = init_scheme(name)
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    else:
        if scheme == "he_truncated_normal":
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
        else:
            std = PROJECTION_STD
        data = truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)
    return Tensor(data, requires_grad=True, name=name)


# Layers
# ======

def conv2d(x, params, stride=1, padding=0):
    """
    2D cross-correlation plus bias.

    Parameters
    ----------
    x : Tensor
        Input of shape (C_in, H, W) or batched (N, C_in, H, W).
    params : dict
        'weight' of shape (C_out, C_in, k, k) and 'bias' of shape (C_out,).
    stride : int
        Positive stride.
    padding : int
        Zero padding added on every spatial border.

    Returns
    -------
    Tensor of shape (C_out, H', W') (or batched) with
    H' = floor((H + 2p - k) / s) + 1.
    """
    weight, bias = params["weight"], params["bias"]
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise DimensionError("conv2d expects (C, H, W) or (N, C, H, W) input, got %s."
                             % (x.shape,))
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d needs stride >= 1 and padding >= 0.")

    n, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise DimensionError("conv2d channel mismatch: input %s, kernel %s." % (x.shape, weight.shape))
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError("conv2d kernel %s is larger than the padded input %s."
                             % ((kh, kw), (h + 2 * padding, w + 2 * padding)))

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1

    # im2col: one row per output position
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :h_out, :w_out]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c_in * kh * kw)
    wmat = weight.data.reshape(c_out, c_in * kh * kw)

    out = cols @ wmat.T + bias.data
    out = out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)

    def rule(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        grad_w = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        grad_b = g2.sum(axis=0) if bias.requires_grad else None
        grad_x = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, h_out, w_out, c_in, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            grad_x = dxp[:, :, padding:padding + h, padding:padding + w]
        return grad_x, grad_w, grad_b

    result = apply_op(np.ascontiguousarray(out), (x, weight, bias), rule, "conv2d")
    if single:
        result = reshape(result, result.shape[1:])
    return result


def linear(x, params):
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    weight, bias = params["weight"], params["bias"]
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError("Width mismatch: input %s, weight %s." % (x.shape, weight.shape))
    return matmul(x, weight.T) + bias


def conv1d_k1(x, params):
    """
    Width-1 1D convolution over the token axis.

    The same affine map (D -> G) is applied at each of the T positions of an
    input of shape (..., T, D).
    """
    if x.ndim < 2:
        raise DimensionError("conv1d_k1 expects (T, D) input, got %s." % (x.shape,))
    if x.shape[-1] != params["weight"].shape[1]:
        raise DimensionError("conv1d_k1 channel mismatch: input has %s channels, weight %s."
                             % (x.shape[-1], params["weight"].shape))
    return linear(x, params)


def layernorm(x, params, eps=1e-5):
    """Normalize the last axis to mean 0 and (population) variance 1, then scale and shift."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * params["gain"] + params["bias"]


def multihead_self_attention(x, params, heads, return_weights=False):
    """
    Scaled dot-product self-attention with ``heads`` heads.

    Parameters
    ----------
    x : Tensor
        Tokens of shape (..., T, D).
    params : dict
        'q', 'k', 'v' and 'out' projections, each with 'weight' (D, D) and 'bias' (D,).
    heads : int
        Number of heads, must divide D.
    return_weights : bool
        Also return the attention weights of shape (..., H, T, T).
    """
    d = x.shape[-1]
    if heads < 1 or d % heads != 0:
        raise ConfigError("Token width %s is not divisible by %s heads." % (d, heads))
    t = x.shape[-2]
    lead = x.shape[:-2]
    head_dim = d // heads

    def split_heads(tokens):
        return swapaxes(reshape(tokens, lead + (t, heads, head_dim)), -2, -3)

    q = split_heads(linear(x, subset(params, "q")))
    k = split_heads(linear(x, subset(params, "k")))
    v = split_heads(linear(x, subset(params, "v")))

    scores = matmul(q, k.T) * (1.0 / np.sqrt(head_dim))
    weights = softmax_lastaxis(scores)
    context = swapaxes(matmul(weights, v), -2, -3)
    out = linear(reshape(context, lead + (t, d)), subset(params, "out"))
    if return_weights:
        return out, weights
    return out


def mlp(x, params):
    """Two-layer perceptron with GELU: fc1 -> gelu -> fc2."""
    return linear(linear(x, subset(params, "fc1")).gelu(), subset(params, "fc2"))


def dropout(x, cfg, rng=None):
    """
    Inverted dropout.

    In 'train' mode each element is zeroed with probability ``cfg.rate`` and
    survivors are scaled by 1 / (1 - rate). In 'eval' mode (or at rate 0) the
    input is returned unchanged. ``rng`` is a ``numpy.random.Generator`` and is
    required in train mode.
    """
    validate_dropout(cfg)
    x = as_tensor(x)
    if cfg.mode == "eval" or cfg.rate == 0.0:
        return x
    if rng is None:
        raise ValueError("Training-mode dropout needs an explicit random generator.")
    keep = rng.random(x.shape) >= cfg.rate
    return x * (keep / (1.0 - cfg.rate))
