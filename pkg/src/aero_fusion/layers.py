"""
Layer primitives of the fusion network

All primitives take and return :class:`~aero_fusion.tensor.Tensor` objects laid out as
(batch, channels, length, width) where the network uses four axes. Convolutions use odd square
kernels with stride 1 and same padding, pooling and upsampling act on the length axis only so the
feature width is never touched.

:func:`apply_primitive` dispatches on a primitive name, which is how the tests drive every
primitive through one door.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from aero_fusion.tensor import (Tensor, ShapeError, make_node, check_finite, as_tensor)

logger = logging.getLogger(__name__)

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


def _check_rank(kind, tensor, rank):
    if tensor.ndim != rank:
        raise ShapeError(f"{kind}: expected a {rank}-axis input, got shape {tensor.shape}")


def conv2d(x, weight, bias=None):
    """
    Two dimensional convolution with stride 1 and same padding

    Parameters
    ----------
    x: Tensor
        Input of shape (b, C_in, L, d)
    weight: Tensor
        Kernel of shape (C_out, C_in, k_h, k_w) with odd k_h and k_w
    bias: Tensor or None
        Optional bias of shape (C_out,)

    Returns
    -------
    Tensor:
        Output of shape (b, C_out, L, d)
    """
    kind = "conv2d"
    _check_rank(kind, x, 4)
    check_finite(kind, x)
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"{kind}: kernel {weight.shape} does not fit input {x.shape}")
    c_out, c_in, k_h, k_w = weight.shape
    if k_h % 2 == 0 or k_w % 2 == 0:
        raise ShapeError(f"{kind}: same padding needs odd kernels, got {weight.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"{kind}: bias {bias.shape} does not fit kernel {weight.shape}")

    batch, _, length, width = x.shape
    pad_h, pad_w = k_h // 2, k_w // 2
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    # (b, C_in, L, d, k_h, k_w) -> rows per output position
    windows = sliding_window_view(padded, (k_h, k_w), axis=(2, 3))
    columns = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * length * width, -1)
    kernel = weight.data.reshape(c_out, -1)
    out = columns @ kernel.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, length, width, c_out).transpose(0, 3, 1, 2)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(grad):
        flat_grad = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)
        grad_weight = (flat_grad.T @ columns).reshape(weight.shape)
        grad_columns = (flat_grad @ kernel).reshape(batch, length, width, c_in, k_h, k_w)
        grad_padded = np.zeros(padded.shape)
        for i_h in range(k_h):
            for i_w in range(k_w):
                grad_padded[:, :, i_h:i_h + length, i_w:i_w + width] += \
                    grad_columns[..., i_h, i_w].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, pad_h:pad_h + length, pad_w:pad_w + width]
        if bias is None:
            return grad_x, grad_weight
        return grad_x, grad_weight, flat_grad.sum(axis=0)

    return make_node(out, parents, kind, _backward)


@dataclass
class BatchNormState:
    """Running statistics of a batch normalization layer"""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def create(cls, channels):
        return cls(running_mean=np.zeros(channels), running_var=np.ones(channels))


def batchnorm2d(x, gamma, beta, state, training=True):
    """
    Batch normalization over the batch, length and width axes

    In training mode the batch statistics are used and the running statistics of *state* are
    updated; in evaluation mode the running statistics normalize the input.
    """
    kind = "batchnorm2d"
    _check_rank(kind, x, 4)
    check_finite(kind, x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"{kind}: affine parameters {gamma.shape}/{beta.shape} do not fit "
                         f"input {x.shape}")
    axes = (0, 2, 3)
    shape = (1, channels, 1, 1)
    count = x.size // channels

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = x_hat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def _backward(grad):
        grad_gamma = np.sum(grad * x_hat, axis=axes)
        grad_beta = np.sum(grad, axis=axes)
        grad_x_hat = grad * gamma.data.reshape(shape)
        if training:
            grad_x = (inv_std.reshape(shape) / count) * (
                count * grad_x_hat
                - np.sum(grad_x_hat, axis=axes).reshape(shape)
                - x_hat * np.sum(grad_x_hat * x_hat, axis=axes).reshape(shape))
        else:
            grad_x = grad_x_hat * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return make_node(out, (x, gamma, beta), kind, _backward)


def relu(x):
    check_finite("relu", x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), "relu", lambda grad: (grad * mask,))


def maxpool2d(x):
    """Max pooling with kernel and stride (2, 1): halves the length axis only"""
    kind = "maxpool2d"
    _check_rank(kind, x, 4)
    check_finite(kind, x)
    batch, channels, length, width = x.shape
    if length % 2:
        raise ShapeError(f"{kind}: length axis must be even, got shape {x.shape}")
    pairs = x.data.reshape(batch, channels, length // 2, 2, width)
    # ties go to the first element of the pair
    pick_second = pairs[:, :, :, 1, :] > pairs[:, :, :, 0, :]
    out = np.where(pick_second, pairs[:, :, :, 1, :], pairs[:, :, :, 0, :])

    def _backward(grad):
        grad_pairs = np.zeros(pairs.shape)
        grad_pairs[:, :, :, 0, :] = np.where(pick_second, 0.0, grad)
        grad_pairs[:, :, :, 1, :] = np.where(pick_second, grad, 0.0)
        return (grad_pairs.reshape(x.shape),)

    return make_node(out, (x,), kind, _backward)


def upsample_matrix(length, factor=2):
    """
    Half-pixel centred linear interpolation matrix with edge clamping

    Row ``i`` of the (factor * length, length) matrix holds the weights of output sample ``i``.
    """
    matrix = np.zeros((factor * length, length))
    for i_out in range(factor * length):
        source = max((i_out + 0.5) / factor - 0.5, 0.0)
        lower = min(int(math.floor(source)), length - 1)
        upper = min(lower + 1, length - 1)
        weight = source - lower
        matrix[i_out, lower] += 1.0 - weight
        matrix[i_out, upper] += weight
    return matrix


def bilinear_upsample(x):
    """Bilinear upsampling by (2, 1): doubles the length axis, leaves the width untouched"""
    kind = "bilinear_upsample"
    _check_rank(kind, x, 4)
    check_finite(kind, x)
    matrix = upsample_matrix(x.shape[2])
    out = np.einsum("il,bcld->bcid", matrix, x.data)
    return make_node(out, (x,), kind,
                     lambda grad: (np.einsum("il,bcid->bcld", matrix, grad),))


def linear(x, weight, bias=None):
    """Apply ``x @ weight + bias`` over the last axis, *weight* has shape (in, out)"""
    kind = "linear"
    check_finite(kind, x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"{kind}: weight {weight.shape} does not fit input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"{kind}: bias {bias.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(grad):
        grad_x = grad @ weight.data.T
        grad_weight = x.data.reshape(-1, weight.shape[0]).T @ grad.reshape(-1, weight.shape[1])
        if bias is None:
            return grad_x, grad_weight
        return grad_x, grad_weight, grad.reshape(-1, weight.shape[1]).sum(axis=0)

    return make_node(out, parents, kind, _backward)


def softmax_lastdim(x):
    kind = "softmax_lastdim"
    check_finite(kind, x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    exponent = np.exp(shifted)
    out = exponent / np.sum(exponent, axis=-1, keepdims=True)

    def _backward(grad):
        return (out * (grad - np.sum(grad * out, axis=-1, keepdims=True)),)

    return make_node(out, (x,), kind, _backward)


def dropout(x, p, rng, training=True):
    """
    Inverted dropout

    Parameters
    ----------
    x: Tensor
        Input
    p: float
        Probability to zero an element
    rng: np.random.Generator
        Source of the mask, so equal seeds give equal masks
    training: bool
        If False, the input is passed through unchanged
    """
    kind = "dropout"
    check_finite(kind, x)
    if not 0 <= p < 1:
        raise ValueError(f"{kind}: probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_node(x.data * mask, (x,), kind, lambda grad: (grad * mask,))


def concat_channels(tensors):
    """Concatenate four-axis tensors along the channel axis"""
    kind = "concat_channels"
    tensors = [as_tensor(tensor) for tensor in tensors]
    reference = tensors[0]
    for tensor in tensors:
        _check_rank(kind, tensor, 4)
        check_finite(kind, tensor)
        if tensor.shape[0] != reference.shape[0] or tensor.shape[2:] != reference.shape[2:]:
            raise ShapeError(f"{kind}: cannot concatenate {reference.shape} and {tensor.shape}")
    bounds = np.cumsum([tensor.shape[1] for tensor in tensors])[:-1]
    out = np.concatenate([tensor.data for tensor in tensors], axis=1)

    def _backward(grad):
        return tuple(np.split(grad, bounds, axis=1))

    return make_node(out, tuple(tensors), kind, _backward)


def sinusoidal_table(n_tokens, width):
    """
    Interleaved sine/cosine positional encoding

    Even feature columns carry ``sin(pos / 10000^(2i/width))``, odd columns the cosine of the
    same angle. For odd widths the last column is a sine.
    """
    position = np.arange(n_tokens, dtype=np.float64)[:, None]
    pair_index = np.arange(width) // 2
    angle = position / np.power(10000.0, 2.0 * pair_index / width)[None, :]
    table = np.where(np.arange(width) % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def positional_encoding(x):
    """Add the sinusoidal table over the token axis of a (b, tokens, width) tensor"""
    kind = "positional_encoding"
    _check_rank(kind, x, 3)
    check_finite(kind, x)
    table = sinusoidal_table(x.shape[1], x.shape[2])
    return make_node(x.data + table[None, :, :], (x,), kind, lambda grad: (grad,))


def _conv(params, x, **_):
    return conv2d(x, *params)


def _conv_1x1(params, x, **_):
    weight = params[0]
    if weight.shape[2:] != (1, 1):
        raise ShapeError(f"conv2d_1x1: kernel {weight.shape} is not 1x1")
    return conv2d(x, *params)


def _batchnorm(params, x, state=None, training=True, **_):
    gamma, beta = params
    if state is None:
        state = BatchNormState.create(x.shape[1])
    return batchnorm2d(x, gamma, beta, state, training=training)


def _dropout(params, x, p=0.1, rng=None, training=True, **_):
    if rng is None:
        rng = np.random.default_rng(0)
    return dropout(x, p, rng, training=training)


def _concat(params, x, **_):
    return concat_channels([x] + list(params))


PRIMITIVES = {
    "conv2d": _conv,
    "conv2d_1x1": _conv_1x1,
    "batchnorm2d": _batchnorm,
    "relu": lambda params, x, **_: relu(x),
    "maxpool2d": lambda params, x, **_: maxpool2d(x),
    "bilinear_upsample": lambda params, x, **_: bilinear_upsample(x),
    "linear": lambda params, x, **_: linear(x, *params),
    "softmax_lastdim": lambda params, x, **_: softmax_lastdim(x),
    "dropout": _dropout,
    "concat_channels": _concat,
    "positional_encoding": lambda params, x, **_: positional_encoding(x),
}


def apply_primitive(kind, params, x, **options):
    """
    Apply a layer primitive by name

    Parameters
    ----------
    kind: str
        One of the keys of :data:`PRIMITIVES`
    params: list of Tensor
        The parameters of the primitive in the order of the underlying function (kernel and bias,
        gamma and beta, weight and bias). For ``concat_channels`` the tensors to append to *x*
    x: Tensor
        The input
    options:
        Extra keywords: ``state`` and ``training`` for batch normalization, ``p``, ``rng`` and
        ``training`` for dropout

    Returns
    -------
    Tensor:
        The output of the primitive
    """
    try:
        primitive = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"Unknown primitive '{kind}'. Please pick one of: "
                         f"{list(PRIMITIVES.keys())}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return primitive(list(params or []), x, **options)
