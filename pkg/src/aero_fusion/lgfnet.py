"""
Local-global fusion network

The network learns the fidelity gap ``delta = y_high - y_low`` from windows of the aligned
sequence ``[x, y_low]``. It has three parts:

* spatial perception: a convolutional encoder that halves the window length four times while
  doubling the channels, keeping the feature width d untouched
* relational reasoning: self-attention over the flattened bottleneck tokens, added residually
* feature synthesis: a decoder that upsamples, concatenates the encoder skips and maps the result
  onto the residual with a linear head

Fusion superposes the predicted residual on the low fidelity carrier: ``y_fused = y_low + delta``.
"""
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from aero_fusion.dataset import (NormStats, normalize, denormalize, sliding_windows, chunk_windows,
                                 reconstruct_from_windows, as_matrix)
from aero_fusion.layers import (BatchNormState, conv2d, batchnorm2d, relu, maxpool2d,
                                bilinear_upsample, linear, softmax_lastdim, dropout,
                                concat_channels, positional_encoding)
from aero_fusion.tensor import (Tensor, ShapeError, parameter, as_tensor, add, sub, scale,
                                square, mean_all, reshape, transpose, matmul)

logger = logging.getLogger(__name__)

N_STAGES = 5
N_POOLS = 4
KERNEL_SIZE = 3

ABLATIONS = {
    "full": dict(use_sliding_window=True, use_attention=True),
    "no_sw": dict(use_sliding_window=False, use_attention=True),
    "no_att": dict(use_sliding_window=True, use_attention=False),
    "no_sw_att": dict(use_sliding_window=False, use_attention=False),
}

PARAMETER_GROUPS = ("spl", "rrl", "fsl")


@dataclass
class ArchConfig:
    """
    Architecture of the network

    Parameters
    ----------
    channels: list of int
        Channels [C_1, ..., C_5] of the four encoder stages and the bottleneck, doubling every stage
    window_length: int
        Window length L, divisible by 16
    stride: int
        Stride of the sliding windows
    heads: int
        Number of attention heads, must divide the feature width
    dropout: float
        Dropout rate applied to the attention weights during training
    use_sliding_window: bool
        If False, the sequence is cut into non-overlapping chunks instead of sliding windows
    use_attention: bool
        If False, the relational reasoning layer is the identity
    input_width: int or None
        Feature width d = p + q of the windows; set from the data when None
    output_width: int
        Residual width d_y
    """
    channels: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    window_length: int = 112
    stride: int = 14
    heads: int = 1
    dropout: float = 0.1
    use_sliding_window: bool = True
    use_attention: bool = True
    input_width: int = None
    output_width: int = 1

    def __post_init__(self):
        self.channels = [int(channel) for channel in self.channels]
        self.validate()

    def validate(self):
        if len(self.channels) != N_STAGES:
            raise ValueError(f"Need {N_STAGES} channel counts (four stages and a bottleneck), "
                             f"got {self.channels}")
        if self.channels[0] < 1:
            raise ValueError(f"Channel counts must be positive, got {self.channels}")
        for previous, current in zip(self.channels[:-1], self.channels[1:]):
            if current != 2 * previous:
                raise ValueError(f"Channel counts must double from stage to stage, got "
                                 f"{self.channels}")
        if self.window_length < 2 ** N_POOLS or self.window_length % 2 ** N_POOLS:
            raise ValueError(f"Window length {self.window_length} must be a positive multiple "
                             f"of {2 ** N_POOLS}")
        if self.stride < 1:
            raise ValueError(f"Stride must be >= 1, got {self.stride}")
        if self.heads < 1:
            raise ValueError(f"Number of heads must be >= 1, got {self.heads}")
        if self.input_width is not None and self.input_width % self.heads:
            raise ValueError(f"{self.heads} attention head(s) do not divide the feature width "
                             f"{self.input_width}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"Dropout rate must lie in [0, 1), got {self.dropout}")
        if self.output_width < 1:
            raise ValueError(f"Output width must be >= 1, got {self.output_width}")

    @classmethod
    def from_ablation(cls, ablation="full", **kwargs):
        try:
            flags = ABLATIONS[ablation]
        except KeyError:
            raise ValueError(f"Unknown ablation '{ablation}'. Please pick one of: "
                             f"{list(ABLATIONS.keys())}")
        kwargs.update(flags)
        return cls(**kwargs)

    @property
    def ablation(self):
        for name, flags in ABLATIONS.items():
            if flags == dict(use_sliding_window=self.use_sliding_window,
                             use_attention=self.use_attention):
                return name

    @property
    def bottleneck_length(self):
        return self.window_length // 2 ** N_POOLS

    def to_dict(self):
        return asdict(self)


def _uniform(rng, bound, shape, name):
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


class ConvBlock:
    """Two times conv 3x3, batch normalization and ReLU"""

    def __init__(self, in_channels, out_channels, rng, name):
        self.name = name
        self.weights = list()
        self.gammas = list()
        self.betas = list()
        self.states = list()
        for i_conv, channels_in in enumerate((in_channels, out_channels), start=1):
            fan_in = channels_in * KERNEL_SIZE ** 2
            self.weights.append(_uniform(rng, math.sqrt(6.0 / fan_in),
                                         (out_channels, channels_in, KERNEL_SIZE, KERNEL_SIZE),
                                         f"{name}.conv{i_conv}.weight"))
            self.gammas.append(parameter(np.ones(out_channels), name=f"{name}.bn{i_conv}.gamma"))
            self.betas.append(parameter(np.zeros(out_channels), name=f"{name}.bn{i_conv}.beta"))
            self.states.append(BatchNormState.create(out_channels))

    def __call__(self, x, training):
        for weight, gamma, beta, state in zip(self.weights, self.gammas, self.betas, self.states):
            x = relu(batchnorm2d(conv2d(x, weight), gamma, beta, state, training=training))
        return x

    def parameters(self):
        params = list()
        for weight, gamma, beta in zip(self.weights, self.gammas, self.betas):
            params.extend([weight, gamma, beta])
        return params

    def buffers(self):
        """Running statistics as (name, array) pairs"""
        items = list()
        for i_conv, state in enumerate(self.states, start=1):
            items.append((f"{self.name}.bn{i_conv}.running_mean", state.running_mean))
            items.append((f"{self.name}.bn{i_conv}.running_var", state.running_var))
        return items

    def set_buffer(self, name, values):
        label, kind = name.split(".")[-2:]
        state = self.states[int(label[len("bn"):]) - 1]
        setattr(state, kind, np.array(values, dtype=np.float64))


class LGFNetModel:
    """
    Encoder, attention and decoder with their parameters and normalization statistics

    Parameters
    ----------
    arch: ArchConfig
        The architecture. Its ``input_width`` must be set
    seed: int
        Seed of the parameter initialization and of the dropout masks
    input_stats: NormStats or None
        Normalization of the window columns ``[x, y_low]``; identity when None
    residual_stats: NormStats or None
        Normalization of the residual; identity when None
    """

    def __init__(self, arch, seed=42, input_stats=None, residual_stats=None):
        if arch.input_width is None:
            raise ValueError("The feature width of the architecture is not set")
        arch.validate()
        self.arch = arch
        self.seed = seed
        self.training = True
        self.last_attention = None

        init_sequence, dropout_sequence = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(init_sequence)
        self.dropout_rng = np.random.default_rng(dropout_sequence)

        width = arch.input_width
        channels = arch.channels
        self.encoder = list()
        for i_stage, out_channels in enumerate(channels):
            in_channels = 1 if i_stage == 0 else channels[i_stage - 1]
            self.encoder.append(ConvBlock(in_channels, out_channels, rng,
                                          f"spl.stage{i_stage + 1}"))

        self.projections = dict()
        if arch.use_attention:
            bound = 1.0 / math.sqrt(width)
            for key in ("query", "key", "value", "output"):
                self.projections[key] = _uniform(rng, bound, (width, width), f"rrl.{key}")

        self.decoder = list()
        for i_stage in reversed(range(N_POOLS)):
            self.decoder.append(ConvBlock(channels[i_stage + 1] + channels[i_stage],
                                          channels[i_stage], rng, f"fsl.stage{i_stage + 1}"))
        head_in = channels[0] * width
        self.head_weight = _uniform(rng, 1.0 / math.sqrt(head_in), (head_in, arch.output_width),
                                    "fsl.head.weight")
        self.head_bias = parameter(np.zeros(arch.output_width), name="fsl.head.bias")

        self.input_stats = input_stats or NormStats.identity(width)
        self.residual_stats = residual_stats or NormStats.identity(arch.output_width)

    def __repr__(self):
        return (f"LGFNetModel(channels={self.arch.channels}, L={self.arch.window_length}, "
                f"d={self.arch.input_width}, d_y={self.arch.output_width}, "
                f"ablation={self.arch.ablation}, parameters={self.count_parameters()})")

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def parameter_groups(self):
        """Trainable parameters per subnetwork: 'spl', 'rrl' and 'fsl'"""
        spl = [param for block in self.encoder for param in block.parameters()]
        rrl = list(self.projections.values())
        fsl = [param for block in self.decoder for param in block.parameters()]
        fsl += [self.head_weight, self.head_bias]
        return dict(zip(PARAMETER_GROUPS, (spl, rrl, fsl)))

    def parameters(self):
        groups = self.parameter_groups()
        return [param for group in PARAMETER_GROUPS for param in groups[group]]

    def named_parameters(self):
        return [(param.name, param) for param in self.parameters()]

    def count_parameters(self):
        return int(sum(param.size for param in self.parameters()))

    def buffers(self):
        return [item for block in self.encoder + self.decoder for item in block.buffers()]

    def set_buffer(self, name, values):
        for block in self.encoder + self.decoder:
            if name.startswith(block.name + "."):
                block.set_buffer(name, values)
                return
        raise KeyError(f"No buffer named '{name}'")

    def spl_forward(self, x):
        """
        Encoder

        Returns
        -------
        tuple:
            The bottleneck (b, C_5, L/16, d) and the pre-pool skips of the four stages
        """
        _, channels, length, width = x.shape
        if channels != 1 or length != self.arch.window_length or width != self.arch.input_width:
            raise ShapeError(f"Input {x.shape} does not match (b, 1, {self.arch.window_length}, "
                             f"{self.arch.input_width})")
        skips = list()
        for block in self.encoder[:N_POOLS]:
            x = block(x, self.training)
            skips.append(x)
            x = maxpool2d(x)
        bottleneck = self.encoder[N_POOLS](x, self.training)
        return bottleneck, skips

    def rrl_forward(self, bottleneck):
        """
        Self-attention over the bottleneck tokens, added to the bottleneck

        The (b, C, L_k, d) bottleneck is read as C * L_k tokens of width d with the channel index
        varying slowest.
        """
        if not self.arch.use_attention:
            return bottleneck
        batch, channels, length, width = bottleneck.shape
        heads = self.arch.heads
        head_width = width // heads
        n_tokens = channels * length

        tokens = positional_encoding(reshape(bottleneck, (batch, n_tokens, width)))

        def split_heads(projection):
            projected = linear(tokens, self.projections[projection])
            return transpose(reshape(projected, (batch, n_tokens, heads, head_width)),
                             (0, 2, 1, 3))

        query, key, value = (split_heads(name) for name in ("query", "key", "value"))
        scores = scale(matmul(query, transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(head_width))
        weights = softmax_lastdim(scores)
        self.last_attention = weights.numpy()
        weights = dropout(weights, self.arch.dropout, self.dropout_rng, training=self.training)

        attended = transpose(matmul(weights, value), (0, 2, 1, 3))
        attended = reshape(attended, (batch, n_tokens, width))
        output = linear(attended, self.projections["output"])
        return add(bottleneck, reshape(output, bottleneck.shape))

    def fsl_forward(self, features, skips):
        """
        Decoder and output head

        Returns
        -------
        Tensor:
            The predicted residual of shape (b, 1, L, d_y)
        """
        if len(skips) != N_POOLS:
            raise ShapeError(f"Expected {N_POOLS} skips, got {len(skips)}")
        x = features
        for i_stage, (block, skip) in enumerate(zip(self.decoder, reversed(skips))):
            x = bilinear_upsample(x)
            expected_channels = self.arch.channels[N_POOLS - 1 - i_stage]
            if skip.shape[0] != x.shape[0] or skip.shape[2:] != x.shape[2:] \
                    or skip.shape[1] != expected_channels:
                raise ShapeError(f"Decoder stage {i_stage + 1}: skip {skip.shape} does not fit "
                                 f"upsampled features {x.shape}")
            x = block(concat_channels([x, skip]), self.training)

        batch, channels, length, width = x.shape
        flat = reshape(transpose(x, (0, 2, 1, 3)), (batch, length, channels * width))
        out = linear(flat, self.head_weight, self.head_bias)
        return reshape(out, (batch, 1, length, self.arch.output_width))

    def forward(self, windows):
        """
        Run the full network on normalized windows

        Parameters
        ----------
        windows: array_like or Tensor
            (b, L, d) or (b, 1, L, d) normalized windows
        """
        x = as_tensor(windows)
        if x.ndim == 3:
            x = reshape(x, (x.shape[0], 1) + x.shape[1:])
        bottleneck, skips = self.spl_forward(x)
        return self.fsl_forward(self.rrl_forward(bottleneck), skips)

    def __call__(self, windows):
        return self.forward(windows)

    def zero_head(self):
        """Zero the output head so the untrained model predicts no residual"""
        self.head_weight.data[...] = 0.0
        self.head_bias.data[...] = 0.0


def fgdl_loss(prediction, target):
    """Mean squared error between the predicted and the true residual over all elements"""
    target = as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"fgdl_loss: prediction {prediction.shape} and target {target.shape} "
                         f"differ in shape")
    return mean_all(square(sub(prediction, target)))


def window_table(table, arch):
    """Windows of the table following the sliding-window switch of the architecture"""
    if arch.use_sliding_window:
        return sliding_windows(table, arch.window_length, arch.stride)
    return chunk_windows(table, arch.window_length)


@dataclass
class FusionResult:
    """Predicted residual and fused response, both N x d_y in physical units"""
    delta: np.ndarray
    fused: np.ndarray


def predict_windows(model, blocks, batch_size=64):
    """Network output for a stack of normalized windows, as a K x L x d_y array"""
    outputs = list()
    for start in range(0, len(blocks), batch_size):
        outputs.append(model.forward(Tensor(blocks[start:start + batch_size])).data[:, 0])
    return np.concatenate(outputs, axis=0)


def fuse_inference(model, states, y_low, batch_size=64):
    """
    Full-sequence inference

    The sequence ``[x, y_low]`` is normalized, windowed and passed through the network window by
    window. The window outputs are averaged back onto the rows, denormalized and superposed on
    the low fidelity response.

    Parameters
    ----------
    model: LGFNetModel
        Trained model; it is switched to evaluation mode
    states: array_like
        N x p states in physical units
    y_low: array_like
        N x d_y low fidelity responses in physical units

    Returns
    -------
    FusionResult:
        The residual and ``y_fused = y_low + delta``
    """
    states = as_matrix(states, "states")
    y_low = np.asarray(y_low, dtype=np.float64).reshape(len(states), -1)
    table = np.hstack([states, y_low])
    if table.shape[1] != model.arch.input_width:
        raise ShapeError(f"Table width {table.shape[1]} does not match the model feature width "
                         f"{model.arch.input_width}")
    model.eval()
    batch = window_table(normalize(table, model.input_stats), model.arch)
    outputs = predict_windows(model, batch.blocks, batch_size)
    delta = denormalize(reconstruct_from_windows(batch, outputs), model.residual_stats)
    logger.debug(f"Fused {len(states)} rows from {len(batch)} windows")
    return FusionResult(delta=delta, fused=y_low + delta)
