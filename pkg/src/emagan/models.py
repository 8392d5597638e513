"""Trajectory generator and waveform critic as pure functions of parameters.

The generator maps a 100-dim latent to 13 articulator-style channels of 256
samples at 200 Hz; the critic scores 20480-sample waveforms. Parameters live
in ModelParams containers; forward passes never mutate them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor

# Channel layout: x/y per sensor (lower incisor, upper lip, lower lip,
# tongue tip, tongue body, tongue dorsum) plus one voicing channel.
CHANNEL_NAMES = (
    "li_x", "li_y", "ul_x", "ul_y", "ll_x", "ll_y",
    "tt_x", "tt_y", "tb_x", "tb_y", "td_x", "td_y",
    "voicing",
)
CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNEL_NAMES)}
PLACES = ("li", "ul", "ll", "tt", "tb", "td")
N_CHANNELS = 13
EMA_RATE = 200

Z_DIM = 100
GEN_SEQ_LEN = 256
KERNEL = 25
# (in_channels, out_channels, stride) per transposed-conv layer; lengths go
# 16 -> 32 -> 64 -> 128 -> 128 -> 256.
GEN_PROJ_LEN = 16
GEN_PROJ_CH = 512
GEN_LAYERS = (
    (512, 512, 2),
    (512, 512, 2),
    (512, 256, 2),
    (256, 256, 1),
    (256, 13, 2),
)

WAV_LEN = 20480
CRITIC_LAYERS = (
    (1, 64, 4),
    (64, 128, 4),
    (128, 256, 4),
    (256, 512, 4),
    (512, 512, 4),
)
CRITIC_FLAT = 512 * (WAV_LEN // 4 ** 5)  # 512 * 20
CRITIC_ALPHA = 0.2
PHASE_SHUFFLE_N = 2


@dataclass
class EmaTrajectory:
    """13 named channels x T samples at 200 Hz."""

    channels: np.ndarray
    sample_rate: int = EMA_RATE

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != N_CHANNELS:
            raise ContractViolation(
                f"EmaTrajectory: expected ({N_CHANNELS}, T) channels, "
                f"got {self.channels.shape}"
            )
        if self.sample_rate != EMA_RATE:
            raise ContractViolation("EmaTrajectory: sample_rate is fixed at 200")

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNEL_INDEX:
            raise ContractViolation(f"EmaTrajectory: unknown channel {name!r}")
        return self.channels[CHANNEL_INDEX[name]]


class ModelParams:
    """Ordered, named parameter tensors with per-tensor trainable flags."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ContractViolation(f"ModelParams: duplicate name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        if name not in self._tensors:
            raise ContractViolation(f"ModelParams: no parameter named {name!r}")
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_items(self):
        return [(n, t) for n, t in self._tensors.items() if self._trainable[n]]

    def content_hash(self) -> str:
        """SHA-256 over names, shapes, and raw little-endian float64 bytes."""
        h = hashlib.sha256()
        for name, t in self._tensors.items():
            h.update(name.encode())
            h.update(repr(t.data.shape).encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def detached_view(self) -> "ModelParams":
        """Same storage, fresh non-grad leaves: forward-only use."""
        view = ModelParams()
        for name, t in self._tensors.items():
            view._tensors[name] = Tensor(t.data)
            view._trainable[name] = False
        return view


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sample_latent(rng: np.random.Generator, batch: int) -> Tensor:
    """Batch of latent vectors, i.i.d. uniform on [-1, 1]."""
    return Tensor(rng.uniform(-1.0, 1.0, size=(batch, Z_DIM)))


def init_generator_params(seed) -> ModelParams:
    """Centered-uniform 1/sqrt(fan-in) weights, zero biases, fixed seed."""
    rng = np.random.default_rng(seed)
    p = ModelParams()
    out_dim = GEN_PROJ_LEN * GEN_PROJ_CH
    p.add("proj.w", _uniform_fan_in(rng, (Z_DIM, out_dim), Z_DIM))
    p.add("proj.b", np.zeros(out_dim))
    for i, (cin, cout, _stride) in enumerate(GEN_LAYERS):
        p.add(f"up{i}.k", _uniform_fan_in(rng, (cin, cout, KERNEL), cin * KERNEL))
        p.add(f"up{i}.b", np.zeros(cout))
    return p


def init_critic_params(seed) -> ModelParams:
    rng = np.random.default_rng(seed)
    p = ModelParams()
    for i, (cin, cout, _stride) in enumerate(CRITIC_LAYERS):
        p.add(f"down{i}.k", _uniform_fan_in(rng, (cout, cin, KERNEL), cin * KERNEL))
        p.add(f"down{i}.b", np.zeros(cout))
    p.add("score.w", _uniform_fan_in(rng, (CRITIC_FLAT, 1), CRITIC_FLAT))
    p.add("score.b", np.zeros(1))
    return p


def generator_forward(params: ModelParams, z: Tensor, return_activations: bool = False):
    """Latent batch (B, 100) -> trajectory batch (B, 13, 256), tanh-bounded.

    Dense projection to 16 frames x 512 channels, relu, then five transposed
    convs (strides 2,2,2,1,2, kernel 25) with relu between and tanh at the end.
    """
    if z.data.ndim != 2 or z.data.shape[1] != Z_DIM:
        raise ContractViolation(f"generator_forward: expected (B, {Z_DIM}) latents")
    B = z.data.shape[0]
    h = ad.dense(z, params["proj.w"], params["proj.b"])
    h = ad.reshape(h, (B, GEN_PROJ_CH, GEN_PROJ_LEN))
    h = ad.relu(h)
    activations = []
    last = len(GEN_LAYERS) - 1
    for i, (_cin, _cout, stride) in enumerate(GEN_LAYERS):
        h = ad.conv1d_transpose(h, params[f"up{i}.k"], stride)
        h = ad.channel_bias_add(h, params[f"up{i}.b"])
        h = ad.tanh(h) if i == last else ad.relu(h)
        activations.append(h)
    if return_activations:
        return h, activations
    return h


def phase_shuffle(x: Tensor, n: int, rng: np.random.Generator | None) -> Tensor:
    """Shift the last axis by a uniform integer in [-n, n], reflecting at edges.

    One shift is drawn per call (shared across the batch) and treated as a
    constant in backward. n=0 or rng=None is the identity.
    """
    if n < 0:
        raise ContractViolation("phase_shuffle: n must be >= 0")
    L = x.data.shape[-1]
    if n >= L:
        raise ContractViolation("phase_shuffle: n must be smaller than the length")
    if n == 0 or rng is None:
        return x
    shift = int(rng.integers(-n, n + 1))
    if shift == 0:
        return x
    idx = np.arange(L) + shift
    # reflect without repeating the edge sample: L -> L-2, -1 -> 1
    idx = np.where(idx >= L, 2 * (L - 1) - idx, np.abs(idx))
    return ad.gather_last(x, idx)


def critic_forward(
    params: ModelParams,
    audio: Tensor,
    shuffle_n: int = PHASE_SHUFFLE_N,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Waveform batch (B, 1, 20480) -> score (B, 1).

    Five stride-4 kernel-25 convs (widths 64,128,256,512,512), leaky_relu(0.2),
    phase shuffle after each of the first four layers, flatten 20x512, dense.
    Inputs are zero-padded per layer so each conv divides the length by exactly
    its stride. rng=None runs shuffle-free (deterministic).
    """
    if audio.data.ndim != 3 or audio.data.shape[1] != 1:
        raise ContractViolation("critic_forward: expected (B, 1, L) input")
    if audio.data.shape[2] != WAV_LEN:
        raise ContractViolation(
            f"critic_forward: input length must be {WAV_LEN}, "
            f"got {audio.data.shape[2]}"
        )
    B = audio.data.shape[0]
    h = audio
    last = len(CRITIC_LAYERS) - 1
    for i, (_cin, _cout, stride) in enumerate(CRITIC_LAYERS):
        h = ad.pad_conv1d(h, params[f"down{i}.k"], stride)
        h = ad.channel_bias_add(h, params[f"down{i}.b"])
        h = ad.leaky_relu(h, CRITIC_ALPHA)
        if i != last:
            h = phase_shuffle(h, shuffle_n, rng)
    h = ad.reshape(h, (B, CRITIC_FLAT))
    return ad.dense(h, params["score.w"], params["score.b"])
