"""Frozen, differentiable trajectory-to-waveform synthesizers.

Both stand-ins share one contract: a (B, 13, T) trajectory batch at 200 Hz in,
a (B, 1, 80*T) waveform batch at 16 kHz out, gradients flowing to the input,
parameters never updating. ``source_filter`` is an interpretable formant
synthesizer; ``frozen_random`` is a fixed random upsampling network built from
the same op set as the generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor
from .models import CHANNEL_INDEX, KERNEL, ModelParams, N_CHANNELS, _uniform_fan_in

WAV_RATE = 16000
FRAME_HOP = 80    # 16000 / 200
FRAME_WIN = 160
F0_HZ = 120.0
FIR_LEN = 160
BANDWIDTHS_HZ = (80.0, 120.0, 160.0)
FORMANT_BASE_HZ = (300.0, 800.0, 2000.0)
FORMANT_SPAN_HZ = (400.0, 1400.0, 1000.0)
FORMANT_DRIVERS = ("tb_y", "tb_x", "tt_y")
FORMANT_INPUT_SCALE = 2.0
NOISE_SIGMA = 0.1
PHYSICAL_KINDS = ("source_filter", "frozen_random")


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = WAV_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ContractViolation("Waveform: expected a 1-D sample array")
        if self.sample_rate != WAV_RATE:
            raise ContractViolation("Waveform: sample_rate is fixed at 16000")

    @property
    def length(self) -> int:
        return self.samples.shape[0]


def _validate_ema_batch(ema: Tensor) -> tuple[int, int]:
    if ema.data.ndim != 3 or ema.data.shape[1] != N_CHANNELS:
        raise ContractViolation(
            f"physical_forward: expected (B, {N_CHANNELS}, T) input, "
            f"got {ema.data.shape}"
        )
    B, _, T = ema.data.shape
    if T < 2:
        raise ContractViolation("physical_forward: T must be >= 2")
    if not np.isfinite(ema.data).all():
        raise ContractViolation("physical_forward: non-finite trajectory values")
    return B, T


class SourceFilterModel:
    """Pulse/noise excitation through articulator-driven formant FIRs.

    Per frame: the voicing channel sets the pulse/noise mix, three channel
    positions set the formant center frequencies, the lip aperture sets the
    gain. Filtered frames are Hann-windowed and overlap-added at hop 80.
    No trainable parameters; the noise excitation is seed-fixed.
    """

    kind = "source_filter"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.frame_hop = FRAME_HOP
        self.frame_window = FRAME_WIN
        self.params = ModelParams()  # intentionally empty: nothing trainable
        # Periodic Hann: adjacent hops sum to exactly 1.
        n = np.arange(FRAME_WIN)
        self._window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / FRAME_WIN)
        # Kernels are built index-reversed so a valid correlation of the
        # left-padded frame realizes causal convolution.
        rev = np.arange(FIR_LEN - 1, -1, -1, dtype=np.float64)
        self._freq_rev = 2.0 * np.pi * rev / WAV_RATE          # times F -> phase
        self._decay_rev = []
        for bw in BANDWIDTHS_HZ:
            alpha = np.pi * bw / WAV_RATE
            self._decay_rev.append((1.0 - np.exp(-alpha)) * np.exp(-alpha * rev))
        self._excitation_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _excitation_frames(self, T: int) -> tuple[np.ndarray, np.ndarray]:
        """(T, 160) pulse-train and noise frames; pure function of (seed, T)."""
        cached = self._excitation_cache.get(T)
        if cached is not None:
            return cached
        total = (T - 1) * FRAME_HOP + FRAME_WIN
        # Unit impulses wherever the running pitch phase crosses an integer.
        phase = np.arange(1, total + 1) * (F0_HZ / WAV_RATE)
        pulses = np.floor(phase) - np.floor(phase - F0_HZ / WAV_RATE)
        pulse_signal = pulses.astype(np.float64)
        noise_signal = np.random.default_rng(self.seed).normal(
            0.0, NOISE_SIGMA, size=total
        )
        sw = np.lib.stride_tricks.sliding_window_view
        p_frames = np.ascontiguousarray(sw(pulse_signal, FRAME_WIN)[::FRAME_HOP][:T])
        n_frames = np.ascontiguousarray(sw(noise_signal, FRAME_WIN)[::FRAME_HOP][:T])
        self._excitation_cache[T] = (p_frames, n_frames)
        return p_frames, n_frames

    def forward(self, ema: Tensor) -> Tensor:
        B, T = _validate_ema_batch(ema)
        p_frames, n_frames = self._excitation_frames(T)
        p_const = Tensor(np.broadcast_to(p_frames, (B, T, FRAME_WIN)).copy())
        n_const = Tensor(np.broadcast_to(n_frames, (B, T, FRAME_WIN)).copy())

        voicing = ad.channel(ema, CHANNEL_INDEX["voicing"])            # (B, T)
        v = ad.clamp(ad.scale(ad.shift(voicing, 1.0), 0.5), 0.0, 1.0)
        v3 = ad.expand(v, 2, FRAME_WIN)
        one_minus_v3 = ad.shift(ad.neg(v3), 1.0)
        source = ad.add(ad.mul(v3, p_const), ad.mul(one_minus_v3, n_const))

        # Summed formant FIR bank (correlation is linear in the kernel).
        kernel = None
        freq_const = Tensor(
            np.broadcast_to(self._freq_rev, (B, T, FIR_LEN)).copy()
        )
        for i, driver in enumerate(FORMANT_DRIVERS):
            drive = ad.channel(ema, CHANNEL_INDEX[driver])
            hz = ad.shift(
                ad.scale(
                    ad.sigmoid(ad.scale(drive, FORMANT_INPUT_SCALE)),
                    FORMANT_SPAN_HZ[i],
                ),
                FORMANT_BASE_HZ[i],
            )                                                          # (B, T)
            angle = ad.mul(ad.expand(hz, 2, FIR_LEN), freq_const)
            decay_const = Tensor(
                np.broadcast_to(self._decay_rev[i], (B, T, FIR_LEN)).copy()
            )
            h = ad.mul(ad.cos(angle), decay_const)
            kernel = h if kernel is None else ad.add(kernel, h)

        filtered = ad.framewise_correlate(
            ad.pad_last(source, FIR_LEN - 1, 0), kernel
        )                                                              # (B, T, 160)

        ul = ad.channel(ema, CHANNEL_INDEX["ul_y"])
        ll = ad.channel(ema, CHANNEL_INDEX["ll_y"])
        gain = ad.clamp(
            ad.scale(ad.shift(ad.scale(ad.sub(ul, ll), 0.5), 1.0), 0.5),
            0.05, 1.0,
        )                                                              # (B, T)
        window_const = Tensor(np.broadcast_to(self._window, (B, T, FRAME_WIN)).copy())
        shaped = ad.mul(ad.mul(filtered, ad.expand(gain, 2, FRAME_WIN)), window_const)

        acc = ad.overlap_add(shaped, FRAME_HOP)          # (B, 80*T + 80)
        wave = ad.tanh(ad.slice_last(acc, 0, FRAME_HOP * T))
        return ad.reshape(wave, (B, 1, FRAME_HOP * T))

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(b"source_filter")
        h.update(str(self.seed).encode())
        consts = (F0_HZ, NOISE_SIGMA, *BANDWIDTHS_HZ, *FORMANT_BASE_HZ,
                  *FORMANT_SPAN_HZ, FORMANT_INPUT_SCALE)
        h.update(np.asarray(consts).tobytes())
        h.update(self.params.content_hash().encode())
        return h.hexdigest()


FROZEN_LAYERS = (
    (13, 64, 4),
    (64, 32, 4),
    (32, 1, 5),
)


class FrozenRandomModel:
    """Three fixed random transposed convs (strides 4*4*5 = 80), tanh throughout."""

    kind = "frozen_random"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.frame_hop = FRAME_HOP
        self.frame_window = FRAME_WIN
        rng = np.random.default_rng(seed)
        params = ModelParams()
        for i, (cin, cout, _stride) in enumerate(FROZEN_LAYERS):
            params.add(
                f"syn{i}.k",
                _uniform_fan_in(rng, (cin, cout, KERNEL), cin * KERNEL),
                trainable=False,
            )
            params.add(f"syn{i}.b", np.zeros(cout), trainable=False)
        self.params = params

    def replace_params(self, loaded: ModelParams) -> None:
        """Install imported weights; shapes must match, flags forced frozen."""
        fresh = ModelParams()
        for name, t in self.params.items():
            if name not in loaded:
                raise ContractViolation(f"frozen_random import: missing {name!r}")
            got = loaded[name].data
            if got.shape != t.data.shape:
                raise ContractViolation(
                    f"frozen_random import: shape mismatch for {name!r}"
                )
            fresh.add(name, got, trainable=False)
        self.params = fresh

    def forward(self, ema: Tensor) -> Tensor:
        B, T = _validate_ema_batch(ema)
        h = ema
        for i, (_cin, _cout, stride) in enumerate(FROZEN_LAYERS):
            h = ad.conv1d_transpose(h, self.params[f"syn{i}.k"], stride)
            h = ad.channel_bias_add(h, self.params[f"syn{i}.b"])
            h = ad.tanh(h)
        return h  # (B, 1, 80*T)

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(b"frozen_random")
        h.update(str(self.seed).encode())
        h.update(self.params.content_hash().encode())
        return h.hexdigest()


def make_physical(kind: str, seed: int):
    if kind == "source_filter":
        return SourceFilterModel(seed)
    if kind == "frozen_random":
        return FrozenRandomModel(seed)
    raise ContractViolation(
        f"unknown physical model kind {kind!r}; expected one of {PHYSICAL_KINDS}"
    )


def physical_forward(model, ema: Tensor) -> Tensor:
    """Run a synthesizer on a (B, 13, T) batch -> (B, 1, 80*T) waveforms."""
    return model.forward(ema)


def params_hash(model) -> str:
    return model.params_hash()
