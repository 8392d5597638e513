"""Audio, trajectory, dataset, and checkpoint persistence.

WAV files are mono PCM16 at 16 kHz. Trajectories are CSV with a fixed header.
Checkpoints are a single binary blob: magic, version, JSON manifest, raw
little-endian float64 parameter/optimizer data, SHA-256 checksum. Readers
reject rather than coerce.
"""

from __future__ import annotations

import hashlib
import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ContractViolation
from .models import CHANNEL_NAMES, EmaTrajectory, ModelParams
from .physics import WAV_RATE, Waveform

WAV_SCALE = 32768.0
TARGET_LEN = 20480

CHECKPOINT_MAGIC = b"EMAGANC1"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    """An input file violates its documented format contract."""


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------


def wav_read(path) -> Waveform:
    """Read a mono PCM16 16 kHz RIFF/WAVE file; samples scaled by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            rate = f.getframerate()
            width = f.getsampwidth()
            nframes = f.getnframes()
            raw = f.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        raise DataFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})")
    if channels != 1:
        raise DataFormatError(f"{path}: expected mono audio, got {channels} channels")
    if rate != WAV_RATE:
        raise DataFormatError(
            f"{path}: expected sample rate {WAV_RATE} Hz, got {rate} Hz"
        )
    if width != 2:
        raise DataFormatError(
            f"{path}: expected 16-bit PCM, got sample width {width * 8} bits"
        )
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / WAV_SCALE)


def wav_write(path, waveform: Waveform) -> None:
    """Write mono PCM16 at 16 kHz; rounds to nearest with clamping."""
    samples = np.asarray(waveform.samples, dtype=np.float64)
    if not np.isfinite(samples).all():
        raise DataFormatError(f"{path}: non-finite samples")
    ints = np.clip(np.rint(samples * WAV_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(WAV_RATE)
        f.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

_EMA_HEADER = ",".join(CHANNEL_NAMES)


def ema_read(path) -> EmaTrajectory:
    """Read a trajectory CSV; the header must match the channel list exactly."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty trajectory file")
    header = [c.strip() for c in lines[0].split(",")]
    expected = list(CHANNEL_NAMES)
    if header != expected:
        for i, name in enumerate(expected):
            if i >= len(header):
                raise DataFormatError(f"{path}: missing column {name!r}")
            if header[i] != name:
                raise DataFormatError(
                    f"{path}: column {i} is {header[i]!r}, expected {name!r}"
                )
        raise DataFormatError(
            f"{path}: extra column(s) {header[len(expected):]!r}"
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(expected):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(expected)} values, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}")
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    return EmaTrajectory(np.asarray(rows, dtype=np.float64).T)


def ema_write(path, traj: EmaTrajectory) -> None:
    """Write a trajectory CSV; float repr keeps the roundtrip bit-exact."""
    cols = traj.channels.T
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_EMA_HEADER + "\n")
        for row in cols:
            f.write(",".join(repr(v) for v in row.tolist()) + "\n")


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class DatasetItem:
    name: str
    samples: np.ndarray  # exactly TARGET_LEN values in [-1, 1]


@dataclass
class Dataset:
    items: list

    def __len__(self) -> int:
        return len(self.items)

    def stack(self) -> np.ndarray:
        """(N, 1, TARGET_LEN) array of all items."""
        if not self.items:
            raise ContractViolation("Dataset.stack: dataset is empty")
        return np.stack([it.samples for it in self.items])[:, None, :]


def _fit_length(samples: np.ndarray, target: int) -> np.ndarray:
    n = samples.shape[0]
    if n == target:
        return samples
    if n < target:
        left = (target - n) // 2
        return np.pad(samples, (left, target - n - left))
    start = (n - target) // 2
    return samples[start : start + target]


def dataset_load(directory, target_len: int = TARGET_LEN) -> Dataset:
    """Load every .wav in a directory, zero-padded/center-cropped to target_len.

    Ordering is deterministic (sorted by filename).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError(f"{directory}: not a directory")
    paths = sorted(directory.glob("*.wav"))
    if not paths:
        raise DataFormatError(f"{directory}: no .wav files found")
    items = []
    for p in paths:
        wav = wav_read(p)
        items.append(DatasetItem(p.stem, _fit_length(wav.samples, target_len)))
    return Dataset(items)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _blob_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def checkpoint_save(path, groups: dict, adam: dict, config: dict, step: int) -> None:
    """Serialize named parameter groups plus optimizer state.

    ``groups`` maps group name -> ModelParams. ``adam`` maps group name ->
    AdamState-like object with .m/.v dicts and .t counter (may be empty).
    Layout: magic | u32 version | u64 header_len | JSON header | float64
    blobs in manifest order | sha256 of everything before the digest.
    """
    manifest: dict = {"config": config, "step": int(step), "groups": {}, "adam": {}}
    blobs: list[bytes] = []
    for gname in sorted(groups):
        params: ModelParams = groups[gname]
        entries = []
        for name, tensor in params.items():
            entries.append(
                {
                    "name": name,
                    "shape": list(tensor.data.shape),
                    "trainable": params.is_trainable(name),
                }
            )
            blobs.append(_blob_bytes(tensor.data))
        manifest["groups"][gname] = entries
    for gname in sorted(adam):
        state = adam[gname]
        names = sorted(state.m)
        manifest["adam"][gname] = {"t": int(state.t), "names": names}
        for name in names:
            blobs.append(_blob_bytes(state.m[name]))
            blobs.append(_blob_bytes(state.v[name]))
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + struct.pack("<Q", len(header))
        + header
        + b"".join(blobs)
    )
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(digest)


def checkpoint_load(path):
    """Inverse of checkpoint_save. Returns (groups, adam, config, step).

    ``groups`` values are ModelParams with trainable flags restored; ``adam``
    values are plain objects with .m/.v/.t.
    """
    from .training import AdamState  # local import to avoid a cycle

    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 12 + 32:
        raise DataFormatError(f"{path}: truncated checkpoint")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic; not a checkpoint file")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch; file corrupted")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", payload, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint version {version} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    (hlen,) = struct.unpack_from("<Q", payload, off)
    off += 8
    manifest = json.loads(payload[off : off + hlen].decode())
    off += hlen

    def take(shape) -> np.ndarray:
        nonlocal off
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        off += nbytes
        return arr.reshape(shape).copy()

    groups: dict[str, ModelParams] = {}
    for gname in sorted(manifest["groups"]):
        params = ModelParams()
        for entry in manifest["groups"][gname]:
            params.add(
                entry["name"], take(entry["shape"]), trainable=entry["trainable"]
            )
        groups[gname] = params
    adam: dict = {}
    for gname in sorted(manifest["adam"]):
        info = manifest["adam"][gname]
        state = AdamState()
        state.t = int(info["t"])
        for name in info["names"]:
            shape = None
            for entry in manifest["groups"].get(gname, []):
                if entry["name"] == name:
                    shape = entry["shape"]
                    break
            if shape is None:
                raise DataFormatError(
                    f"{path}: optimizer state for unknown parameter {name!r}"
                )
            state.m[name] = take(shape)
            state.v[name] = take(shape)
        adam[gname] = state
    if off != len(payload):
        raise DataFormatError(f"{path}: trailing bytes after blobs")
    return groups, adam, manifest["config"], manifest["step"]
