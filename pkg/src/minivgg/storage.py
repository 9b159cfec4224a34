"""Binary checkpoint, feature and SVM files, and key=value config files.

All binary formats are little-endian.

Checkpoint (version 1, no checksum)::

    b"P205VGG\\0"  u32 version
    u8 variant ('A'|'B'|'D')  u32 scale numerator  u32 scale denominator
    u32 input_size  u32 num_classes  u32 fc_width
    3 x f32 channel mean  u64 iteration  u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 data

Feature file (version 1)::

    b"P205FEAT"  u32 version  u32 n  u32 d  n*d f32  n u32 labels

SVM model (version 1)::

    b"P205SVM\\0"  u32 version  u32 K  u32 d  f64 C  K*d f32 weights  K f32 biases  K f64 objective
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError
from .evaluate import FeatureMatrix, SvmModel
from .model import ArchConfig, Network

CKPT_MAGIC = b"P205VGG\0"
FEAT_MAGIC = b"P205FEAT"
SVM_MAGIC = b"P205SVM\0"
VERSION = 1


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: need {n} bytes at offset {self.pos}, "
                              f"only {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count)

    def header(self, magic: bytes):
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("I")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")


# -- checkpoints -------------------------------------------------------------------

def checkpoint_bytes(network: Network) -> bytes:
    c = network.config
    scale = Fraction(c.width_scale)
    out = [CKPT_MAGIC, struct.pack("<I", VERSION),
           struct.pack("<BIIIII", ord(c.variant), scale.numerator, scale.denominator,
                       c.input_size, c.num_classes, c.fc_width),
           np.asarray(network.channel_mean, dtype="<f4").tobytes(),
           struct.pack("<QI", int(getattr(network, "iteration", 0)), len(network.params))]
    for name, t in network.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        out.append(struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(network: Network, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(network))


def parse_checkpoint(data: bytes, dropout_ratio: float = 0.5) -> Network:
    r = _Reader(data)
    r.header(CKPT_MAGIC)
    variant, num, den, input_size, num_classes, fc_width = r.unpack("BIIIII")
    if den == 0:
        raise FormatError("checkpoint width_scale has zero denominator")
    try:
        config = ArchConfig(chr(variant), Fraction(num, den), input_size, num_classes, fc_width)
    except ConfigError as exc:
        raise IntegrityError(f"checkpoint declares an invalid architecture: {exc}") from None
    mean = r.array("<f4", 3).astype(np.float32)
    iteration, count = r.unpack("QI")
    expected = config.param_shapes()
    if count != len(expected):
        raise IntegrityError(f"checkpoint holds {count} tensors, {config.arch_name} needs {len(expected)}")
    params = {}
    for _ in range(count):
        (length,) = r.unpack("H")
        start = r.pos
        try:
            name = r.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor name at offset {start} is not UTF-8") from None
        (rank,) = r.unpack("B")
        shape = r.unpack(f"{rank}I") if rank else ()
        if name not in expected:
            raise IntegrityError(f"unexpected tensor {name!r}")
        if tuple(shape) != expected[name]:
            raise IntegrityError(f"{name}: stored shape {tuple(shape)} disagrees with "
                                 f"architecture shape {expected[name]}")
        params[name] = r.array("<f4", int(np.prod(shape))).astype(np.float32).reshape(shape)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after offset {r.pos}")
    params = {k: params[k] for k in expected}
    net = Network(config, params, dropout_ratio)
    net.channel_mean = mean
    net.iteration = iteration
    return net


def load_checkpoint(path, dropout_ratio: float = 0.5) -> Network:
    return parse_checkpoint(Path(path).read_bytes(), dropout_ratio)


# -- features ----------------------------------------------------------------------

def save_features(fm: FeatureMatrix, path) -> None:
    n, d = fm.features.shape
    Path(path).write_bytes(FEAT_MAGIC + struct.pack("<III", VERSION, n, d)
                           + np.ascontiguousarray(fm.features, dtype="<f4").tobytes()
                           + np.asarray(fm.labels, dtype="<u4").tobytes())


def load_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    r = _Reader(data)
    r.header(FEAT_MAGIC)
    n, d = r.unpack("II")
    feats = r.array("<f4", n * d).astype(np.float32).reshape(n, d)
    labels = r.array("<u4", n).astype(np.int64)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after offset {r.pos}")
    zero = np.flatnonzero(~feats.any(axis=1))
    return FeatureMatrix(feats, labels, zero)


def save_svm(model: SvmModel, path) -> None:
    k, d = model.weights.shape
    Path(path).write_bytes(SVM_MAGIC + struct.pack("<IIId", VERSION, k, d, model.C)
                           + np.ascontiguousarray(model.weights, dtype="<f4").tobytes()
                           + np.asarray(model.biases, dtype="<f4").tobytes()
                           + np.asarray(model.objective, dtype="<f8").tobytes())


def load_svm(path) -> SvmModel:
    data = Path(path).read_bytes()
    r = _Reader(data)
    r.header(SVM_MAGIC)
    k, d, c = r.unpack("IId")
    w = r.array("<f4", k * d).astype(np.float32).reshape(k, d)
    b = r.array("<f4", k).astype(np.float32)
    obj = r.array("<f8", k).astype(np.float64)
    return SvmModel(w, b, c, obj)


# -- config files --------------------------------------------------------------------

# key -> (type, default). ``None`` default marks a key without a default.
CONFIG_SCHEMA: dict[str, tuple[str, object]] = {
    "arch": ("str", "vgg11"),
    "scale": ("str", "1/8"),
    "base_size": ("int", 64),
    "crop_size": ("int", 56),
    "scale_set": ("list", [64, 56, 50, 42]),
    "flip_prob": ("float", 0.5),
    "batch_size": ("int", 64),
    "momentum": ("float", 0.9),
    "weight_decay": ("float", 0.0005),
    "lr_initial": ("float", 0.01),
    "lr_gamma": ("float", 0.1),
    "lr_step": ("int", 1000),
    "max_iter": ("int", 3000),
    "seed": ("int", 0),
    "workers": ("int", 1),
    "dropout_ratio": ("float", 0.5),
    "fc_width": ("int", 4096),
    "init_std": ("float", 0.05),
    "init_mode": ("str", "fixed"),
    "checkpoint_every": ("int", 0),
    "svm_c": ("float", 1.0),
    "svm_steps": ("int", 50_000),
}


class ConfigParseError(ConfigError):
    pass


def _convert(key: str, raw, kind: str, where: str):
    if not isinstance(raw, str):
        if kind == "list" and isinstance(raw, (list, tuple)):
            return [int(v) for v in raw]
        if kind == "float" and isinstance(raw, (int, float)):
            return float(raw)
        if kind == "int" and isinstance(raw, int):
            return raw
        if kind == "str" and isinstance(raw, str):
            return raw
        raise ConfigError(f"{where}: {key} expects {kind}, got {type(raw).__name__}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "list":
            return [int(v) for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {kind}, got {raw!r}") from None


def parse_config_text(text: str, overrides: dict | None = None, required=(), source: str = "<config>") -> dict:
    """Parse ``key = value`` lines. Later keys win; ``overrides`` beat the file."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigParseError(f"{source}:{lineno}: missing key")
        if key not in CONFIG_SCHEMA:
            raise ConfigParseError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, CONFIG_SCHEMA[key][0], f"{source}:{lineno}")
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw, CONFIG_SCHEMA[key][0], "command line")
    missing = sorted(k for k in required if k not in values)
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    for key, (_, default) in CONFIG_SCHEMA.items():
        values.setdefault(key, default)
    return values


def parse_config(path=None, overrides: dict | None = None, required=()) -> dict:
    if path is None:
        return parse_config_text("", overrides, required)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, overrides, required, source=str(path))
