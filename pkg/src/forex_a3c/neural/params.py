"""Parameter storage, initialisation and checkpoint files for the actor/critic pair."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from math import prod, sqrt
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

NETS = ("actor", "critic")
MAGIC = b"FXA3C-PARAMS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt checkpoint or architecture mismatch."""


@dataclass(frozen=True)
class Architecture:
    """Layer sizes of one LSTM-MLP stack; actor and critic share the shape."""

    n_features: int = 5
    hidden: int = 128
    fc1: int = 32
    fc2: int = 64
    fc3: int = 64
    window: int = 16
    n_actions: int = 3
    # fixed gain on the ratio features before the LSTM; raw ratios are ~1e-3
    input_scale: float = 100.0

    @property
    def concat(self) -> int:
        # fc1 output joined with the flattened one-hot action history
        return self.fc1 + self.n_actions * self.window

    def head_size(self, net: str) -> int:
        return self.n_actions if net == "actor" else 1

    def net_layout(self, net: str) -> List[Tuple[str, Tuple[int, ...]]]:
        H = self.hidden
        return [
            ("lstm.w_ih", (4 * H, self.n_features)),
            ("lstm.w_hh", (4 * H, H)),
            ("lstm.b", (4 * H,)),
            ("fc1.w", (self.fc1, H)),
            ("fc1.b", (self.fc1,)),
            ("fc2.w", (self.fc2, self.concat)),
            ("fc2.b", (self.fc2,)),
            ("fc3.w", (self.fc3, self.fc2)),
            ("fc3.b", (self.fc3,)),
            ("out.w", (self.head_size(net), self.fc3)),
            ("out.b", (self.head_size(net),)),
        ]

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(f"{net}.{name}", shape) for net in NETS for name, shape in self.net_layout(net)]

    @property
    def size(self) -> int:
        return sum(prod(shape) for _, shape in self.layout())

    def to_dict(self) -> dict:
        return asdict(self)


class ParameterSet:
    """Named tensors that are views into one flat float64 buffer.

    The flat buffer may live in shared memory; every tensor then aliases it.
    Gradients use the same class.
    """

    def __init__(self, arch: Architecture = Architecture(), flat: Optional[np.ndarray] = None):
        self.arch = arch
        size = arch.size
        if flat is None:
            flat = np.zeros(size)
        if flat.dtype != np.float64 or flat.ndim != 1 or flat.shape[0] != size:
            raise ValueError(f"flat buffer must be float64 of length {size}")
        self.flat = flat
        self.tensors: Dict[str, np.ndarray] = {}
        self.slices: Dict[str, slice] = {}
        offset = 0
        for name, shape in arch.layout():
            n = prod(shape)
            self.slices[name] = slice(offset, offset + n)
            self.tensors[name] = flat[offset:offset + n].reshape(shape)
            offset += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def keys(self):
        return self.tensors.keys()

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.arch, self.flat.copy())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(self.arch)

    def copy_from(self, other: "ParameterSet") -> None:
        np.copyto(self.flat, other.flat)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.flat, self.flat)))

    def equal(self, other: "ParameterSet") -> bool:
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)

    def digest(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()

    def __repr__(self) -> str:
        return f"ParameterSet({len(self)} tensors, {self.flat.size} values)"


Gradients = ParameterSet


def init_parameters(rng: np.random.Generator, arch: Architecture = Architecture()) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, LSTM forget bias 1."""
    params = ParameterSet(arch)
    for name, tensor in params.items():
        if tensor.ndim == 2:
            bound = 1.0 / sqrt(tensor.shape[1])
            tensor[...] = rng.uniform(-bound, bound, tensor.shape)
        elif name.endswith("lstm.b"):
            H = arch.hidden
            tensor[H:2 * H] = 1.0
    return params


def serialize_parameters(params: ParameterSet, path) -> None:
    """Write a versioned checkpoint: magic line, JSON header line, raw little-endian doubles."""
    data = params.flat.astype("<f8", copy=False).tobytes()
    header = {
        "format": "forex_a3c.parameters",
        "version": FORMAT_VERSION,
        "architecture": params.arch.to_dict(),
        "tensors": [{"name": n, "shape": list(s)} for n, s in params.arch.layout()],
        "count": params.flat.size,
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data)


def deserialize_parameters(path, expected: Optional[Architecture] = None) -> ParameterSet:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline()
        if not magic.startswith(MAGIC):
            raise CheckpointError(f"{path}: not a parameter checkpoint")
        try:
            header = json.loads(fh.readline())
        except ValueError as exc:
            raise CheckpointError(f"{path}: unreadable header ({exc})") from None
        data = fh.read()
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    try:
        arch = Architecture(**header["architecture"])
    except TypeError as exc:
        raise CheckpointError(f"{path}: bad architecture block ({exc})") from None
    stored = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    for (name, shape), (want_name, want_shape) in zip(stored, arch.layout()):
        if name != want_name or shape != want_shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {shape}, "
                                  f"architecture implies {want_name} {want_shape}")
    if len(stored) != len(arch.layout()):
        raise CheckpointError(f"{path}: expected {len(arch.layout())} tensors, found {len(stored)}")
    if len(data) != 8 * arch.size or hashlib.sha256(data).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: payload truncated or corrupt")
    if expected is not None and expected != arch:
        diff = {k: (v, getattr(expected, k)) for k, v in arch.to_dict().items()
                if getattr(expected, k) != v}
        raise CheckpointError(f"{path}: architecture mismatch (checkpoint, expected): {diff}")
    flat = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return ParameterSet(arch, flat)
