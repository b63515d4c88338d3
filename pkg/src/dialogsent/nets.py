"""Acoustic CNN and text Conv1D+LSTM graphs.

A :class:`ModelGraph` bundles a declarative spec, the input shape, the init
seed and the torch module that evaluates it. Both networks return
``(logits, penultimate)`` where the penultimate activations are the vectors
later concatenated for late fusion.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import NUM_CLASSES
from .errors import InputError, LoadError, SpecError

BN_MOMENTUM = 0.99  # running = 0.99 * running + 0.01 * batch
BN_EPS = 1e-3


@dataclass(frozen=True)
class ConvBlockSpec:
    filters: int
    kernel: tuple[int, int] = (3, 3)
    pool: tuple[Optional[int], int] = (2, 2)
    dropout_rate: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "pool", tuple(self.pool))


@dataclass(frozen=True)
class AcousticModelSpec:
    blocks: tuple[ConvBlockSpec, ...]
    dense_sizes: tuple[int, ...]
    num_classes: int = NUM_CLASSES
    final_pool: str = "max"
    bn_momentum: float = BN_MOMENTUM

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, ConvBlockSpec) else ConvBlockSpec(**b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))
        if not blocks:
            raise SpecError("acoustic model needs at least one conv block")
        if self.num_classes != NUM_CLASSES:
            raise SpecError(f"num_classes is fixed at {NUM_CLASSES}")
        if self.final_pool not in ("max", "average"):
            raise SpecError(f"final_pool must be 'max' or 'average', got {self.final_pool!r}")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise SpecError(f"bn_momentum must lie in [0, 1), got {self.bn_momentum}")

    def to_dict(self) -> dict:
        return {"type": "acoustic", **asdict(self)}

    @classmethod
    def switchboard(cls) -> "AcousticModelSpec":
        return cls(
            blocks=(ConvBlockSpec(64), ConvBlockSpec(32), ConvBlockSpec(30, pool=(None, 2))),
            dense_sizes=(128, 64),
        )

    @classmethod
    def iemocap(cls) -> "AcousticModelSpec":
        return cls(blocks=(ConvBlockSpec(32, pool=(None, 2)),), dense_sizes=(32,))


@dataclass(frozen=True)
class TextModelSpec:
    conv_filters: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 4
    stride: int = 2
    lstm_units: int = 128
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        if self.kernel_size <= self.stride:
            raise SpecError("kernel_size must exceed stride")
        if self.num_classes != NUM_CLASSES:
            raise SpecError(f"num_classes is fixed at {NUM_CLASSES}")

    def to_dict(self) -> dict:
        return {"type": "text", **asdict(self)}


ModelSpec = Union[AcousticModelSpec, TextModelSpec]


def spec_from_dict(data: dict) -> ModelSpec:
    data = dict(data)
    kind = data.pop("type")
    if kind == "acoustic":
        return AcousticModelSpec(**data)
    if kind == "text":
        return TextModelSpec(**data)
    raise SpecError(f"unknown model type {kind!r}")


def acoustic_preset(name: str) -> AcousticModelSpec:
    presets = {"switchboard": AcousticModelSpec.switchboard, "iemocap": AcousticModelSpec.iemocap}
    try:
        return presets[name]()
    except KeyError:
        raise SpecError(f"unknown acoustic preset {name!r}; choose from {sorted(presets)}") from None


# -- modules ------------------------------------------------------------------

def _dropout(x, rate: float, training: bool, generator: Optional[torch.Generator]):
    if not training or rate <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


class _ConvBlock(nn.Module):
    def __init__(self, in_ch: int, spec: ConvBlockSpec, pool: tuple[int, int], pool_kind: str,
                 bn_momentum: float = BN_MOMENTUM):
        super().__init__()
        # torch's momentum weights the batch statistic, Keras' the running one
        self.conv1 = nn.Conv2d(in_ch, spec.filters, spec.kernel, padding="same")
        self.bn1 = nn.BatchNorm2d(spec.filters, eps=BN_EPS, momentum=1.0 - bn_momentum)
        self.conv2 = nn.Conv2d(spec.filters, spec.filters, spec.kernel, padding="same")
        self.bn2 = nn.BatchNorm2d(spec.filters, eps=BN_EPS, momentum=1.0 - bn_momentum)
        self.pool = pool
        self.pool_kind = pool_kind
        self.dropout_rate = spec.dropout_rate

    def forward(self, x, generator=None):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        if self.pool_kind == "average":
            x = F.avg_pool2d(x, self.pool)
        else:
            x = F.max_pool2d(x, self.pool)
        return _dropout(x, self.dropout_rate, self.training, generator)


class AcousticNet(nn.Module):
    def __init__(self, spec: AcousticModelSpec, input_shape: tuple[int, int, int]):
        super().__init__()
        t, f, ch = input_shape
        self.register_buffer("input_mean", torch.zeros(f))
        self.register_buffer("input_std", torch.ones(f))
        blocks = []
        for i, b in enumerate(spec.blocks):
            last = i == len(spec.blocks) - 1
            pt, pf = b.pool
            if last:
                if pt is not None and pt != t:
                    raise SpecError(f"final block pool_t must collapse time ({t}), got {pt}")
                pt = t
            elif pt is None:
                raise SpecError(f"block {i}: only the final block may use an automatic pool_t")
            if pt < 1 or pf < 1 or t // pt < 1 or f // pf < 1:
                raise SpecError(f"block {i}: pool {(pt, pf)} reduces input ({t}, {f}) below 1")
            final_kind = spec.final_pool if last else "max"
            blocks.append(_ConvBlock(ch, b, (pt, pf), final_kind, spec.bn_momentum))
            t, f, ch = t // pt, f // pf, b.filters
        self.blocks = nn.ModuleList(blocks)
        self.collapsed_shape = (t, f, ch)
        width = t * f * ch
        self.flat_dim = width
        dense = []
        for size in spec.dense_sizes:
            dense.append(nn.Linear(width, size))
            width = size
        self.dense = nn.ModuleList(dense)
        self.penultimate_dim = width
        self.classifier = nn.Linear(width, spec.num_classes)

    def forward(self, x, generator=None):
        x = (x - self.input_mean) / self.input_std
        # channels_last roughly halves conv cost on CPU
        x = x.unsqueeze(1).contiguous(memory_format=torch.channels_last)  # (B, 1, T, F)
        for block in self.blocks:
            x = block(x, generator)
        h = torch.flatten(x.permute(0, 2, 3, 1), 1)  # channels-last flatten
        for layer in self.dense:
            h = F.relu(layer(h))
        return self.classifier(h), h


def _same_pad_1d(length: int, kernel: int, stride: int) -> tuple[int, int]:
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


class TextNet(nn.Module):
    def __init__(self, spec: TextModelSpec, input_shape: tuple[int, int]):
        super().__init__()
        length, dim = input_shape
        self.pads = []
        convs = []
        ch = dim
        self.lengths = [length]
        for filters in spec.conv_filters:
            self.pads.append(_same_pad_1d(length, spec.kernel_size, spec.stride))
            convs.append(nn.Conv1d(ch, filters, spec.kernel_size, stride=spec.stride))
            length = math.ceil(length / spec.stride)
            self.lengths.append(length)
            ch = filters
        self.convs = nn.ModuleList(convs)
        self.lstm = nn.LSTM(ch, spec.lstm_units, batch_first=True)
        self.penultimate_dim = spec.lstm_units
        self.classifier = nn.Linear(spec.lstm_units, spec.num_classes)

    def forward(self, x, generator=None):
        h = x.transpose(1, 2)  # (B, dim, L)
        for conv, pad in zip(self.convs, self.pads):
            h = F.relu(conv(F.pad(h, pad)))
        _, (hn, _) = self.lstm(h.transpose(1, 2))
        h = hn[-1]
        return self.classifier(h), h


def _he_uniform_(w: torch.Tensor, gen: torch.Generator):
    fan_in = w[0].numel()
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * 2 * bound - bound)


def _init_parameters(module: nn.Module, seed: int):
    gen = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if m is module.classifier:
            # zero softmax layer: initial predictions exactly uniform
            nn.init.zeros_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
            _he_uniform_(m.weight, gen)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LSTM):
            bound = 1.0 / math.sqrt(m.hidden_size)
            with torch.no_grad():
                for name, p in m.named_parameters():
                    if name.startswith("weight"):
                        p.copy_(torch.rand(p.shape, generator=gen) * 2 * bound - bound)
                    else:
                        p.zero_()
                        if name.startswith("bias_ih"):
                            p[m.hidden_size:2 * m.hidden_size] = 1.0  # forget gate


class ModelGraph:
    """A spec, its input shape and seed, and the module evaluating it."""

    def __init__(self, spec: ModelSpec, input_shape: tuple, seed: int, module: nn.Module):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.module = module
        self.dropout_generator = torch.Generator().manual_seed(self.seed)

    @property
    def kind(self) -> str:
        return "acoustic" if isinstance(self.spec, AcousticModelSpec) else "text"

    @property
    def penultimate_dim(self) -> int:
        return self.module.penultimate_dim

    def named_parameters(self):
        return list(self.module.named_parameters())

    def set_normalization(self, mean, std):
        """Per-feature-column standardisation applied ahead of the acoustic net."""
        if self.kind != "acoustic":
            raise InputError("input normalisation only applies to acoustic graphs")
        std = np.where(np.asarray(std) > 1e-8, std, 1.0)
        with torch.no_grad():
            self.module.input_mean.copy_(torch.as_tensor(np.asarray(mean), dtype=self.module.input_mean.dtype))
            self.module.input_std.copy_(torch.as_tensor(std, dtype=self.module.input_std.dtype))

    def check_input(self, x: torch.Tensor):
        expected = self.input_shape[:2]
        if x.ndim == 4 and self.kind == "acoustic" and x.shape[-1] == 1:
            x = x[..., 0]
        if x.ndim != 3 or tuple(x.shape[1:]) != expected:
            raise InputError(f"expected input batch of shape (B, {expected[0]}, {expected[1]}), got {tuple(x.shape)}")
        return x

    def copy(self) -> "ModelGraph":
        g = build(self.spec, self.input_shape, self.seed)
        g.module.load_state_dict(self.module.state_dict())
        return g


def build_acoustic(spec: AcousticModelSpec, input_shape=(300, 60, 1), seed: int = 0) -> ModelGraph:
    if len(input_shape) == 2:
        input_shape = (*input_shape, 1)
    if input_shape[2] != 1:
        raise SpecError("acoustic input has a single channel")
    module = AcousticNet(spec, tuple(input_shape))
    _init_parameters(module, seed)
    return ModelGraph(spec, tuple(input_shape), seed, module)


def build_text(spec: TextModelSpec, input_shape=(64, 300), seed: int = 0) -> ModelGraph:
    length = input_shape[0]
    if length < spec.stride ** len(spec.conv_filters):
        raise SpecError(f"max_tokens={length} too short for {len(spec.conv_filters)} stride-{spec.stride} convolutions")
    module = TextNet(spec, tuple(input_shape))
    _init_parameters(module, seed)
    return ModelGraph(spec, tuple(input_shape), seed, module)


def build(spec: ModelSpec, input_shape, seed: int = 0) -> ModelGraph:
    if isinstance(spec, AcousticModelSpec):
        return build_acoustic(spec, input_shape, seed)
    return build_text(spec, input_shape, seed)


def forward(graph: ModelGraph, inputs, mode: str = "eval", batch_size: int = 256):
    """Evaluate ``inputs`` and return ``(logits, penultimate)`` as numpy arrays.

    ``train`` mode draws dropout masks from the graph's seeded stream and
    updates batch-norm running statistics; ``eval`` mode is a pure function
    of parameters and input.
    """
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = next(graph.module.parameters()).dtype
    x = graph.check_input(torch.as_tensor(np.asarray(inputs), dtype=dtype))
    graph.module.train(mode == "train")
    logits, pen = [], []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            lg, h = graph.module(x[i:i + batch_size], graph.dropout_generator)
            logits.append(lg)
            pen.append(h)
    graph.module.eval()
    if not logits:
        return np.zeros((0, NUM_CLASSES)), np.zeros((0, graph.penultimate_dim))
    return torch.cat(logits).numpy(), torch.cat(pen).numpy()


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"DSCK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")


def _tensor_items(graph: ModelGraph):
    return [(k, v) for k, v in graph.module.state_dict().items() if v.is_floating_point()]


def state_snapshot(graph: ModelGraph) -> dict:
    return {k: v.detach().clone() for k, v in graph.module.state_dict().items()}


def save_checkpoint(graph: ModelGraph, path, state: Optional[dict] = None) -> None:
    """Named float32 tensors behind a JSON header carrying the model spec."""
    items = _tensor_items(graph) if state is None else [(k, v) for k, v in state.items() if v.is_floating_point()]
    meta = {
        "spec": graph.spec.to_dict(),
        "input_shape": list(graph.input_shape),
        "seed": graph.seed,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in items],
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(header)))
        fh.write(header)
        for _, v in items:
            fh.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> ModelGraph:
    data = Path(path).read_bytes()
    try:
        magic, version, hlen = _CKPT_HEADER.unpack_from(data)
    except struct.error:
        raise LoadError(f"{path}: truncated checkpoint") from None
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise LoadError(f"{path}: not a checkpoint file")
    off = _CKPT_HEADER.size
    meta = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    graph = build(spec_from_dict(meta["spec"]), tuple(meta["input_shape"]), meta["seed"])
    state = graph.module.state_dict()
    for entry in meta["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if off + 4 * n > len(data):
            raise LoadError(f"{path}: payload truncated at {entry['name']}")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(entry["shape"])
        off += 4 * n
        if entry["name"] not in state or tuple(state[entry["name"]].shape) != tuple(entry["shape"]):
            raise LoadError(f"{path}: unexpected tensor {entry['name']} {entry['shape']}")
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    graph.module.load_state_dict(state)
    return graph
