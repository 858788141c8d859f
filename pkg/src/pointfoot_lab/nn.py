"""Named-parameter networks on top of torch autograd.

Networks are plain functions of a :class:`ParameterStore` and their inputs,
so the same store can be evaluated, differentiated, frozen or serialised
without module classes.
"""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

CHECKPOINT_MAGIC = b"PFLABCKP"
CHECKPOINT_VERSION = 1


class StructuralError(ValueError):
    """Incompatible tensor shapes."""


class UsageError(RuntimeError):
    pass


def _require(cond: bool, what: str, a, b):
    if not cond:
        raise StructuralError(f"{what}: shapes {tuple(a)} and {tuple(b)} are incompatible")


class ParameterStore:
    """Ordered named parameters with their gradients and Adam moments."""

    def __init__(self, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self.params: OrderedDict[str, torch.nn.Parameter] = OrderedDict()
        self._optimizer: torch.optim.Adam | None = None
        self.frozen = False

    def add(self, name: str, value) -> torch.nn.Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor = torch.as_tensor(value, dtype=self.dtype).clone()
        param = torch.nn.Parameter(tensor, requires_grad=not self.frozen)
        self.params[name] = param
        self._optimizer = None
        return param

    def __getitem__(self, name: str) -> torch.nn.Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def parameters(self, prefix: str = "") -> list[torch.nn.Parameter]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def freeze(self) -> "ParameterStore":
        self.frozen = True
        for p in self.params.values():
            p.requires_grad_(False)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def backward(self, loss: torch.Tensor) -> None:
        """Populate gradients of every parameter; unreached ones get zeros."""
        if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
            raise UsageError("backward needs a scalar loss tensor")
        if loss.grad_fn is None:
            raise UsageError("backward called without a recorded forward pass")
        self.zero_grad()
        loss.backward()
        for p in self.params.values():
            if p.grad is None and p.requires_grad:
                p.grad = torch.zeros_like(p)

    def grad(self, name: str) -> torch.Tensor:
        g = self.params[name].grad
        return torch.zeros_like(self.params[name]) if g is None else g

    def clip_grad_norm(self, max_norm: float) -> float:
        grads = [p for p in self.params.values() if p.grad is not None]
        if not grads:
            return 0.0
        return float(torch.nn.utils.clip_grad_norm_(grads, max_norm))

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        if self.frozen:
            raise UsageError("cannot update a frozen store")
        if self._optimizer is None:
            self._optimizer = torch.optim.Adam(list(self.params.values()), lr=lr, betas=(beta1, beta2), eps=eps)
        for group in self._optimizer.param_groups:
            group["lr"] = lr
            group["betas"] = (beta1, beta2)
            group["eps"] = eps
        self._optimizer.step()

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.params.items()}

    def restore(self, snapshot: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for n, value in snapshot.items():
                self.params[n].copy_(value)

    def to(self, dtype: torch.dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for n, p in self.params.items():
            out.add(n, p.detach().to(dtype))
        if self.frozen:
            out.freeze()
        return out

    def copy_from(self, other: "ParameterStore", src_prefix: str, dst_prefix: str) -> None:
        with torch.no_grad():
            for name in other.names(src_prefix):
                self.params[dst_prefix + name[len(src_prefix):]].copy_(other.params[name])

    def numpy_dict(self) -> dict[str, np.ndarray]:
        return {n: p.detach().cpu().numpy().astype(np.float32) for n, p in self.params.items()}

    def load_numpy(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        with torch.no_grad():
            for name, p in self.params.items():
                key = prefix + name
                if key not in arrays:
                    raise KeyError(f"checkpoint lacks parameter {key!r}")
                value = torch.as_tensor(arrays[key], dtype=self.dtype)
                _require(value.shape == p.shape, f"loading {key}", value.shape, p.shape)
                p.copy_(value)


# -- initialisation -------------------------------------------------------------------

def add_linear(store: ParameterStore, name: str, in_dim: int, out_dim: int, generator: torch.Generator, gain: float = 1.0):
    w = torch.empty(out_dim, in_dim, dtype=torch.float64)
    torch.nn.init.orthogonal_(w, gain=gain, generator=generator)
    store.add(f"{name}/weight", w)
    store.add(f"{name}/bias", torch.zeros(out_dim))


@dataclass(frozen=True)
class MLPSpec:
    prefix: str
    sizes: tuple[int, ...]  # input, hidden..., output
    activation: str = "elu"
    out_activation: str | None = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


def add_mlp(store: ParameterStore, spec: MLPSpec, generator: torch.Generator, out_gain: float = 1.0) -> MLPSpec:
    for i in range(spec.n_layers):
        gain = out_gain if i == spec.n_layers - 1 else 1.0
        add_linear(store, f"{spec.prefix}/{i}", spec.sizes[i], spec.sizes[i + 1], generator, gain)
    return spec


def add_conv2d(store: ParameterStore, name: str, in_ch: int, out_ch: int, kernel: int, generator: torch.Generator, gain: float = 1.0):
    w = torch.empty(out_ch, in_ch, kernel, kernel, dtype=torch.float64)
    torch.nn.init.orthogonal_(w, gain=gain, generator=generator)
    store.add(f"{name}/weight", w)
    store.add(f"{name}/bias", torch.zeros(out_ch))


def add_gru(store: ParameterStore, name: str, in_dim: int, hidden: int, generator: torch.Generator):
    for part, cols in (("w_ih", in_dim), ("w_hh", hidden)):
        blocks = []
        for _ in range(3):
            w = torch.empty(hidden, cols, dtype=torch.float64)
            torch.nn.init.orthogonal_(w, generator=generator)
            blocks.append(w)
        store.add(f"{name}/{part}", torch.cat(blocks, dim=0))
    store.add(f"{name}/b_ih", torch.zeros(3 * hidden))
    store.add(f"{name}/b_hh", torch.zeros(3 * hidden))


# -- forward ops ---------------------------------------------------------------------------

_ACTIVATIONS = {
    "elu": F.elu,
    "tanh": torch.tanh,
    "relu": torch.relu,
    None: lambda x: x,
    "linear": lambda x: x,
}


def linear(store: ParameterStore, name: str, x: torch.Tensor) -> torch.Tensor:
    w, b = store[f"{name}/weight"], store[f"{name}/bias"]
    _require(x.shape[-1] == w.shape[1], f"linear {name}", x.shape, w.shape)
    return F.linear(x, w, b)


def mlp_forward(store: ParameterStore, spec: MLPSpec, x: torch.Tensor) -> torch.Tensor:
    act = _ACTIVATIONS[spec.activation]
    for i in range(spec.n_layers):
        x = linear(store, f"{spec.prefix}/{i}", x)
        x = act(x) if i < spec.n_layers - 1 else _ACTIVATIONS[spec.out_activation](x)
    return x


def conv2d_forward(store: ParameterStore, name: str, x: torch.Tensor, stride: int = 1, padding: int = 0) -> torch.Tensor:
    w, b = store[f"{name}/weight"], store[f"{name}/bias"]
    _require(x.dim() == 4 and x.shape[1] == w.shape[1], f"conv2d {name}", x.shape, w.shape)
    return F.conv2d(x, w, b, stride=stride, padding=padding)


def gru_cell(store: ParameterStore, name: str, x: torch.Tensor, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    w_ih, w_hh = store[f"{name}/w_ih"], store[f"{name}/w_hh"]
    _require(x.shape[-1] == w_ih.shape[1], f"gru {name} input", x.shape, w_ih.shape)
    _require(hidden.shape[-1] == w_hh.shape[1], f"gru {name} hidden", hidden.shape, w_hh.shape)
    gi = F.linear(x, w_ih, store[f"{name}/b_ih"])
    gh = F.linear(hidden, w_hh, store[f"{name}/b_hh"])
    i_r, i_z, i_n = gi.chunk(3, dim=-1)
    h_r, h_z, h_n = gh.chunk(3, dim=-1)
    reset = torch.sigmoid(i_r + h_r)
    update = torch.sigmoid(i_z + h_z)
    candidate = torch.tanh(i_n + reset * h_n)
    out = (1.0 - update) * candidate + update * hidden
    return out, out


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def attention_scores(query: torch.Tensor, keys: torch.Tensor, n_heads: int) -> torch.Tensor:
    """Scaled dot-product scores per head, ``(B, n_heads, K)``."""
    _require(query.shape[-1] == keys.shape[-1], "attention", query.shape, keys.shape)
    dim = query.shape[-1]
    if dim % n_heads:
        raise StructuralError(f"attention: width {dim} not divisible by {n_heads} heads")
    head = dim // n_heads
    q = query.reshape(query.shape[0], n_heads, head)
    k = keys.reshape(keys.shape[0], n_heads, head)
    return torch.einsum("bhd,khd->bhk", q, k) / math.sqrt(head)


def attention(query: torch.Tensor, keys: torch.Tensor, values: torch.Tensor, n_heads: int = 1) -> torch.Tensor:
    """Multi-head scaled dot-product attention of one query row per batch item."""
    _require(keys.shape[0] == values.shape[0], "attention keys/values", keys.shape, values.shape)
    weights = softmax(attention_scores(query, keys, n_heads), dim=-1)
    dv = values.shape[-1]
    if dv % n_heads:
        raise StructuralError(f"attention: value width {dv} not divisible by {n_heads} heads")
    v = values.reshape(values.shape[0], n_heads, dv // n_heads)
    return torch.einsum("bhk,khd->bhd", weights, v).reshape(query.shape[0], dv)


# -- checkpoint ------------------------------------------------------------------------------

def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Magic, u32 version, u32 index length, JSON index, then float32 LE blocks."""
    index = {}
    offset = 0
    blobs = []
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt index ({exc})") from None
    base = 16 + header_len
    tensors = {}
    for name, entry in header["tensors"].items():
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})


def store_tensors(stores: dict[str, ParameterStore]) -> dict[str, np.ndarray]:
    out = {}
    for prefix, store in stores.items():
        for name, value in store.numpy_dict().items():
            out[f"{prefix}/{name}"] = value
    return out
