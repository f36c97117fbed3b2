"""Parameter sets, layers, Adam and the finite-difference gradient oracle."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamSet:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, trainable: bool = True):
        self._params: dict[str, Tensor] = {}
        # frozen sets (target networks) record no graph during forward passes
        self.trainable = trainable

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in {name!r}")
        t = Tensor(arr, requires_grad=self.trainable)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def subset(self, prefix: str) -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for n, t in self._params.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            raise KeyError("parameter names do not match")
        for n, t in self._params.items():
            v = np.asarray(state[n], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"shape mismatch for {n!r}: {v.shape} vs {t.shape}")
            t.data = v.copy()

    def copy(self, trainable: bool | None = None) -> "ParamSet":
        other = ParamSet(self.trainable if trainable is None else trainable)
        for n, t in self._params.items():
            other.add(n, t.data)
        return other

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for n, t in self._params.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def add_dense(params: ParamSet, name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
    params.add(f"{name}.weight", uniform_fan_in(rng, (out_dim, in_dim), in_dim))
    params.add(f"{name}.bias", uniform_fan_in(rng, (out_dim,), in_dim))


def add_gru(params: ParamSet, name: str, in_dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
    # rows are stacked [reset; update; candidate]
    params.add(f"{name}.w_x", uniform_fan_in(rng, (3 * hidden_dim, in_dim), in_dim))
    params.add(f"{name}.w_h", uniform_fan_in(rng, (3 * hidden_dim, hidden_dim), hidden_dim))
    params.add(f"{name}.bias", uniform_fan_in(rng, (3 * hidden_dim,), hidden_dim))


def dense_forward(params: ParamSet, name: str, x) -> Tensor:
    w = params[f"{name}.weight"]
    x = ad.as_tensor(x)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {w.shape[1]}")
    return ad.linear(x, w, params[f"{name}.bias"])


def gru_cell_forward(params: ParamSet, name: str, x, h) -> Tensor:
    """h' = (1 - z) * n + z * h with reset gate r applied to the recurrent candidate term."""
    w_x, w_h, b = params[f"{name}.w_x"], params[f"{name}.w_h"], params[f"{name}.bias"]
    hd = w_h.shape[1]
    x, h = ad.as_tensor(x), ad.as_tensor(h)
    if x.shape[-1] != w_x.shape[1]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {w_x.shape[1]}")
    if h.shape[-1] != hd:
        raise ValueError(f"{name}: hidden width {h.shape[-1]} != {hd}")
    gx = ad.linear(x, w_x, b)
    gh = ad.linear(h, w_h)
    r = ad.sigmoid(ad.slice_last(gx, 0, hd) + ad.slice_last(gh, 0, hd))
    z = ad.sigmoid(ad.slice_last(gx, hd, 2 * hd) + ad.slice_last(gh, hd, 2 * hd))
    n = ad.tanh(ad.slice_last(gx, 2 * hd, 3 * hd) + r * ad.slice_last(gh, 2 * hd, 3 * hd))
    return (1.0 - z) * n + z * h


@dataclass
class Adam:
    """Adam with bias correction; the defaults are the QMIX training settings."""

    params: ParamSet
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for n, p in self.params.items():
            self.m.setdefault(n, np.zeros_like(p.data))
            self.v.setdefault(n, np.zeros_like(p.data))

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for n, p in self.params.items():
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            m_hat = self.m[n] / c1
            v_hat = self.v[n] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.params.zero_grad()


def adam_step(state: Adam, params: ParamSet | None = None) -> None:
    if params is not None and params is not state.params:
        raise ValueError("Adam state belongs to a different parameter set")
    state.step()


def finite_diff_grad(
    loss_fn: Callable[[], float], params: ParamSet, h: float = 1e-5, names=None
) -> dict[str, np.ndarray]:
    """Central differences (f(w+h) - f(w-h)) / 2h for each scalar parameter."""
    out = {}
    for n in names if names is not None else params.names():
        t = params[n]
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn())
            flat[i] = orig - h
            fm = float(loss_fn())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out[n] = g
    return out


def relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    """||a - n|| / max(||a||, ||n||) over the concatenated gradient vector."""
    a = np.concatenate([analytic[k].ravel() for k in numeric])
    b = np.concatenate([numeric[k].ravel() for k in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


# ------------------------------------------------------------ checkpoints

CKPT_MAGIC = b"QSEGCKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: ParamSet) -> None:
    """Binary layout (little-endian):

    magic b"QSEGCKPT" | u32 version | u32 tensor count |
    per tensor: u16 name length | utf-8 name | u8 ndim | ndim x u32 dims |
    prod(dims) x f64 values, row-major.
    """
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
        pos += 8 * size
    return out
