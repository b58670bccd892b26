"""The desk-scale convolutional classifier, its optimizer, and checkpoints.

Three conv/norm/relu blocks (widths 32, 64, 128) each followed by 2x2 max
pooling, then global average pooling and an affine head.  Small enough to
train on one CPU core in minutes, big enough to show the training dynamics
the rest of the package measures.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T
from .rng import make_rng

__all__ = [
    "Model",
    "SGDMomentum",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"FFML"
CHECKPOINT_VERSION = 1


class Model:
    """Convolutional classifier with an exponential moving average shadow.

    Parameters live as float tensors in ``self.params``; batch-norm running
    statistics live in ``self.bufs`` and are updated only by training-mode
    forward passes.  ``self.ema`` shadows every parameter and is advanced by
    :func:`ema_update`; evaluation may read either copy.
    """

    def __init__(
        self,
        in_channels: int = 3,
        num_classes: int = 10,
        widths: tuple[int, ...] = (32, 64, 128),
        seed: int = 0,
        dtype=np.float32,
    ):
        if num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not widths:
            raise ValueError("widths must be non-empty")
        self.in_channels = int(in_channels)
        self.num_classes = int(num_classes)
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)

        self.params: dict[str, T.Tensor] = {}
        self.bufs: dict[str, np.ndarray] = {}
        fan_in = self.in_channels
        for i, width in enumerate(self.widths, start=1):
            rng = make_rng(seed, "init", f"conv{i}")
            std = np.sqrt(2.0 / (9 * fan_in))
            self.params[f"conv{i}.w"] = T.Tensor(
                (rng.standard_normal((3, 3, fan_in, width)) * std).astype(self.dtype),
                requires_grad=True,
            )
            self.params[f"bn{i}.gamma"] = T.Tensor(
                np.ones(width, dtype=self.dtype), requires_grad=True
            )
            self.params[f"bn{i}.beta"] = T.Tensor(
                np.zeros(width, dtype=self.dtype), requires_grad=True
            )
            self.bufs[f"bn{i}.running_mean"] = np.zeros(width, dtype=self.dtype)
            self.bufs[f"bn{i}.running_var"] = np.ones(width, dtype=self.dtype)
            fan_in = width
        rng = make_rng(seed, "init", "head")
        self.params["head.w"] = T.Tensor(
            (rng.standard_normal((fan_in, self.num_classes)) / np.sqrt(fan_in)).astype(
                self.dtype
            ),
            requires_grad=True,
        )
        self.params["head.b"] = T.Tensor(
            np.zeros(self.num_classes, dtype=self.dtype), requires_grad=True
        )
        self.ema: dict[str, np.ndarray] = {
            name: p.data.copy() for name, p in self.params.items()
        }

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    def _weight(self, name: str, use_ema: bool) -> T.Tensor:
        if use_ema:
            return T.Tensor(self.ema[name])
        return self.params[name]

    def forward(self, x: np.ndarray, train: bool = False, use_ema: bool = False) -> T.Tensor:
        """Run a (N, C, H, W) batch through the network; returns logits.

        Training mode uses batch statistics (and updates the running buffers);
        evaluation mode uses the frozen running statistics.  The EMA weights
        are read-only, so ``use_ema`` requires ``train=False``.
        """
        if use_ema and train:
            raise ValueError("EMA weights cannot be trained")
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"input: expected (N, {self.in_channels}, H, W), got {x.shape}"
            )
        stride = 2 ** len(self.widths)
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ValueError(
                f"input: spatial size {x.shape[2:]} must be divisible by {stride} "
                f"for {len(self.widths)} pooling stages"
            )
        h = T.Tensor(np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype))
        for i in range(1, len(self.widths) + 1):
            h = T.conv2d(h, self._weight(f"conv{i}.w", use_ema))
            h = T.batch_norm(
                h,
                self._weight(f"bn{i}.gamma", use_ema),
                self._weight(f"bn{i}.beta", use_ema),
                self.bufs[f"bn{i}.running_mean"],
                self.bufs[f"bn{i}.running_var"],
                train=train,
            )
            h = T.relu(h)
            h = T.maxpool2(h)
        h = T.global_avg_pool(h)
        return T.linear(
            h, self._weight("head.w", use_ema), self._weight("head.b", use_ema)
        )

    def predict(self, x: np.ndarray, use_ema: bool = False) -> np.ndarray:
        """Evaluation-mode logits with no graph recording."""
        with T.no_grad():
            return self.forward(x, train=False, use_ema=use_ema).data

    def state_entries(self) -> dict[str, np.ndarray]:
        """Everything a checkpoint stores, in a stable order."""
        entries: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            entries[name] = p.data
        for name, buf in self.bufs.items():
            entries[name] = buf
        for name, arr in self.ema.items():
            entries[name + ".ema"] = arr
        return entries

    def load_state_entries(self, entries: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            for key, target in ((name, p.data), (name + ".ema", self.ema[name])):
                if key not in entries:
                    raise KeyError(f"checkpoint is missing entry {key!r}")
                if entries[key].shape != target.shape:
                    raise ValueError(
                        f"checkpoint entry {key!r} has shape {entries[key].shape}, "
                        f"expected {target.shape}"
                    )
                target[...] = entries[key].astype(self.dtype)
        for name, buf in self.bufs.items():
            if name not in entries:
                raise KeyError(f"checkpoint is missing entry {name!r}")
            buf[...] = entries[name].astype(self.dtype)


class SGDMomentum:
    """Momentum SGD with coupled weight decay.

    Per parameter: v <- momentum * v + grad + weight_decay * w, then
    w <- w - lr * v.  Gradients are consumed (cleared) by ``step``.
    """

    def __init__(
        self,
        model: Model,
        lr: float = 0.03,
        momentum: float = 0.9,
        weight_decay: float = 5e-4,
    ):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.model = model
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in model.params.items()
        }

    def step(self) -> None:
        for name, p in self.model.params.items():
            if p.grad is None:
                raise RuntimeError(
                    f"parameter {name!r} has no gradient; run backward first"
                )
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= np.asarray(self.lr, dtype=p.data.dtype) * v
            p.grad = None


def ema_update(model: Model, decay: float = 0.999) -> None:
    """Advance the shadow weights: ema <- decay * ema + (1 - decay) * w."""
    if not 0 <= decay <= 1:
        raise ValueError("decay must lie in [0, 1]")
    d = decay
    for name, p in model.params.items():
        shadow = model.ema[name]
        shadow *= d
        shadow += (1.0 - d) * p.data


def save_checkpoint(model: Model, path) -> None:
    """Write all weights, running statistics, and EMA copies.

    Layout: magic ``FFML``, version u32, then one record per entry
    (name length u32, utf-8 name, rank u32, each dim u32, raw little-endian
    float32 data).  All integers little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in model.state_entries().items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float32 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    entries: dict[str, np.ndarray] = {}
    offset = 8
    total = len(blob)
    while offset < total:
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            end = offset + 4 * count
            if end > total:
                raise struct.error("data past end of file")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset = end
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError(f"truncated or corrupt checkpoint: {exc}") from None
        entries[name] = arr.reshape(shape).copy()
    return entries
