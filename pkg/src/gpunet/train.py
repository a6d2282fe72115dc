"""BCE training loop, optimizers, binary checkpoints and evaluation.

Training is bitwise reproducible: parameter init is pinned by (model tree,
seed), the shuffle stream is seeded separately from the init stream, every
primitive runs single-threaded with a fixed summation order, and history rows
carry no wall-clock state.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import ops
from .data import Sample
from .dtypes import DTYPE_TAGS, TAG_DTYPES, dtype
from .errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DatasetError,
    DivergenceError,
    NonFiniteError,
    SpecError,
)
from .layers import load_state, state_dict
from .metrics import binarize, confusion, metrics_record
from .models import KINDS, ModelConfig, UNet

CHECKPOINT_MAGIC = b"GPUN"
CHECKPOINT_VERSION = 1
META_NAME = "__meta__"

# The shuffle stream is decorrelated from the init stream (seeded with the
# bare seed) by a fixed second word.
SHUFFLE_STREAM = 17


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1
    checkpoint: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise SpecError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise SpecError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise SpecError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.eval_every < 1:
            raise SpecError(f"eval_every must be positive, got {self.eval_every}")


def _require_finite_grad(name: str, grad: np.ndarray) -> None:
    if not np.isfinite(grad).all():
        raise DivergenceError(f"non-finite gradient in {name}")


class SGD:
    """Plain gradient descent: p -= lr * grad."""

    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, named_params) -> None:
        for name, p in named_params:
            _require_finite_grad(name, p.grad)
            p.value -= np.asarray(self.lr, dtype=p.value.dtype) * p.grad


class Adam:
    """Adaptive-moment update with bias correction.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps
        self.t = 0
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, named_params) -> None:
        self.t += 1
        dt = None
        for name, p in named_params:
            _require_finite_grad(name, p.grad)
            dt = p.value.dtype
            if name not in self.state:
                self.state[name] = (np.zeros_like(p.value), np.zeros_like(p.value))
            m, v = self.state[name]
            b1 = np.asarray(self.beta1, dtype=dt)
            b2 = np.asarray(self.beta2, dtype=dt)
            one = np.asarray(1.0, dtype=dt)
            m *= b1
            m += (one - b1) * p.grad
            v *= b2
            v += (one - b2) * (p.grad * p.grad)
            mhat = m / np.asarray(1.0 - self.beta1**self.t, dtype=dt)
            vhat = v / np.asarray(1.0 - self.beta2**self.t, dtype=dt)
            p.value -= np.asarray(self.lr, dtype=dt) * mhat / (
                np.sqrt(vhat) + np.asarray(self.eps, dtype=dt)
            )


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg) if cfg.optimizer == "adam" else SGD(cfg)


# ---------------------------------------------------------------------------
# Checkpoints


def _meta_tensor(cfg: ModelConfig) -> np.ndarray:
    values = [KINDS.index(cfg.kind), cfg.in_channels, cfg.out_channels, *cfg.widths]
    return np.asarray(values, dtype=dtype())


def _config_from_meta(meta: np.ndarray) -> ModelConfig:
    if meta.ndim != 1 or meta.size != 8:
        raise CheckpointError(f"malformed {META_NAME} tensor of shape {meta.shape}")
    vals = [int(v) for v in meta]
    if not 0 <= vals[0] < len(KINDS):
        raise CheckpointError(f"unknown model kind id {vals[0]}")
    return ModelConfig(
        kind=KINDS[vals[0]],
        widths=tuple(vals[3:]),
        in_channels=vals[1],
        out_channels=vals[2],
    )


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize named tensors: magic, u32 version, u8 dtype tag, u32 count,
    then per tensor u32 name length, UTF-8 name, u8 rank, u32 dims, raw
    little-endian scalars."""
    tag = DTYPE_TAGS[dtype()]
    wire = "<f4" if tag == 0 else "<f8"
    parts = [CHECKPOINT_MAGIC, struct.pack("<IBI", CHECKPOINT_VERSION, tag, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=wire).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    """Parse checkpoint bytes back into named tensors (engine dtype)."""
    r = _Reader(buf)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {magic!r}")
    version, tag, count = r.unpack("<IBI")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if tag not in TAG_DTYPES:
        raise CheckpointError(f"unknown dtype tag {tag}")
    wire = np.dtype(np.float32 if tag == 0 else np.float64).newbyteorder("<")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n_scalars = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n_scalars * wire.itemsize)
        arr = np.frombuffer(raw, dtype=wire).reshape(dims)
        tensors[name] = arr.astype(dtype())
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return tensors


def save_checkpoint(model: UNet, path) -> None:
    """Atomically write the model's config and all named state tensors."""
    tensors = {META_NAME: _meta_tensor(model.cfg)}
    tensors.update(state_dict(model))
    data = encode_checkpoint(tensors)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> UNet:
    """Rebuild the model a checkpoint describes and load its tensors."""
    with open(path, "rb") as f:
        tensors = decode_checkpoint(f.read())
    if META_NAME not in tensors:
        raise CheckpointError(f"checkpoint has no {META_NAME} tensor")
    cfg = _config_from_meta(tensors.pop(META_NAME))
    model = UNet(cfg)
    try:
        load_state(model, tensors)
    except Exception as exc:
        raise CheckpointError(f"checkpoint tensors do not fit the model: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# Batching, evaluation, training


def _batches(samples: list[Sample], batch_size: int, order=None):
    idx = list(range(len(samples))) if order is None else list(order)
    for start in range(0, len(idx), batch_size):
        chunk = [samples[i] for i in idx[start : start + batch_size]]
        x = np.concatenate([s.image for s in chunk], axis=0)
        t = np.concatenate([s.mask for s in chunk], axis=0)
        yield x, t


def evaluate(model: UNet, samples: list[Sample], batch_size: int = 4, mode: str = "pooled") -> dict:
    """Eval-mode metrics over a sample list.

    'pooled' accumulates one confusion matrix over every pixel; 'per_image'
    scores each image separately and averages AC/F1/JS.
    """
    if not samples:
        raise DatasetError("cannot evaluate an empty split")
    if mode not in ("pooled", "per_image"):
        raise SpecError(f"mode must be 'pooled' or 'per_image', got {mode!r}")
    if mode == "pooled":
        total = None
        for x, t in _batches(samples, batch_size):
            pred = binarize(model.forward(x, train=False))
            cc = confusion(t, pred)
            total = cc if total is None else total + cc
        return metrics_record(total)
    records = []
    for x, t in _batches(samples, 1):
        pred = binarize(model.forward(x, train=False))
        records.append(metrics_record(confusion(t, pred)))
    return {
        key: float(np.mean([rec[key] for rec in records])) for key in ("ac", "f1", "js")
    }


def train(
    model: UNet,
    train_samples: list[Sample],
    val_samples: list[Sample],
    cfg: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> list[dict]:
    """Optimize BCE over epochs; return one history row per epoch.

    Rows carry epoch and mean train loss, plus val AC/F1/JS on evaluation
    epochs (every cfg.eval_every-th and always the last). When cfg.checkpoint
    is set, the model with the best val JS so far is saved there; on
    divergence the best checkpoint written so far is retained. on_epoch, if
    given, is called with each finished row.
    """
    if not train_samples:
        raise DatasetError("cannot train on an empty split")
    if not val_samples:
        raise DatasetError("validation split is empty")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, SHUFFLE_STREAM]))
    optimizer = make_optimizer(cfg)
    history: list[dict] = []
    best_js = -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        loss_sum = 0.0
        n_images = 0
        try:
            for x, t in _batches(train_samples, cfg.batch_size, order):
                model.zero_grad()
                prob = model.forward(x, train=True)
                loss, cache = ops.bce_forward(prob, t)
                model.backward(ops.bce_backward(cache))
                optimizer.step(model.params())
                loss_sum += loss * x.shape[0]
                n_images += x.shape[0]
            row = {"epoch": epoch, "train_loss": loss_sum / n_images}
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                val = evaluate(model, val_samples, cfg.batch_size)
                row.update({"val_ac": val["ac"], "val_f1": val["f1"], "val_js": val["js"]})
                if val["js"] > best_js:
                    best_js = val["js"]
                    if cfg.checkpoint:
                        save_checkpoint(model, cfg.checkpoint)
        except NonFiniteError as exc:
            raise DivergenceError(f"training diverged in epoch {epoch}: {exc}") from exc
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return history
