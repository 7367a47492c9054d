"""The fully convolutional patch network, its training loop and checkpoints."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, TrainingDivergedError, UnsupportedVersionError
from .layers import Conv1x1, Conv3x3, Dropout, MaxPool2x2, ReLU, Softmax2, Upsample2x
from .optim import RMSprop, cross_entropy

log = logging.getLogger(__name__)

VESSEL = 1  # softmax channel reported as the vessel probability


@dataclass
class TrainConfig:
    lr: float = 1e-4
    momentum: float = 0.7
    epochs: int = 60
    batch_size: int = 32
    dropout: float = 0.7
    rho: float = 0.9
    seed: int = 0
    patches: int = 120_000
    val_fraction: float = 0.1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patches"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "momentum", "rho"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


class Network:
    """conv-conv-pool-conv-conv-upsample-conv-conv, then a 1x1 two-class head.

    Every 3x3 convolution is followed by ReLU and dropout. ``widths`` gives
    the filter counts before and after pooling; (32, 64) is the standard
    model.
    """

    def __init__(self, seed: int = 0, widths=(32, 64), dropout: float = 0.7,
                 dtype=np.float32, zero_head: bool = False):
        a, b = widths
        self.widths = (int(a), int(b))
        self.dropout = float(dropout)
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        init_ss, drop_ss = np.random.SeedSequence(self.seed).spawn(2)
        init = np.random.Generator(np.random.PCG64(init_ss))
        self.drop_rng = np.random.Generator(np.random.PCG64(drop_ss))
        self.training = False

        layers = []

        def conv(name, cin, cout):
            layers.append((name, Conv3x3(cin, cout, init, dtype)))
            layers.append((f"{name}_relu", ReLU()))
            layers.append((f"{name}_drop", Dropout(dropout, self.drop_rng)))

        conv("c1", 1, a)
        conv("c2", a, a)
        layers.append(("m1", MaxPool2x2()))
        conv("c3", a, b)
        conv("c4", b, b)
        layers.append(("u1", Upsample2x()))
        conv("c5", b, a)
        conv("c6", a, a)
        layers.append(("proj", Conv1x1(a, 2, None if zero_head else init, dtype)))
        layers.append(("softmax", Softmax2()))
        self.layers = layers

    # -- modes

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    # -- parameters

    def params(self) -> dict:
        return {f"{name}.{k}": v for name, layer in self.layers for k, v in layer.params.items()}

    def grads(self) -> dict:
        return {f"{name}.{k}": v for name, layer in self.layers for k, v in layer.grads.items()}

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def set_params(self, tensors: dict):
        own = self.params()
        if set(own) != set(tensors):
            raise FormatError(f"parameter names differ: missing {sorted(set(own) - set(tensors))}, "
                              f"unexpected {sorted(set(tensors) - set(own))}")
        for name, layer in self.layers:
            for k in layer.params:
                value = np.asarray(tensors[f"{name}.{k}"])
                if value.shape != layer.params[k].shape:
                    raise ShapeError(f"{name}.{k}: expected {layer.params[k].shape}, got {value.shape}")
                layer.params[k] = value.astype(self.dtype, copy=True)

    # -- passes

    def shape_trace(self, hw=(28, 28)):
        shape = (1, *hw)
        trace = [("input", shape)]
        for name, layer in self.layers:
            shape = layer.output_shape(shape)
            trace.append((name, shape))
        return trace

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """``(B, 1, H, W)`` patches -> ``(B, H, W)`` vessel probabilities."""
        if batch.ndim != 4 or batch.shape[1] != 1:
            raise ShapeError(f"expected a (B, 1, H, W) batch, got {batch.shape}")
        if batch.shape[2] % 2 or batch.shape[3] % 2:
            raise ShapeError(f"patch sides must be even, got {batch.shape[2:]}")
        expected = self.shape_trace(batch.shape[2:])[1:]
        x = batch.astype(self.dtype, copy=False)
        for (name, layer), (_, shape) in zip(self.layers, expected):
            x = layer.forward(x, self.training)
            if x.shape[1:] != shape:
                raise ShapeError(f"layer {name} produced {x.shape[1:]}, expected {shape}")
        return x[:, VESSEL]

    def backward(self, grad_prob: np.ndarray) -> np.ndarray:
        """Back-propagate d loss / d vessel-probability; fills every layer's ``grads``."""
        B, H, W = grad_prob.shape
        g = np.zeros((B, 2, H, W), dtype=grad_prob.dtype)
        g[:, VESSEL] = grad_prob
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def predict(self, batch: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Eval-mode forward in chunks; restores the previous mode."""
        was = self.training
        self.eval()
        try:
            return np.concatenate([self.forward(batch[i:i + chunk]) for i in range(0, len(batch), chunk)])
        finally:
            self.training = was


def build_network(seed: int = 0, **kwargs) -> Network:
    return Network(seed, **kwargs)


# ---------------------------------------------------------------- training

@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)  # per-epoch mean per-patch loss
    val_loss: list = field(default_factory=list)    # per-epoch, None if no validation set
    steps: int = 0
    mode_audit: list = field(default_factory=list)  # (phase, training flag) per forward

    def as_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "steps": self.steps}


def evaluate_loss(net: Network, patches, labels, chunk: int = 256) -> float:
    total = 0.0
    for i in range(0, len(labels), chunk):
        probs = net.forward(patches[i:i + chunk])
        loss, _ = cross_entropy(labels[i:i + chunk], probs)
        total += loss * len(probs)
    return total / len(labels)


def train(net: Network, train_set, val_set, config: TrainConfig, dump_dir=None,
          on_epoch=None) -> TrainHistory:
    """Fixed-length RMSprop training on sampled patches.

    Each epoch visits every training patch once in a fresh shuffled order.
    Validation loss is computed in eval mode after every epoch. A non-finite
    loss aborts the run after writing a checkpoint of the current state to
    ``dump_dir``.
    """
    opt = RMSprop(lr=config.lr, momentum=config.momentum, rho=config.rho)
    shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 1])))
    hist = TrainHistory()
    x_all, y_all = train_set.patches, train_set.labels
    n = len(y_all)
    for epoch in range(config.epochs):
        order = shuffle.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            net.train()
            hist.mode_audit.append(("train", net.training))
            probs = net.forward(x_all[idx])
            loss, grad = cross_entropy(y_all[idx], probs)
            if not math.isfinite(loss):
                path = _dump(net, dump_dir, epoch, hist.steps, loss, config)
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch + 1}, step {hist.steps}", path)
            net.backward(grad)
            opt.step(net.params(), net.grads())
            running += loss * len(idx)
            hist.steps += 1
        hist.train_loss.append(running / n)
        if val_set is not None and len(val_set):
            net.eval()
            hist.mode_audit.append(("val", net.training))
            hist.val_loss.append(evaluate_loss(net, val_set.patches, val_set.labels))
        else:
            hist.val_loss.append(None)
        log.info("epoch %d/%d train_loss=%.4f val_loss=%s", epoch + 1, config.epochs,
                 hist.train_loss[-1], hist.val_loss[-1])
        if on_epoch is not None:
            on_epoch(epoch, hist)
    net.eval()
    return hist


def _dump(net, dump_dir, epoch, step, loss, config):
    if dump_dir is None:
        return None
    dump_dir = Path(dump_dir)
    dump_dir.mkdir(parents=True, exist_ok=True)
    path = dump_dir / "diverged.vseg"
    save_checkpoint(net, path, {"diverged": {"epoch": epoch, "step": step, "loss": repr(loss)},
                                "config": asdict(config)})
    return path


# ---------------------------------------------------------------- checkpoints

MAGIC = b"VSEG"
VERSION = 1


def save_checkpoint(net: Network, path, metadata: dict | None = None):
    """Binary checkpoint: header, named float32 tensors, then a JSON metadata block."""
    meta = dict(metadata or {})
    meta["network"] = {"widths": list(net.widths), "dropout": net.dropout, "seed": net.seed}
    params = net.params()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(text)) + text)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path):
    """Return ``(tensors, metadata)`` without building a network."""
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a vseg checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version > VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} is newer than supported {VERSION}")
    if version < 1:
        raise FormatError(f"{path}: invalid checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    (mlen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata block") from exc
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes after metadata")
    return tensors, meta


def load_checkpoint(path) -> Network:
    """Rebuild the network; the metadata block is attached as ``net.metadata``."""
    tensors, meta = read_checkpoint(path)
    cfg = meta.get("network", {})
    net = Network(cfg.get("seed", 0), widths=tuple(cfg.get("widths", (32, 64))),
                  dropout=cfg.get("dropout", 0.7), dtype=np.float32)
    net.set_params(tensors)
    net.metadata = meta
    return net.eval()
