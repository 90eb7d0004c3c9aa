"""Encoder-decoder segmentation network for trail probability maps.

A compact U-Net variant (contracting path, symmetric expansive path, skip
connections at every level) sized for CPU training on 256x256 tiles.  The
module also owns tile normalization, the combined BCE+Dice loss, the training
loop with early stopping, and a versioned binary checkpoint format.
"""

from __future__ import annotations

import copy
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .raster import BinaryMask, Raster
from .simulator import DatasetManifest, load_mask

_CLIP_LO = -5.0
_CLIP_HI = 20.0
_PROB_EPS = 1e-6  # keep sigmoid outputs strictly inside (0, 1) in float32
_CHECKPOINT_MAGIC = b"TSCK"
_CHECKPOINT_VERSION = 1

_AUGMENTATIONS = frozenset({"rotation", "flip", "translation"})
_LOSSES = ("bce", "dice", "bce+dice")


@dataclass(frozen=True)
class NetConfig:
    depth: int = 4
    base_channels: int = 16
    input_size: int = 256
    skip_connections: bool = True
    param_seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be positive")
        if self.input_size % (1 << self.depth) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^depth = {1 << self.depth}"
            )
        if not self.skip_connections:
            raise ValueError("skip connections are a defining property of this architecture")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    optimizer: str = "adam"
    learning_rate: float = 0.01
    max_epochs: int = 40
    loss: str = "bce+dice"
    augmentation: frozenset[str] = _AUGMENTATIONS
    patience: int = 20
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer: {self.optimizer!r}")
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}")
        bad = set(self.augmentation) - _AUGMENTATIONS
        if bad:
            raise ValueError(f"unknown augmentations: {sorted(bad)}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_iou: float
    wall_clock_s: float

    def __post_init__(self):
        if not (math.isfinite(self.train_loss) and self.train_loss >= 0.0):
            raise ValueError("train_loss must be finite and >= 0")
        if not (math.isfinite(self.val_loss) and self.val_loss >= 0.0):
            raise ValueError("val_loss must be finite and >= 0")
        if not (0.0 <= self.val_iou <= 1.0):
            raise ValueError("val_iou must be in [0, 1]")


class _DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.GroupNorm(min(8, cout), cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.GroupNorm(min(8, cout), cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class TrailNet(nn.Module):
    """U-Net-style network: logits out; use probabilities() for (0,1) maps."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels << i for i in range(config.depth)]
        self.encoders = nn.ModuleList()
        cin = 1
        for c in chans:
            self.encoders.append(_DoubleConv(cin, c))
            cin = c
        self.pool = nn.MaxPool2d(2)
        bottleneck_c = config.base_channels << config.depth
        self.bottleneck = _DoubleConv(chans[-1], bottleneck_c)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        c_up = bottleneck_c
        for c in reversed(chans):
            self.ups.append(nn.ConvTranspose2d(c_up, c, 2, stride=2))
            self.decoders.append(_DoubleConv(2 * c, c))
            c_up = c
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([skip, x], dim=1))
        return self.head(x)

    def probabilities(self, x):
        return torch.sigmoid(self(x)).clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def build_network(config: NetConfig) -> TrailNet:
    """Construct the network with parameters seeded by config.param_seed."""
    torch.manual_seed(config.param_seed)
    net = TrailNet(config)
    net.eval()
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def normalize_tile(pixels: np.ndarray) -> np.ndarray:
    """Robust per-tile scaling: (x - median) / (1.4826 * MAD), clipped to [-5, 20].

    Falls back to the standard deviation, then to 1.0, when the tile is too
    flat for the MAD to carry scale information.
    """
    x = np.asarray(pixels, dtype=np.float64)
    med = float(np.median(x))
    scale = 1.4826 * float(np.median(np.abs(x - med)))
    if scale <= 0.0:
        scale = float(x.std())
    if scale <= 0.0:
        scale = 1.0
    z = (x - med) / scale
    return np.clip(z, _CLIP_LO, _CLIP_HI).astype(np.float32)


def _loss_terms(logits, targets, kind: str):
    terms = []
    if kind in ("bce", "bce+dice"):
        terms.append(nn.functional.binary_cross_entropy_with_logits(logits, targets))
    if kind in ("dice", "bce+dice"):
        probs = torch.sigmoid(logits)
        inter = (probs * targets).sum()
        denom = probs.sum() + targets.sum()
        terms.append(1.0 - (2.0 * inter + 1.0) / (denom + 1.0))
    return sum(terms)


def segmentation_loss(logits, targets, kind: str = "bce+dice"):
    """BCE, soft-Dice, or their equally weighted sum, on raw logits."""
    if kind not in _LOSSES:
        raise ValueError(f"loss must be one of {_LOSSES}")
    return _loss_terms(logits, targets, kind)


def segment(net: TrailNet, tile: Raster) -> np.ndarray:
    """Probability map for one tile; normalization is applied internally."""
    size = net.config.input_size
    if tile.height != size or tile.width != size:
        raise ValueError(f"tile is {tile.width}x{tile.height}, expected {size}x{size}")
    z = normalize_tile(tile.pixels)
    with torch.no_grad():
        x = torch.from_numpy(z).reshape(1, 1, size, size)
        param = next(net.parameters())
        probs = net.probabilities(x.to(param.dtype))
    return probs.squeeze(0).squeeze(0).numpy().astype(np.float32)


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Mask of pixels with probability strictly above threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    return BinaryMask(np.asarray(prob_map) > threshold)


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def _augment(img: np.ndarray, mask: np.ndarray, kinds, rng: np.random.Generator):
    if "rotation" in kinds:
        k = int(rng.integers(4))
        img, mask = np.rot90(img, k), np.rot90(mask, k)
    if "flip" in kinds:
        if rng.integers(2):
            img, mask = img[::-1], mask[::-1]
        if rng.integers(2):
            img, mask = img[:, ::-1], mask[:, ::-1]
    if "translation" in kinds:
        dy, dx = rng.integers(-32, 33, size=2)
        img = np.roll(img, (dy, dx), axis=(0, 1))
        mask = np.roll(mask, (dy, dx), axis=(0, 1))
    return np.ascontiguousarray(img), np.ascontiguousarray(mask)


def _load_split(manifest: DatasetManifest, split: str):
    from .raster import FORMAT_FLAT, load_raster

    pairs = []
    for entry in manifest.subset(split):
        img = load_raster(manifest.resolve(entry.image_path), FORMAT_FLAT)
        mask = load_mask(manifest.resolve(entry.mask_path))
        pairs.append((normalize_tile(img.pixels), mask.bits.astype(np.float32)))
    return pairs


def train(
    net: TrailNet,
    manifest: DatasetManifest,
    tcfg: TrainConfig = TrainConfig(),
) -> tuple[TrailNet, list[TrainRecord]]:
    """Train with early stopping; returns the best-validation-loss parameters.

    One record per completed epoch; wall_clock_s is cumulative from the start
    of training.  Raises on an empty split or a non-finite loss.
    """
    train_pairs = _load_split(manifest, "train")
    val_pairs = _load_split(manifest, "validation")
    if not train_pairs or not val_pairs:
        raise ValueError("manifest needs at least 1 train and 1 validation entry")

    size = net.config.input_size
    for z, _ in train_pairs + val_pairs:
        if z.shape != (size, size):
            raise ValueError(f"dataset tile shape {z.shape} != network input {size}")

    rng = np.random.default_rng([tcfg.shuffle_seed, manifest.seed])
    optimizer = torch.optim.Adam(net.parameters(), lr=tcfg.learning_rate)
    records: list[TrainRecord] = []
    best_val = math.inf
    best_state = None
    since_best = 0
    tstart = time.perf_counter()

    for epoch in range(1, tcfg.max_epochs + 1):
        net.train()
        order = rng.permutation(len(train_pairs))
        losses = []
        for lo in range(0, len(order), tcfg.batch_size):
            batch = order[lo : lo + tcfg.batch_size]
            imgs, masks = [], []
            for idx in batch:
                z, m = train_pairs[idx]
                z, m = _augment(z, m, tcfg.augmentation, rng)
                imgs.append(z)
                masks.append(m)
            x = torch.from_numpy(np.stack(imgs)).unsqueeze(1)
            y = torch.from_numpy(np.stack(masks)).unsqueeze(1)
            optimizer.zero_grad()
            loss = segmentation_loss(net(x), y, tcfg.loss)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        net.eval()
        val_losses, ious = [], []
        with torch.no_grad():
            for z, m in val_pairs:
                x = torch.from_numpy(z).reshape(1, 1, size, size)
                y = torch.from_numpy(m).reshape(1, 1, size, size)
                logits = net(x)
                vl = float(segmentation_loss(logits, y, tcfg.loss))
                if not math.isfinite(vl):
                    raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
                val_losses.append(vl)
                pred = torch.sigmoid(logits).numpy().squeeze() > 0.5
                ious.append(_mask_iou(pred, m > 0.5))

        val_loss = float(np.mean(val_losses))
        records.append(
            TrainRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                val_loss=val_loss,
                val_iou=float(np.mean(ious)),
                wall_clock_s=time.perf_counter() - tstart,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(net.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= tcfg.patience:
                break

    net.load_state_dict(best_state)
    net.eval()
    return net, records


def save_train_log(records: list[TrainRecord], path) -> None:
    lines = ["# epoch train_loss val_loss val_iou wall_clock_s"]
    for r in records:
        lines.append(
            f"{r.epoch} {r.train_loss:.6f} {r.val_loss:.6f} {r.val_iou:.6f} {r.wall_clock_s:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_train_log(path) -> list[TrainRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        e, tl, vl, vi, wc = line.split()
        records.append(TrainRecord(int(e), float(tl), float(vl), float(vi), float(wc)))
    return records


def save_checkpoint(net: TrailNet, path) -> None:
    """Versioned binary checkpoint: config + tensor manifest + raw float32 data."""
    state = net.state_dict()
    manifest = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().numpy()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.astype(arr.dtype, copy=False).tobytes())
    cfg = net.config
    header = json.dumps(
        {
            "config": {
                "depth": cfg.depth,
                "base_channels": cfg.base_channels,
                "input_size": cfg.input_size,
                "skip_connections": cfg.skip_connections,
                "param_seed": cfg.param_seed,
            },
            "tensors": manifest,
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> TrailNet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        net = build_network(NetConfig(**header["config"]))
        state = {}
        for spec in header["tensors"]:
            dtype = np.dtype(spec["dtype"])
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            raw = fh.read(n * dtype.itemsize)
            if len(raw) != n * dtype.itemsize:
                raise ValueError("truncated checkpoint payload")
            arr = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"]).copy()
            state[spec["name"]] = torch.from_numpy(arr)
        net.load_state_dict(state)
        net.eval()
        return net
