"""Dataset ingestion, event-to-frame integration, and spike encoders.

File formats
------------
IDX (big endian): 2 zero bytes, a type code (only ``0x08`` unsigned byte is
supported), the dimension count, then one u32 per dimension and the raw
data.  Image files are 3-D (count, rows, cols) with magic ``0x00000803``;
label files are 1-D with magic ``0x00000801``.

Event text: '#' comment lines, then one line ``width height``, then one
event per line as ``t,x,y,p`` with non-decreasing timestamps, in-bounds
coordinates and polarity 0 or 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import IO

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class ImageSet:
    """Grayscale images scaled to [0, 1] plus integer class labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be (count, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("label count does not match image count")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def read_idx(path: str) -> np.ndarray:
    """Read one IDX file; images come back as float32 in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header at offset {len(raw)}")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_LABELS_MAGIC:
        ndim = 1
    elif magic == IDX_IMAGES_MAGIC:
        ndim = 3
    else:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX dimensions at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = header_len + int(np.prod(dims))
    if len(raw) < expected:
        raise ValueError(f"{path}: truncated IDX data at offset {len(raw)}, "
                         f"expected {expected} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len,
                         count=int(np.prod(dims))).reshape(dims)
    if magic == IDX_LABELS_MAGIC:
        return data.astype(np.int64)
    return data.astype(np.float32) / 255.0


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Write uint8 images (count, H, W) in IDX format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"images must be (count, H, W), got {images.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got {labels.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.astype(np.uint8).tobytes())


def load_image_set(images_path: str, labels_path: str) -> ImageSet:
    return ImageSet(images=read_idx(images_path), labels=read_idx(labels_path))


@dataclass
class EventStream:
    """A (t, x, y, p) event list with its sensor dimensions."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ValueError("event field lengths differ")
        if n and np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if n and (self.x.min() < 0 or self.x.max() >= self.width
                  or self.y.min() < 0 or self.y.max() >= self.height):
            raise ValueError(f"event coordinates out of bounds for "
                             f"{self.width}x{self.height} sensor")
        if n and not np.isin(self.p, (0, 1)).all():
            raise ValueError("polarity must be 0 or 1")

    @property
    def count(self) -> int:
        return int(self.t.size)


def write_events_text(stream: EventStream, out: IO[str] | str) -> None:
    if isinstance(out, str):
        with open(out, "w") as fh:
            write_events_text(stream, fh)
        return
    out.write(f"{stream.width} {stream.height}\n")
    for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
        out.write(f"{t},{x},{y},{p}\n")


def read_events_text(src: IO[str] | str) -> EventStream:
    if isinstance(src, str):
        with open(src) as fh:
            return read_events_text(fh)
    lines = [ln.strip() for ln in src]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("event file has no header line")
    try:
        width, height = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"bad sensor dimension header {lines[0]!r}") from exc
    rows = [ln.split(",") for ln in lines[1:]]
    if any(len(r) != 4 for r in rows):
        raise ValueError("event lines must be 't,x,y,p'")
    cols = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return EventStream(t=cols[:, 0], x=cols[:, 1], y=cols[:, 2], p=cols[:, 3],
                       width=width, height=height)


def events_to_frames(stream: EventStream, slices: int) -> np.ndarray:
    """Integrate an event stream into per-polarity count frames.

    Slice ``j`` accumulates the events with index in ``[j_l, j_r)`` where
    ``j_l = floor(N / T) * j`` and ``j_r = floor(N / T) * (j + 1)`` except
    that the last slice runs to N, absorbing the remainder.  Returns int64
    counts of shape (T, 2, height, width); their total equals N.
    """
    if slices < 1:
        raise ValueError(f"slice count must be >= 1, got {slices}")
    n = stream.count
    per = n // slices
    frames = np.zeros((slices, 2, stream.height, stream.width), dtype=np.int64)
    for j in range(slices):
        lo = per * j
        hi = per * (j + 1) if j < slices - 1 else n
        np.add.at(frames[j], (stream.p[lo:hi], stream.y[lo:hi], stream.x[lo:hi]), 1)
    return frames


def rate_encode(values: np.ndarray, steps: int, seed: int) -> np.ndarray:
    """Bernoulli spike encoding: each value fires with its own probability
    independently at every step.  Returns float32 zeros/ones of shape
    (steps, *values.shape); deterministic under the seed.
    """
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() > 1):
        raise ValueError("rate encoding requires values in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random((steps,) + values.shape)
    return (draws < values).astype(np.float32)


def repeat_frames(images: np.ndarray, steps: int) -> np.ndarray:
    """Direct encoding: feed the static image identically at every step.

    Adds a channel axis; (n, H, W) becomes (steps, n, 1, H, W).
    """
    framed = images[:, None, :, :]
    return np.broadcast_to(framed, (steps,) + framed.shape).copy()


def firing_rate_featuremap(spikes_seq: np.ndarray) -> np.ndarray:
    """Mean spike rate over time and channels per spatial location.

    Accepts (T, ..., C, H, W); returns (..., H, W) values in [0, 1].
    """
    if spikes_seq.ndim < 4:
        raise ValueError(f"expected (T, ..., C, H, W), got {spikes_seq.shape}")
    return spikes_seq.mean(axis=0).mean(axis=-3)


@dataclass
class DistributionStats:
    """Percentile summary and fixed-width histogram of layer pre-activations."""

    p5: float
    p95: float
    bin_edges: np.ndarray
    counts: np.ndarray
    bin_width: float = 0.1


def input_distribution_stats(net, images: np.ndarray, steps: int = 1,
                             include_norm: bool = True,
                             bin_width: float = 0.1) -> DistributionStats:
    """Distribution of the first spiking layer's pre-activations.

    Runs the layers in front of the first spiking layer on directly-encoded
    frames and summarizes every position of every sample.  By default the
    sample point is after batch normalization (when present); pass
    ``include_norm=False`` to sample straight off the convolution.
    """
    from .network import BatchNormLayer, ForwardContext, SpikingLayer

    if images.shape[0] == 0:
        raise ValueError("need at least one sample")
    x = repeat_frames(images, steps)
    ctx = ForwardContext(training=False)
    for _, layer in net.layers:
        if isinstance(layer, SpikingLayer):
            break
        if isinstance(layer, BatchNormLayer) and not include_norm:
            break
        x = layer.forward(x, ctx)
    else:
        raise ValueError("network has no spiking layer")
    flat = x.ravel()
    p5, p95 = np.percentile(flat, [5.0, 95.0])
    lo = np.floor(flat.min() / bin_width) * bin_width
    hi = np.ceil(flat.max() / bin_width) * bin_width
    if hi <= lo:
        hi = lo + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, edges = np.histogram(flat, bins=edges)
    return DistributionStats(p5=float(p5), p95=float(p95), bin_edges=edges,
                             counts=counts, bin_width=bin_width)


def synthetic_digits(count: int, seed: int, size: int = 28, classes: int = 10,
                     noise: float = 0.15, max_shift: int = 2) -> ImageSet:
    """Deterministic 10-class image task standing in for a digit dataset.

    Class prototypes are coarse binary patterns upsampled to ``size``;
    samples are randomly shifted, noised copies.  Serves desk-scale training
    where the real handwritten sets are unavailable; carried in the same
    IDX format and value range.
    """
    rng = np.random.default_rng(seed)
    cell = max(size // 7, 1)
    coarse = size // cell
    protos = (rng.random((classes, coarse, coarse)) > 0.5).astype(np.float64) * 0.9
    protos = np.kron(protos, np.ones((1, cell, cell)))[:, :size, :size]
    pad = size - protos.shape[1]
    if pad:
        protos = np.pad(protos, ((0, 0), (0, pad), (0, pad)))

    labels = rng.integers(0, classes, size=count)
    images = np.empty((count, size, size), dtype=np.float32)
    for i, label in enumerate(labels):
        img = protos[label]
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        img = img + rng.normal(0.0, noise, img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return ImageSet(images=images, labels=labels.astype(np.int64))
