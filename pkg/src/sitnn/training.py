"""Optimization loop, gradient checking, checkpointing, and sweeps.

Training is fully deterministic under the config seed: data synthesis,
weight init, shuffling, and dropout masks all derive from one seed
sequence, and gradients reduce in a fixed order, so identical configs
produce bit-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .data import ImageSet, load_image_set, repeat_frames, synthetic_digits
from .network import (NEURON_LIF, NEURON_SIT, SPIKING, LayerSpec, Network,
                      SpikingLayer, build_network, mse_rate_loss,
                      parse_architecture, voting_decode)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"SITNNCKP"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Everything a training run needs; defaults follow the reference setup
    (Adam at 0.01, batch 16, cosine schedule period 64, tau = 2)."""

    architecture: str
    epochs: int = 10
    timesteps: int = 4
    batch_size: int = 16
    learning_rate: float = 0.01
    schedule_period: int = 64
    seed: int = 0
    tau: float = 2.0
    dropout_rate: float = 0.5
    max_batches_per_epoch: int = 1024
    loss: str = "rate_mse"
    dataset: str = "synthetic"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_size: int = 2048
    test_size: int = 1000
    image_size: int = 28

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss != "rate_mse":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.dataset not in ("synthetic", "idx"):
            raise ValueError(f"unknown dataset kind {self.dataset!r}")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


_CONFIG_TYPES = {f.name: f.type for f in TrainConfig.__dataclass_fields__.values()}


def load_config(path: str) -> TrainConfig:
    """Parse a ``key = value`` config file ('#' comments allowed)."""
    values: dict[str, object] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce_config_value(key, raw)
    if "architecture" not in values:
        raise ValueError(f"{path}: missing required key 'architecture'")
    return TrainConfig(**values)


def _coerce_config_value(key: str, raw: str):
    default = TrainConfig.__dataclass_fields__[key].default
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if raw.lower() in ("none", ""):
        return None
    return raw


def save_config(config: TrainConfig, path: str) -> None:
    with open(path, "w") as fh:
        for key, value in asdict(config).items():
            fh.write(f"{key} = {value if value is not None else 'none'}\n")


@dataclass
class RunReport:
    """Per-epoch curves plus provenance for one training run."""

    train_loss: list[float]
    test_accuracy: list[float]
    wall_clock_seconds: float
    checkpoint_path: str | None
    config_hash: str
    seed: int
    moving_average_window: int = 35

    def loss_moving_average(self) -> list[float]:
        return moving_average(self.train_loss, self.moving_average_window)

    def to_json(self) -> str:
        payload = {
            "provenance": {"version": __version__, "config": self.config_hash,
                           "seed": self.seed},
            "train_loss": self.train_loss,
            "train_loss_moving_average": self.loss_moving_average(),
            "test_accuracy": self.test_accuracy,
            "wall_clock_seconds": self.wall_clock_seconds,
            "checkpoint": self.checkpoint_path,
        }
        return json.dumps(payload, indent=2)

    def write_curves_csv(self, path: str) -> None:
        ma = self.loss_moving_average()
        with open(path, "w") as fh:
            fh.write(f"# provenance version={__version__} "
                     f"config={self.config_hash} seed={self.seed}\n")
            fh.write("epoch,train_loss,train_loss_ma,test_accuracy\n")
            for i, (loss, avg, acc) in enumerate(
                    zip(self.train_loss, ma, self.test_accuracy), 1):
                fh.write(f"{i},{loss!r},{avg!r},{acc!r}\n")


def moving_average(series: list[float], window: int) -> list[float]:
    """Trailing mean over at most ``window`` entries at each index."""
    out = []
    for i in range(len(series)):
        lo = max(0, i + 1 - window)
        out.append(float(np.mean(series[lo:i + 1])))
    return out


def cosine_lr(base_lr: float, step: int, period: int) -> float:
    """Cosine annealing with restarts every ``period`` steps."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    phase = (step % period) / period
    return base_lr * (1.0 + math.cos(math.pi * phase)) / 2.0


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState, lr: float,
                beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                eps: float = ADAM_EPS) -> AdamState:
    """One bias-corrected Adam step, in place on the parameter arrays."""
    state.t += 1
    t = state.t
    for key in params:
        grad = grads[key]
        if grad.shape != params[key].shape:
            raise ValueError(f"gradient shape {grad.shape} does not match "
                             f"parameter {key!r} shape {params[key].shape}")
        if key not in state.m:
            state.m[key] = np.zeros_like(params[key], dtype=np.float64)
            state.v[key] = np.zeros_like(params[key], dtype=np.float64)
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params[key] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(params[key].dtype)
    return state


def _load_dataset(config: TrainConfig, rng_seed: int) -> tuple[ImageSet, ImageSet]:
    if config.dataset == "idx":
        missing = [name for name in ("train_images", "train_labels",
                                     "test_images", "test_labels")
                   if getattr(config, name) is None]
        if missing:
            raise ValueError(f"idx dataset needs paths for {missing}")
        train = load_image_set(config.train_images, config.train_labels)
        test = load_image_set(config.test_images, config.test_labels)
        if config.train_size and config.train_size < len(train):
            train = ImageSet(train.images[:config.train_size],
                             train.labels[:config.train_size])
        if config.test_size and config.test_size < len(test):
            test = ImageSet(test.images[:config.test_size],
                            test.labels[:config.test_size])
        return train, test
    both = synthetic_digits(config.train_size + config.test_size,
                            seed=rng_seed, size=config.image_size)
    train = ImageSet(both.images[:config.train_size], both.labels[:config.train_size])
    test = ImageSet(both.images[config.train_size:], both.labels[config.train_size:])
    return train, test


def build_from_config(config: TrainConfig, input_shape: tuple[int, ...],
                      rng: np.random.Generator) -> Network:
    specs = parse_architecture(config.architecture)
    return build_network(specs, input_shape, rng=rng, tau=config.tau,
                         dropout_rates=None if config.dropout_rate is None
                         else [config.dropout_rate] * 8)


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray,
             timesteps: int, batch_size: int = 64) -> float:
    """Top-1 accuracy with voting decode over the test set."""
    pool = net.voting[0] if net.voting else 1
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        frames = repeat_frames(batch, timesteps).astype(np.float32)
        spikes = net.forward_sequence(frames, training=False)
        scores = voting_decode(spikes, pool, pool)
        correct += int((np.argmax(scores, axis=1)
                        == labels[start:start + batch_size]).sum())
    return correct / images.shape[0]


def train(config: TrainConfig, checkpoint_path: str | None = None,
          dataset: tuple[ImageSet, ImageSet] | None = None) -> RunReport:
    """Mini-batch training: forward, rate-MSE loss, BPTT, Adam, cosine LR.

    Evaluates after each epoch.  Aborts with diagnostics on a non-finite
    loss.  Returns the per-epoch report; optionally writes a checkpoint.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    data_rng, init_rng, shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in seeds)

    if dataset is None:
        train_set, test_set = _load_dataset(
            config, int(data_rng.integers(2 ** 31)))
    else:
        train_set, test_set = dataset
    input_shape = (1,) + train_set.images.shape[1:]
    net = build_from_config(config, input_shape, init_rng)
    pool = net.voting[0] if net.voting else 1
    if net.num_classes < train_set.num_classes:
        raise ValueError(f"network decodes {net.num_classes} classes but data "
                         f"has {train_set.num_classes}")

    params = net.parameters()
    state = AdamState()
    losses: list[float] = []
    accuracies: list[float] = []
    started = time.perf_counter()

    for epoch in range(config.epochs):
        lr = cosine_lr(config.learning_rate, epoch, config.schedule_period)
        order = shuffle_rng.permutation(len(train_set))
        epoch_losses = []
        batches = 0
        for start in range(0, len(train_set), config.batch_size):
            if batches >= config.max_batches_per_epoch:
                break
            idx = order[start:start + config.batch_size]
            frames = repeat_frames(train_set.images[idx],
                                   config.timesteps).astype(np.float32)
            spikes = net.forward_sequence(frames, training=True, rng=dropout_rng)
            loss, grad = mse_rate_loss(spikes, train_set.labels[idx], pool)
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss!r} at epoch "
                                   f"{epoch + 1}, batch {batches + 1}")
            grads = net.backward(grad)
            adam_update(params, grads, state, lr)
            epoch_losses.append(loss)
            batches += 1
        losses.append(float(np.mean(epoch_losses)))
        accuracies.append(evaluate(net, test_set.images, test_set.labels,
                                   config.timesteps))

    wall = time.perf_counter() - started
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, net, state, config)
    return RunReport(train_loss=losses, test_accuracy=accuracies,
                     wall_clock_seconds=wall, checkpoint_path=checkpoint_path,
                     config_hash=config.config_hash(), seed=config.seed)


def sit_location_sweep(config: TrainConfig,
                       positions: list[int]) -> dict[str | int, float]:
    """Accuracy of the hybrid net as the standardized layer moves.

    Position ``i`` replaces the spiking layer after the i-th convolution
    (1-based) with a SIT layer, all others LIF.  Always includes the all-LIF
    baseline under the key ``"baseline"``.  Duplicates are dropped with a
    warning.
    """
    specs = parse_architecture(config.architecture)
    conv_neuron_slots: list[int] = []
    last_conv = None
    for i, spec in enumerate(specs):
        if spec.kind == "conv":
            last_conv = i
        elif spec.kind == SPIKING and last_conv is not None:
            conv_neuron_slots.append(i)
            last_conv = None

    unique: list[int] = []
    for pos in positions:
        if pos in unique:
            warnings.warn(f"duplicate sweep position {pos} dropped")
            continue
        if not 1 <= pos <= len(conv_neuron_slots):
            raise ValueError(f"position {pos} outside 1..{len(conv_neuron_slots)}")
        unique.append(pos)

    all_lif = [replace(s, neuron=NEURON_LIF) if s.kind == SPIKING
               and s.neuron != NEURON_LIF and i in conv_neuron_slots else s
               for i, s in enumerate(specs)]

    def run(layer_specs: list[LayerSpec]) -> float:
        cfg = replace(config, architecture=format_specs(layer_specs))
        return train(cfg).test_accuracy[-1]

    results: dict[str | int, float] = {"baseline": run(all_lif)}
    for pos in unique:
        swapped = list(all_lif)
        slot = conv_neuron_slots[pos - 1]
        swapped[slot] = replace(swapped[slot], neuron=NEURON_SIT)
        results[pos] = run(swapped)
    return results


def format_specs(specs: list[LayerSpec]) -> str:
    from .network import format_architecture
    return format_architecture(specs)


def gradient_check(architecture: str, input_shape: tuple[int, ...],
                   samples: int = 4, timesteps: int = 4, coords: int = 256,
                   step: float = 1e-4, seed: int = 0,
                   use_dropout_mask: bool = False) -> float:
    """Analytic BPTT versus central finite differences.

    The network runs in relaxed (soft-spike) mode and float64 so the loss
    is smooth; both finite-difference evaluations reuse the same dropout
    mask.  Returns the max relative error over ``coords`` randomly sampled
    parameter coordinates.
    """
    rng = np.random.default_rng(seed)
    specs = parse_architecture(architecture)
    net = build_network(specs, input_shape, dtype=np.float64, rng=rng)
    pool = net.voting[0] if net.voting else 1
    frames = rng.random((timesteps, samples) + tuple(input_shape))
    targets = rng.integers(0, net.num_classes, size=samples)
    mask_seed = int(rng.integers(2 ** 31))

    def loss_and_grads(compute_grads: bool):
        fwd_rng = np.random.default_rng(mask_seed)
        spikes = net.forward_sequence(frames, training=use_dropout_mask,
                                      relaxed=True, rng=fwd_rng)
        loss, grad = mse_rate_loss(spikes, targets, pool)
        if not compute_grads:
            return loss, None
        return loss, net.backward(grad)

    _, analytic = loss_and_grads(True)
    params = net.parameters()
    flat_coords = []
    names = sorted(params)
    total = sum(params[name].size for name in names)
    chosen = rng.choice(total, size=min(coords, total), replace=False)
    offsets = np.cumsum([0] + [params[name].size for name in names])
    for c in np.sort(chosen):
        layer_idx = int(np.searchsorted(offsets, c, side="right") - 1)
        flat_coords.append((names[layer_idx], int(c - offsets[layer_idx])))

    worst = 0.0
    for name, offset in flat_coords:
        array = params[name].reshape(-1)
        original = array[offset]
        array[offset] = original + step
        plus, _ = loss_and_grads(False)
        array[offset] = original - step
        minus, _ = loss_and_grads(False)
        array[offset] = original
        fd = (plus - minus) / (2 * step)
        an = float(analytic[name].reshape(-1)[offset])
        scale = max(abs(fd), abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / scale)
    return worst


def save_checkpoint(path: str, net: Network, state: AdamState,
                    config: TrainConfig) -> None:
    """Versioned container: JSON header, then little-endian float32 blobs.

    Blob order is the header manifest order: parameters, buffers, then
    Adam first/second moments.
    """
    params = net.parameters()
    buffers = net.buffers()
    names = list(params)
    buffer_names = list(buffers)
    header = {
        "version": CHECKPOINT_VERSION,
        "library": __version__,
        "architecture": format_specs(net.specs),
        "input_shape": list(net.input_shape),
        "seed": config.seed,
        "tau": config.tau,
        "dropout_rate": config.dropout_rate,
        "config_hash": config.config_hash(),
        "parameters": [[n, list(params[n].shape)] for n in names],
        "buffers": [[n, list(buffers[n].shape)] for n in buffer_names],
        "adam_t": state.t,
        "adam": [[n, list(params[n].shape)] for n in names if n in state.m],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params[n].astype("<f4").tobytes())
        for n in buffer_names:
            fh.write(buffers[n].astype("<f4").tobytes())
        for n, _ in header["adam"]:
            fh.write(state.m[n].astype("<f4").tobytes())
        for n, _ in header["adam"]:
            fh.write(state.v[n].astype("<f4").tobytes())


def load_checkpoint(path: str) -> tuple[Network, AdamState, dict]:
    """Rebuild a network (and optimizer state) from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")

        def read_block(shape) -> np.ndarray:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated checkpoint blob")
            return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

        specs = parse_architecture(header["architecture"])
        net = build_network(specs, tuple(header["input_shape"]),
                            rng=np.random.default_rng(0), tau=header["tau"],
                            dropout_rates=[header["dropout_rate"]] * 8
                            if header.get("dropout_rate") is not None else None)
        net.set_parameters({n: read_block(shape) for n, shape in header["parameters"]})
        net.set_buffers({n: read_block(shape) for n, shape in header["buffers"]})
        state = AdamState(t=header["adam_t"])
        state.m = {n: read_block(shape).astype(np.float64)
                   for n, shape in header["adam"]}
        state.v = {n: read_block(shape).astype(np.float64)
                   for n, shape in header["adam"]}
    return net, state, header
