"""Deterministic training loop: AdamW with warmup + cosine decay, two
parameter groups, and bit-exact checkpoint resume.

All randomness is drawn from substreams keyed by purpose and position
(shuffles by epoch, noise and dropout by global step), so a resumed run
replays exactly the draws the straight run would have made. The checkpoint
format stores every parameter array, the optimizer moments, the flat config
text, and the (seed, global step) pair that fixes the stream positions.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ContractViolation, FormatError, substream
from .model import (
    MODES,
    ModelParameters,
    all_array_names,
    get_param,
    init_model,
    parameter_group,
    set_param,
    trainable_names,
)
from .objectives import (
    LossBreakdown,
    PairBatch,
    backward_batch,
    draw_noise,
    dropout_grid_mask,
    forward_batch,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergence(RuntimeError):
    """A non-finite loss or gradient surfaced during optimization."""

CHECKPOINT_MAGIC = b"TMCK"
CHECKPOINT_VERSION = 1

# substream purposes for the training loop
_STREAM_SHUFFLE = 201
_STREAM_NOISE = 202
_STREAM_DROPOUT = 203


@dataclass
class TrainingConfig:
    """Flat run configuration; every field round-trips through config text."""

    dim: int = 32
    concept_dim: int = 16
    frame_count: int = 8
    radius_variant: str = "linear"
    radius_trainable: bool = True
    theta_init: float = 0.0
    adapters_enabled: bool = True
    mode: str = "t-mass"
    alpha: float = 1.2
    batch_size: int = 32
    epochs: int = 5
    lr_head: float = 1e-5
    lr_adapter: float = 1e-6
    weight_decay: float = 0.2
    warmup_fraction: float = 0.1
    dropout_rate: float = 0.3
    train_samples: int = 1
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractViolation(f"unknown training mode {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.train_samples < 1:
            raise ContractViolation("batch size and train samples must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ContractViolation("warmup fraction must lie in [0, 1]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractViolation("dropout rate must lie in [0, 1)")
        if self.seed < 0:
            raise ContractViolation("seed must be nonnegative")
        if self.dim < 1 or self.concept_dim < 1 or self.frame_count < 1 or self.trials < 1:
            raise ContractViolation("model sizes and trial count must be positive")


def config_to_text(config: TrainingConfig) -> str:
    """Flat `key = value` lines, sorted by key."""
    fields = dataclasses.asdict(config)
    lines = []
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}\n")
    return "".join(lines)


def parse_config_text(text: str, base: TrainingConfig | None = None) -> TrainingConfig:
    """Parse `key = value` lines (# comments, blank lines allowed) on top of
    defaults. Unknown keys are rejected."""
    values = dataclasses.asdict(base) if base is not None else {}
    types = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
    defaults = TrainingConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not hasattr(defaults, key):
            raise ContractViolation(f"config line {lineno}: unknown key {key!r}")
        current = getattr(defaults, key)
        if isinstance(current, bool):
            if value not in ("true", "false"):
                raise ContractViolation(f"config line {lineno}: {key} wants true or false")
            values[key] = value == "true"
        elif isinstance(current, int):
            values[key] = int(value)
        elif isinstance(current, float):
            values[key] = float(value)
        else:
            values[key] = value
    return TrainingConfig(**values)


def init_model_from_config(config: TrainingConfig) -> ModelParameters:
    params = init_model(
        config.dim,
        config.concept_dim,
        config.frame_count,
        radius_variant=config.radius_variant,
        seed=config.seed,
        dropout_rate=config.dropout_rate,
        adapters_enabled=config.adapters_enabled,
    )
    if config.radius_variant == "scalar":
        params.radius.theta = float(config.theta_init)
    params.radius.trainable = config.radius_trainable
    return params


# ---------------------------------------------------------------------------
# learning-rate schedule and AdamW


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup to base_lr, then cosine decay reaching zero at
    total_steps."""
    if total_steps < 1:
        raise ContractViolation("schedule needs at least one step")
    if not 0 <= step <= total_steps:
        raise ContractViolation("step outside the schedule range")
    warmup_steps = int(warmup_fraction * total_steps)
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class OptimizerState:
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def init_optimizer(params: ModelParameters, mode: str) -> OptimizerState:
    state = OptimizerState()
    for name in trainable_names(params, mode):
        state.first_moment[name] = np.zeros_like(get_param(params, name))
        state.second_moment[name] = np.zeros_like(get_param(params, name))
    return state


def adamw_step(
    params: ModelParameters,
    grads: dict,
    state: OptimizerState,
    lr_by_group: dict,
    weight_decay: float,
) -> None:
    """One decoupled-weight-decay Adam update; decay skips the logit scale."""
    for name in state.first_moment:
        if not np.all(np.isfinite(np.asarray(grads[name]))):
            raise TrainingDivergence(
                f"non-finite gradient for {name!r} at optimizer step {state.step + 1}"
            )
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name in state.first_moment:
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment[name] = ADAM_BETA1 * state.first_moment[name] + (1.0 - ADAM_BETA1) * g
        v = state.second_moment[name] = ADAM_BETA2 * state.second_moment[name] + (1.0 - ADAM_BETA2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        lr = lr_by_group[parameter_group(name)]
        p = get_param(params, name)
        decay = 0.0 if name == "log_lambda" else weight_decay
        set_param(params, name, p - lr * update - lr * decay * p)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainState:
    params: ModelParameters
    optimizer: OptimizerState
    global_step: int = 0


@dataclass
class TrainResult:
    state: TrainState
    step_losses: list
    epoch_means: list


def steps_per_epoch(pair_count: int, batch_size: int) -> int:
    # Partial trailing batches are dropped; the pair count must cover at
    # least one full batch.
    steps = pair_count // batch_size
    if steps < 1:
        raise ContractViolation("fewer training pairs than one batch")
    return steps


def train(
    text: np.ndarray,
    videos: np.ndarray,
    config: TrainingConfig,
    resume: TrainState | None = None,
    stop_after_epochs: int | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Run the configured objective over the pair arrays.

    The schedule always spans config.epochs; stop_after_epochs ends the loop
    early (for checkpoint-resume flows) without changing it. Resume picks up
    at the epoch boundary implied by the saved global step.
    """
    text = np.asarray(text, dtype=np.float64)
    videos = np.asarray(videos, dtype=np.float64)
    pair_count = text.shape[0]
    per_epoch = steps_per_epoch(pair_count, config.batch_size)
    total_steps = per_epoch * config.epochs
    last_epoch = config.epochs if stop_after_epochs is None else stop_after_epochs
    if not 0 <= last_epoch <= config.epochs:
        raise ContractViolation("stop epoch outside the configured run")

    if resume is None:
        fresh = init_model_from_config(config)
        state = TrainState(params=fresh, optimizer=init_optimizer(fresh, config.mode))
    else:
        state = resume
        if state.global_step % per_epoch != 0:
            raise ContractViolation("resume only lands on epoch boundaries")
    start_epoch = state.global_step // per_epoch

    lr_pairs = {"head": config.lr_head, "backbone-adapter": config.lr_adapter}
    step_losses = []
    epoch_means = []
    for epoch in range(start_epoch, last_epoch):
        order = substream(config.seed, _STREAM_SHUFFLE, epoch).permutation(pair_count)
        epoch_total = 0.0
        for b in range(per_epoch):
            rows = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = PairBatch(text=text[rows], videos=videos[rows])
            eps = None
            if config.mode != "baseline":
                eps = draw_noise(
                    substream(config.seed, _STREAM_NOISE, state.global_step),
                    config.train_samples,
                    batch.size,
                    config.dim,
                )
            mask = dropout_grid_mask(
                substream(config.seed, _STREAM_DROPOUT, state.global_step),
                batch.size,
                config.dim,
                config.dropout_rate,
            )
            breakdown, cache = forward_batch(
                batch, state.params, config.mode, config.alpha, eps=eps, drop_mask=mask
            )
            if not np.isfinite(breakdown.l_total):
                raise TrainingDivergence(
                    f"non-finite loss at step {state.global_step}: {breakdown}"
                )
            grads = backward_batch(cache)
            scale = lr_at(state.global_step, total_steps, 1.0, config.warmup_fraction)
            lrs = {group: base * scale for group, base in lr_pairs.items()}
            adamw_step(state.params, grads, state.optimizer, lrs, config.weight_decay)
            state.global_step += 1
            step_losses.append(breakdown)
            epoch_total += breakdown.l_total
        epoch_means.append(epoch_total / per_epoch)
        if epoch_callback is not None:
            epoch_callback(state, epoch)
    return TrainResult(state=state, step_losses=step_losses, epoch_means=epoch_means)


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "TMCK", u32 version, then three length-prefixed sections: a named
# array table for parameters, one for optimizer state (m.<name>, v.<name>,
# and a scalar "step"), the config text, and finally two u64 words
# (seed, global step) that pin every derived random stream.


def _pack_array_table(entries: dict) -> bytes:
    out = [struct.pack("<I", len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            out.append(struct.pack("<I", dim))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.blob):
            raise FormatError(f"checkpoint truncated at byte {self.pos} reading {what}")
        chunk = self.blob[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def _unpack_array_table(reader: _Reader) -> dict:
    count = reader.u32("array count")
    entries = {}
    for _ in range(count):
        name_len = reader.u32("name length")
        name = reader.take(name_len, "name").decode("utf-8")
        ndim = reader.u32("rank")
        shape = tuple(reader.u32("dimension") for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        data = reader.take(8 * size, f"data for {name}")
        entries[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return entries


def save_checkpoint(path, state: TrainState, config: TrainingConfig) -> None:
    params = state.params
    arrays = {name: get_param(params, name) for name in all_array_names(params)}
    opt = {}
    for name, value in state.optimizer.first_moment.items():
        opt[f"m.{name}"] = value
    for name, value in state.optimizer.second_moment.items():
        opt[f"v.{name}"] = value
    opt["step"] = np.float64(state.optimizer.step)
    config_blob = config_to_text(config).encode("utf-8")
    blob = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", CHECKPOINT_VERSION),
            _pack_array_table(arrays),
            _pack_array_table(opt),
            struct.pack("<I", len(config_blob)),
            config_blob,
            struct.pack("<Q", config.seed),
            struct.pack("<Q", state.global_step),
        ]
    )
    with open(path, "wb") as handle:
        handle.write(blob)


def load_checkpoint(path) -> tuple[TrainState, TrainingConfig]:
    with open(path, "rb") as handle:
        reader = _Reader(handle.read())
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic at byte 0: {magic!r}")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    arrays = _unpack_array_table(reader)
    opt_entries = _unpack_array_table(reader)
    config_len = reader.u32("config length")
    config = parse_config_text(reader.take(config_len, "config text").decode("utf-8"))
    seed = reader.u64("seed")
    global_step = reader.u64("global step")
    if reader.pos != len(reader.blob):
        raise FormatError(f"trailing bytes at byte {reader.pos}")
    if seed != config.seed:
        raise FormatError("seed record disagrees with config")

    params = init_model_from_config(config)
    for name in all_array_names(params):
        if name not in arrays:
            raise FormatError(f"checkpoint missing parameter {name!r}")
        stored = arrays.pop(name)
        if name in ("proj_text", "proj_frame"):
            if stored.shape != get_param(params, name).shape:
                raise FormatError(f"shape mismatch for {name!r}")
            if name == "proj_text":
                params.stack.proj_text = stored
            else:
                params.stack.proj_frame = stored
        else:
            set_param(params, name, stored)
    if arrays:
        raise FormatError(f"checkpoint has unknown parameter {sorted(arrays)[0]!r}")

    optimizer = init_optimizer(params, config.mode)
    if "step" not in opt_entries:
        raise FormatError("checkpoint missing optimizer step")
    optimizer.step = int(opt_entries.pop("step"))
    for name in optimizer.first_moment:
        try:
            optimizer.first_moment[name] = opt_entries.pop(f"m.{name}")
            optimizer.second_moment[name] = opt_entries.pop(f"v.{name}")
        except KeyError as missing:
            raise FormatError(f"checkpoint missing optimizer entry {missing.args[0]!r}") from None
    if opt_entries:
        raise FormatError(f"checkpoint has unknown optimizer entry {sorted(opt_entries)[0]!r}")
    return TrainState(params=params, optimizer=optimizer, global_step=global_step), config
