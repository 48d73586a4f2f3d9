"""Synthetic text/frame encoders and text-conditioned feature fusion.

The encoder towers are frozen random linear projections (a desk-scale stand-in
for large pretrained backbones) followed by optional trainable adapters that
start at identity, with L2 normalization on every output embedding. Fusion is
single-head scaled-dot-product attention pooling over frame embeddings,
conditioned on the text embedding, with an output projection and optional
dropout on the pooled coordinates during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractViolation, SeededRng

# An embedding whose pre-normalization length falls below this is rejected.
ZERO_NORM_THRESHOLD = 1e-12


@dataclass
class EncoderStack:
    """Frozen projections plus identity-initialized trainable adapters.

    proj_text / proj_frame: (d, c), immutable after initialization.
    adapter_text / adapter_frame: (d, d), the only trainable encoder parts.
    """

    proj_text: np.ndarray
    proj_frame: np.ndarray
    adapter_text: np.ndarray
    adapter_frame: np.ndarray
    adapters_enabled: bool = True

    @property
    def dim(self) -> int:
        return self.proj_text.shape[0]

    @property
    def concept_dim(self) -> int:
        return self.proj_text.shape[1]


@dataclass
class FusionParameters:
    """Single-head attention pooling weights, all (d, d), identity at init."""

    query_map: np.ndarray
    key_map: np.ndarray
    value_map: np.ndarray
    output_map: np.ndarray
    dropout_rate: float = 0.3


def init_encoder_stack(d: int, c: int, rng: SeededRng, adapters_enabled: bool = True) -> EncoderStack:
    """Frozen projections with i.i.d. N(0, 1/c) entries; adapters = identity."""
    proj_t = rng.standard_normal(d * c).reshape(d, c) / np.sqrt(c)
    proj_f = rng.standard_normal(d * c).reshape(d, c) / np.sqrt(c)
    return EncoderStack(
        proj_text=proj_t,
        proj_frame=proj_f,
        adapter_text=np.eye(d),
        adapter_frame=np.eye(d),
        adapters_enabled=adapters_enabled,
    )


def init_fusion(d: int, dropout_rate: float = 0.3) -> FusionParameters:
    return FusionParameters(
        query_map=np.eye(d),
        key_map=np.eye(d),
        value_map=np.eye(d),
        output_map=np.eye(d),
        dropout_rate=dropout_rate,
    )


def _normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    if n <= ZERO_NORM_THRESHOLD:
        raise ContractViolation("embedding norm guard hit (zero or near-zero vector)")
    return x / n


def encode_text(features: np.ndarray, stack: EncoderStack) -> np.ndarray:
    """Text feature vector (c,) -> unit-norm embedding (d,)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (stack.concept_dim,):
        raise ContractViolation(
            f"text features shape {features.shape} does not match concept dim {stack.concept_dim}"
        )
    y = stack.proj_text @ features
    if stack.adapters_enabled:
        y = stack.adapter_text @ y
    return _normalize(y)


def _encode_frame(features: np.ndarray, stack: EncoderStack) -> np.ndarray:
    y = stack.proj_frame @ features
    if stack.adapters_enabled:
        y = stack.adapter_frame @ y
    return _normalize(y)


def sample_frame_indices(total: int, count: int) -> np.ndarray:
    """Uniform-by-index frame sampling: floor(k * T / T') for k = 0..T'-1."""
    if count < 1 or total < count:
        raise ContractViolation(f"cannot sample {count} frames from {total}")
    return (np.arange(count) * total) // count


def encode_frames(frames: np.ndarray, count: int, stack: EncoderStack) -> np.ndarray:
    """Raw frames (T, c) -> (count, d) unit-norm embeddings of uniformly sampled frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != stack.concept_dim:
        raise ContractViolation(f"frame array shape {frames.shape} invalid")
    idx = sample_frame_indices(frames.shape[0], count)
    return np.stack([_encode_frame(frames[i], stack) for i in idx])


def fuse(
    frames: np.ndarray,
    t: np.ndarray,
    p: FusionParameters,
    training: bool = False,
    rng: SeededRng | None = None,
) -> np.ndarray:
    """Pool frame embeddings (T', d) into one video embedding conditioned on t.

    w = softmax_i <Q t, K f_i> / sqrt(d); pooled = sum_i w_i (V f_i);
    output = normalize(O pooled). Dropout hits the pooled coordinates only
    when training is true (rng required in that case).
    """
    frames = np.asarray(frames, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    d = t.shape[0]
    if frames.ndim != 2 or frames.shape[1] != d:
        raise ContractViolation(f"frames shape {frames.shape} does not match text dim {d}")
    q = p.query_map @ t
    keys = frames @ p.key_map.T
    logits = keys @ q / np.sqrt(d)
    m = logits.max()
    e = np.exp(logits - m)
    w = e / e.sum()
    pooled = (frames @ p.value_map.T).T @ w
    if training:
        if rng is None:
            raise ContractViolation("training-mode fusion requires an rng for dropout")
        if p.dropout_rate > 0.0:
            keep = (rng.uniform(d) >= p.dropout_rate).astype(np.float64)
            pooled = pooled * keep / (1.0 - p.dropout_rate)
    return _normalize(p.output_map @ pooled)
