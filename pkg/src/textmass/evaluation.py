"""Retrieval evaluation in both directions plus diagnostic reports.

Inference mirrors training's text-conditioned fusion: each (query,
candidate) pair gets its own fused video embedding and its own radius, and
with sampling enabled the pair score is the best cosine over M stochastic
text samples drawn from a substream keyed by (seed, query id, candidate id).
Ranks use strictly-greater counting with index tie-break. Reports are
emitted as UTF-8 CSV with 6-decimal numbers so identical seeds give
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContractViolation, NORM_GUARD, substream
from .encoders import ZERO_NORM_THRESHOLD, sample_frame_indices
from .mass import SamplingConfig, select_best_sample
from .model import ModelParameters

# substream purpose for per-pair inference sampling
_STREAM_EVAL = 301

_SINGLE_TRIAL = SamplingConfig(trials=1)


class _ZeroNoise:
    """Noise source that collapses t + R*eps to t exactly."""

    def standard_normal(self, n: int) -> np.ndarray:
        return np.zeros(int(n))


@dataclass
class RetrievalMetrics:
    direction: str
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float


@dataclass
class RadiusRow:
    query_id: int
    candidate_id: int
    relevant: bool
    l1_radius: float
    best_similarity: float


@dataclass
class AlignmentRow:
    query_id: int
    max_irrelevant_sim_det: float
    max_irrelevant_sim_stoch: float
    ce_det: float
    ce_stoch: float


# ---------------------------------------------------------------------------
# embedding helpers shared by the inference paths


def _embed_texts(texts: np.ndarray, params: ModelParameters) -> np.ndarray:
    stack = params.stack
    pre = texts @ stack.proj_text.T
    if stack.adapters_enabled:
        pre = pre @ stack.adapter_text.T
    norms = np.linalg.norm(pre, axis=1)
    if np.any(norms <= ZERO_NORM_THRESHOLD):
        raise ContractViolation("text embedding collapsed to zero norm")
    return pre / norms[:, None]


def _embed_frames(videos: np.ndarray, params: ModelParameters) -> np.ndarray:
    idx = sample_frame_indices(videos.shape[1], params.frame_count)
    stack = params.stack
    pre = videos[:, idx, :] @ stack.proj_frame.T
    if stack.adapters_enabled:
        pre = pre @ stack.adapter_frame.T
    norms = np.linalg.norm(pre, axis=2)
    if np.any(norms <= ZERO_NORM_THRESHOLD):
        raise ContractViolation("frame embedding collapsed to zero norm")
    return pre / norms[..., None]


def _fused_for_query(
    text_vec: np.ndarray, keys: np.ndarray, values: np.ndarray, params: ModelParameters
) -> np.ndarray:
    """Fuse every candidate's frames under one text's attention.

    keys / values: (C, T', d) premultiplied frame embeddings.
    """
    d = params.dim
    query = params.fusion.query_map @ text_vec
    logits = np.einsum("cld,d->cl", keys, query) / np.sqrt(d)
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    weights = shifted / shifted.sum(axis=1, keepdims=True)
    pooled = np.einsum("cl,cld->cd", weights, values)
    out = pooled @ params.fusion.output_map.T
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms <= ZERO_NORM_THRESHOLD):
        raise ContractViolation("fused video embedding collapsed to zero norm")
    return out / norms[:, None]


def _radius_for_query(
    text_vec: np.ndarray, frame_emb: np.ndarray, params: ModelParameters
) -> np.ndarray:
    """Per-candidate radius vectors (C, d) for one text."""
    norms = np.linalg.norm(frame_emb, axis=2)
    sims = np.einsum("cld,d->cl", frame_emb, text_vec) / (
        np.linalg.norm(text_vec) * norms + NORM_GUARD
    )
    rparams = params.radius
    if rparams.variant == "linear":
        return np.exp(sims @ rparams.weights)
    mean = sims.mean(axis=1)
    if rparams.variant == "scalar":
        return np.exp(rparams.theta * mean)[:, None] * np.ones(params.dim)
    return np.exp(mean)[:, None] * np.ones(params.dim)


def inference_similarity_matrix(
    texts: np.ndarray,
    videos: np.ndarray,
    params: ModelParameters,
    cfg: SamplingConfig,
    use_sampling: bool,
    seed: int,
) -> np.ndarray:
    """(Q, C) pair scores; best-of-M per pair when sampling. The deterministic
    path scores each pair as a zero-radius, zero-noise best-of-one, which is
    the plain clipped cosine computed with the exact op sequence of the
    sampled path, so a collapsed sampler reproduces it bit for bit."""
    texts = np.asarray(texts, dtype=np.float64)
    videos = np.asarray(videos, dtype=np.float64)
    if texts.ndim != 2 or videos.ndim != 3:
        raise ContractViolation("inference wants texts (Q, c) and videos (C, T, c)")
    if texts.shape[1] != videos.shape[2]:
        raise ContractViolation("text and frame feature widths disagree")
    text_emb = _embed_texts(texts, params)
    frame_emb = _embed_frames(videos, params)
    keys = frame_emb @ params.fusion.key_map.T
    values = frame_emb @ params.fusion.value_map.T

    q_count, c_count = text_emb.shape[0], frame_emb.shape[0]
    zero_radius = np.zeros(params.dim)
    sims = np.empty((q_count, c_count))
    for q in range(q_count):
        t = text_emb[q]
        fused = _fused_for_query(t, keys, values, params)
        if not use_sampling:
            for c in range(c_count):
                _, best = select_best_sample(t, zero_radius, fused[c], _SINGLE_TRIAL, _ZeroNoise())
                sims[q, c] = best
            continue
        radius_grid = _radius_for_query(t, frame_emb, params)
        for c in range(c_count):
            rng = substream(seed, _STREAM_EVAL, q, c)
            _, best = select_best_sample(t, radius_grid[c], fused[c], cfg, rng)
            sims[q, c] = best
    return sims


# ---------------------------------------------------------------------------
# rank metrics


def rank_metrics(
    sims: np.ndarray, relevant_index: np.ndarray, direction: str = "text-to-video"
) -> tuple[np.ndarray, RetrievalMetrics]:
    """1-based rank of each query's relevant candidate plus R@K/MdR/MnR.

    rank = 1 + #(strictly greater) + #(equal at an earlier index), so ties
    resolve deterministically by candidate index.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 2 or sims.shape[0] < 1 or sims.shape[1] < 1:
        raise ContractViolation("similarity matrix must be non-empty and 2-D")
    relevant = np.asarray(relevant_index, dtype=np.int64)
    if relevant.shape != (sims.shape[0],):
        raise ContractViolation("one relevant index per query row")
    if np.any(relevant < 0) or np.any(relevant >= sims.shape[1]):
        raise ContractViolation("relevant index outside the candidate pool")

    rows = np.arange(sims.shape[0])
    rel_scores = sims[rows, relevant]
    greater = (sims > rel_scores[:, None]).sum(axis=1)
    earlier = np.arange(sims.shape[1])[None, :] < relevant[:, None]
    tied_earlier = ((sims == rel_scores[:, None]) & earlier).sum(axis=1)
    ranks = (1 + greater + tied_earlier).astype(np.int64)
    metrics = RetrievalMetrics(
        direction=direction,
        r1=float(100.0 * np.mean(ranks <= 1)),
        r5=float(100.0 * np.mean(ranks <= 5)),
        r10=float(100.0 * np.mean(ranks <= 10)),
        mdr=float(np.median(ranks)),
        mnr=float(np.mean(ranks)),
    )
    return ranks, metrics


def video_to_text_metrics(sims: np.ndarray, relevant_index: np.ndarray) -> RetrievalMetrics:
    """Rank text candidates per video query over the transposed pair
    scores."""
    sims = np.asarray(sims, dtype=np.float64)
    _, metrics = rank_metrics(sims.T, relevant_index, direction="video-to-text")
    return metrics


# ---------------------------------------------------------------------------
# diagnostic reports


def radius_dynamics_report(
    query_text: np.ndarray,
    candidate_videos: np.ndarray,
    params: ModelParameters,
    relevant_index: int,
    cfg: SamplingConfig,
    seed: int,
    query_id: int = 0,
) -> list[RadiusRow]:
    """Per-candidate L1 radius mass and best-of-M similarity for one query,
    using the same substreams as the inference matrix."""
    query_text = np.asarray(query_text, dtype=np.float64)
    candidate_videos = np.asarray(candidate_videos, dtype=np.float64)
    if not 0 <= relevant_index < candidate_videos.shape[0]:
        raise ContractViolation("relevant index outside the candidate pool")
    text_emb = _embed_texts(query_text[None, :], params)[0]
    frame_emb = _embed_frames(candidate_videos, params)
    keys = frame_emb @ params.fusion.key_map.T
    values = frame_emb @ params.fusion.value_map.T
    fused = _fused_for_query(text_emb, keys, values, params)
    radius_grid = _radius_for_query(text_emb, frame_emb, params)
    rows = []
    for c in range(candidate_videos.shape[0]):
        rng = substream(seed, _STREAM_EVAL, query_id, c)
        _, best = select_best_sample(text_emb, radius_grid[c], fused[c], cfg, rng)
        rows.append(
            RadiusRow(
                query_id=query_id,
                candidate_id=c,
                relevant=(c == relevant_index),
                l1_radius=float(np.abs(radius_grid[c]).sum()),
                best_similarity=best,
            )
        )
    return rows


def _per_pair_ce(sims: np.ndarray, lam: float) -> np.ndarray:
    """Per-query text-to-video cross-entropy terms on an aligned matrix."""
    logits = lam * sims
    shift = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
    return lse - np.diagonal(logits)


def alignment_report(
    texts: np.ndarray,
    videos: np.ndarray,
    params: ModelParameters,
    cfg: SamplingConfig,
    seed: int,
) -> list[AlignmentRow]:
    """Per query: maximum similarity to irrelevant candidates and per-pair
    CE term, under the deterministic text and under best-of-M selection.
    Wants an aligned pool (query q's relevant candidate is q)."""
    texts = np.asarray(texts, dtype=np.float64)
    videos = np.asarray(videos, dtype=np.float64)
    if texts.shape[0] != videos.shape[0]:
        raise ContractViolation("alignment report wants an aligned text-video pool")
    det = inference_similarity_matrix(texts, videos, params, cfg, False, seed)
    stoch = inference_similarity_matrix(texts, videos, params, cfg, True, seed)
    lam = params.logit_scale()
    ce_det = _per_pair_ce(det, lam)
    ce_stoch = _per_pair_ce(stoch, lam)
    n = det.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    rows = []
    for q in range(n):
        rows.append(
            AlignmentRow(
                query_id=q,
                max_irrelevant_sim_det=float(det[q, off_diag[q]].max()),
                max_irrelevant_sim_stoch=float(stoch[q, off_diag[q]].max()),
                ce_det=float(ce_det[q]),
                ce_stoch=float(ce_stoch[q]),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV emission (fixed schemas, 6 decimal places)


def _write_lines(path, lines: list[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_metrics_csv(path, metrics: list[RetrievalMetrics]) -> None:
    lines = ["direction,r1,r5,r10,mdr,mnr"]
    for m in metrics:
        lines.append(
            f"{m.direction},{m.r1:.6f},{m.r5:.6f},{m.r10:.6f},{m.mdr:.6f},{m.mnr:.6f}"
        )
    _write_lines(path, lines)


def write_radius_report(path, rows: list[RadiusRow]) -> None:
    lines = ["query_id,candidate_id,relevant,l1_radius,best_similarity"]
    for r in rows:
        lines.append(
            f"{r.query_id},{r.candidate_id},{int(r.relevant)},"
            f"{r.l1_radius:.6f},{r.best_similarity:.6f}"
        )
    _write_lines(path, lines)


def write_alignment_report(path, rows: list[AlignmentRow]) -> None:
    lines = ["query_id,max_irrelevant_sim_det,max_irrelevant_sim_stoch,ce_det,ce_stoch"]
    for r in rows:
        lines.append(
            f"{r.query_id},{r.max_irrelevant_sim_det:.6f},{r.max_irrelevant_sim_stoch:.6f},"
            f"{r.ce_det:.6f},{r.ce_stoch:.6f}"
        )
    _write_lines(path, lines)
