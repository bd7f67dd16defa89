"""Shuffled-subsequence encoder with a slot-to-position score head.

Each block is embedded as token + within-block position + slot embeddings,
the flattened blocks run through a pre-norm transformer stack whose
attention masks pad keys, tokens are mean-pooled per block (pads
excluded), and a linear head scores every block against every original
position. Scores are exponentiated clamped logits, so they are strictly
positive — row i scores the block sitting in shuffled slot i against each
original position j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, perm
from .augment import RAcutConfig, SubsequenceSet
from .corpus import RESIDUE_VOCAB, ProteinRecord
from .errors import NumericError, ValidationError

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 256
    layers: int = 8
    heads: int = 8
    ffn_dim: int = 1024
    n: int = 24
    f_max: int = 50
    vocab_size: int = RESIDUE_VOCAB.size

    def __post_init__(self) -> None:
        for name in ("embed_dim", "layers", "heads", "ffn_dim", "n", "f_max", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}"
            )


@dataclass
class EncoderState:
    config: EncoderConfig
    params: dict[str, np.ndarray]


@dataclass
class SubsequenceEmbeddings:
    """Per-block pooled vectors, shape (n, embed_dim)."""

    vectors: np.ndarray


def init(config: EncoderConfig, seed: int = 0) -> EncoderState:
    """Build a fresh encoder, deterministically from the seed."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    params: dict[str, np.ndarray] = {}
    params["tok_embed"] = nn.uniform_init(rng, (config.vocab_size, d), d)
    params["pos_embed"] = nn.uniform_init(rng, (config.f_max, d), d)
    params["slot_embed"] = nn.uniform_init(rng, (config.n, d), d)
    nn.init_stack_params(rng, params, "", config.layers, d, config.ffn_dim)
    params["head.w"] = nn.uniform_init(rng, (d, config.n), d)
    params["head.b"] = nn.uniform_init(rng, (config.n,), d)
    return EncoderState(config=config, params=params)


def parameter_count(state: EncoderState) -> int:
    return int(sum(p.size for p in state.params.values()))


def _forward_core(state: EncoderState, blocks: np.ndarray, lengths: np.ndarray):
    """Batched forward. blocks (B, n, f_max) int, lengths (B, n) int.

    Blocks of length 0 are legal here (inference-time equal splits can
    leave trailing empties); they pool to the zero vector.
    """
    cfg = state.config
    p = state.params
    b, n, f = blocks.shape
    tokens = blocks.reshape(b, n * f)
    pos_idx = np.tile(np.arange(f), n)
    slot_idx = np.repeat(np.arange(n), f)
    x = p["tok_embed"][tokens] + p["pos_embed"][pos_idx] + p["slot_embed"][slot_idx]
    key_mask = (np.arange(f)[None, None, :] < lengths[:, :, None]).reshape(b, n * f)
    h, stack_cache = nn.stack_forward(x, p, "", cfg.layers, key_mask, cfg.heads)
    # per-block mean over real tokens
    hr = h.reshape(b, n, f, cfg.embed_dim)
    mask3 = key_mask.reshape(b, n, f)
    denom = np.maximum(lengths, 1).astype(np.float64)
    pooled = (hr * mask3[..., None]).sum(axis=2) / denom[:, :, None]
    logits = pooled @ p["head.w"] + p["head.b"]
    clamped = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    scores = np.exp(clamped)
    cache = (tokens, pos_idx, slot_idx, key_mask, stack_cache, mask3, denom, pooled, logits, scores)
    return pooled, scores, cache


def _backward_core(
    state: EncoderState,
    cache,
    d_scores: np.ndarray | None,
    d_pooled: np.ndarray | None,
) -> dict[str, np.ndarray]:
    """Exact parameter gradients for the batched forward."""
    cfg = state.config
    p = state.params
    tokens, pos_idx, slot_idx, key_mask, stack_cache, mask3, denom, pooled, logits, scores = cache
    b, n, f = mask3.shape
    d = cfg.embed_dim
    grads = nn.zero_grads_like(p)

    dpooled_total = np.zeros_like(pooled)
    if d_pooled is not None:
        dpooled_total += d_pooled
    if d_scores is not None:
        inside = (logits > -LOGIT_CLAMP) & (logits < LOGIT_CLAMP)
        dlogits = d_scores * scores * inside
        grads["head.w"] += pooled.reshape(-1, d).T @ dlogits.reshape(-1, n)
        grads["head.b"] += dlogits.reshape(-1, n).sum(axis=0)
        dpooled_total += dlogits @ p["head.w"].T

    dh = np.zeros((b, n, f, d))
    dh += (dpooled_total / denom[:, :, None])[:, :, None, :] * mask3[..., None]
    dx, stack_grads = nn.stack_backward(stack_cache, dh.reshape(b, n * f, d))
    nn.accumulate(grads, stack_grads)

    dx2 = dx.reshape(-1, d)
    np.add.at(grads["tok_embed"], tokens.ravel(), dx2)
    dxr = dx.reshape(b, n, f, d)
    grads["pos_embed"] += dxr.sum(axis=(0, 1))
    grads["slot_embed"] += dxr.sum(axis=(0, 2))
    return grads


def _validate_input(state: EncoderState, sset: SubsequenceSet) -> None:
    cfg = state.config
    if sset.n != cfg.n or sset.f_max != cfg.f_max:
        raise ValidationError(
            f"input blocks are {sset.n} x {sset.f_max}, encoder expects "
            f"{cfg.n} x {cfg.f_max}"
        )
    if (sset.blocks >= cfg.vocab_size).any() or (sset.blocks < 0).any():
        raise ValidationError("block token id out of vocabulary range")


def forward(
    state: EncoderState, sset: SubsequenceSet
) -> tuple[SubsequenceEmbeddings, perm.ScoreMatrix]:
    """Encode one SubsequenceSet into block embeddings and a score matrix."""
    _validate_input(state, sset)
    pooled, scores, _ = _forward_core(
        state, sset.blocks[None, :, :], sset.true_lengths[None, :]
    )
    if not (np.isfinite(pooled).all() and np.isfinite(scores).all()):
        raise NumericError("encoder forward produced non-finite activations")
    return SubsequenceEmbeddings(pooled[0]), perm.ScoreMatrix(scores[0])


def backward(
    state: EncoderState,
    sset: SubsequenceSet,
    d_scores: np.ndarray | None,
    d_embeddings: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on the forward outputs.

    ``d_scores`` is the loss gradient w.r.t. the score matrix entries and
    ``d_embeddings`` (optional) w.r.t. the pooled block embeddings. The
    forward pass is recomputed internally, so this is a pure function of
    (state, input, upstream).
    """
    _validate_input(state, sset)
    _, _, cache = _forward_core(
        state, sset.blocks[None, :, :], sset.true_lengths[None, :]
    )
    ds = None if d_scores is None else np.asarray(d_scores, dtype=np.float64)[None]
    de = None if d_embeddings is None else np.asarray(d_embeddings, dtype=np.float64)[None]
    return _backward_core(state, cache, ds, de)


def predict_q(
    state: EncoderState,
    sset: SubsequenceSet,
    sk: perm.SinkhornConfig = perm.SinkhornConfig(m=perm.EVAL_SINKHORN_M),
) -> perm.DoublyStochasticMatrix:
    """Forward plus Sinkhorn projection of the scores."""
    _, scores = forward(state, sset)
    return perm.sinkhorn(scores, sk)


def protein_embedding(
    state: EncoderState, protein: ProteinRecord, config: RAcutConfig
) -> np.ndarray:
    """Whole-protein vector for downstream use.

    Deterministic segmentation: the token list (truncated to n * f_max) is
    split into n consecutive blocks of f_max; trailing blocks may be empty
    and are excluded from the final mean over block embeddings. No noise,
    natural slot order.
    """
    cfg = state.config
    if config.n != cfg.n or config.f_max != cfg.f_max:
        raise ValidationError(
            f"segmentation {config.n} x {config.f_max} does not match encoder "
            f"{cfg.n} x {cfg.f_max}"
        )
    n, f = cfg.n, cfg.f_max
    tokens = protein.tokens[: n * f]
    if len(tokens) < n:
        raise ValidationError(
            f"protein has {len(tokens)} tokens but at least {n} are required"
        )
    blocks = np.full((n, f), RESIDUE_VOCAB.pad_id, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i in range(n):
        seg = tokens[i * f : (i + 1) * f]
        lengths[i] = len(seg)
        if seg:
            blocks[i, : len(seg)] = seg
    pooled, _, _ = _forward_core(state, blocks[None], lengths[None])
    nonempty = lengths > 0
    vec = pooled[0][nonempty].mean(axis=0)
    if not np.isfinite(vec).all():
        raise NumericError("protein embedding contains non-finite values")
    return vec
