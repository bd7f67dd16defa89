"""Compound-protein interaction head on top of a frozen protein encoder.

Compounds run through their own small attention stack over SMILES
characters and are mean-pooled; the protein side is the frozen encoder's
whole-protein embedding, computed once per distinct sequence and cached.
The two vectors are concatenated, fused by a two-layer MLP, and decoded to
an interaction probability by a single sigmoid unit. The training loss is
the summed (not averaged) binary cross-entropy plus an L2 penalty
(lambda / 2) * ||theta||^2 over the trainable parameters; the encoder
parameters are frozen and receive no gradient.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .augment import RAcutConfig
from .corpus import (
    SMILES_PAD_ID,
    SMILES_VOCAB_SIZE,
    CompoundRecord,
    InteractionRecord,
)
from .encoder import EncoderConfig, EncoderState, protein_embedding
from .errors import CheckpointError, NumericError, ValidationError
from .evaluation import auroc
from .pretrain import Checkpoint, StepRecord, TrainLog

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-9


@dataclass(frozen=True)
class CpiConfig:
    embed_dim: int = 256
    comp_layers: int = 2
    comp_heads: int = 8
    comp_ffn_dim: int = 1024
    fusion_dim: int = 512
    max_atoms: int = 290
    smiles_vocab_size: int = SMILES_VOCAB_SIZE

    def __post_init__(self) -> None:
        for name in (
            "embed_dim",
            "comp_layers",
            "comp_heads",
            "comp_ffn_dim",
            "fusion_dim",
            "max_atoms",
            "smiles_vocab_size",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.embed_dim % self.comp_heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} must be divisible by comp_heads "
                f"{self.comp_heads}"
            )


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 200
    lr: float = 5e-5
    batch_size: int = 64
    lam: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ValidationError(f"lam must be >= 0, got {self.lam}")


@dataclass
class CpiModel:
    config: CpiConfig
    params: dict[str, np.ndarray]
    encoder_state: EncoderState  # frozen; never updated here

    @property
    def segmentation(self) -> RAcutConfig:
        cfg = self.encoder_state.config
        return RAcutConfig(n=cfg.n, l_max=cfg.n * cfg.f_max)


def init_cpi(config: CpiConfig, encoder_state: EncoderState, seed: int = 0) -> CpiModel:
    if config.embed_dim != encoder_state.config.embed_dim:
        raise ValidationError(
            f"cpi embed_dim {config.embed_dim} does not match encoder embed_dim "
            f"{encoder_state.config.embed_dim}"
        )
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    params: dict[str, np.ndarray] = {}
    params["comp.tok_embed"] = nn.uniform_init(rng, (config.smiles_vocab_size, d), d)
    params["comp.pos_embed"] = nn.uniform_init(rng, (config.max_atoms, d), d)
    nn.init_stack_params(rng, params, "comp.", config.comp_layers, d, config.comp_ffn_dim)
    params["fusion.w1"] = nn.uniform_init(rng, (2 * d, config.fusion_dim), 2 * d)
    params["fusion.b1"] = nn.uniform_init(rng, (config.fusion_dim,), 2 * d)
    params["fusion.w2"] = nn.uniform_init(
        rng, (config.fusion_dim, config.fusion_dim), config.fusion_dim
    )
    params["fusion.b2"] = nn.uniform_init(rng, (config.fusion_dim,), config.fusion_dim)
    params["dec.w"] = nn.uniform_init(rng, (config.fusion_dim,), config.fusion_dim)
    params["dec.b"] = nn.uniform_init(rng, (), config.fusion_dim)
    return CpiModel(config=config, params=params, encoder_state=encoder_state)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def _compound_batch(
    model: CpiModel, token_rows: Sequence[Sequence[int]]
) -> tuple[np.ndarray, np.ndarray]:
    cfg = model.config
    if not token_rows:
        raise ValidationError("no compounds in batch")
    longest = max(len(r) for r in token_rows)
    if longest > cfg.max_atoms:
        raise ValidationError(
            f"compound has {longest} tokens, model limit is {cfg.max_atoms}"
        )
    if min(len(r) for r in token_rows) == 0:
        raise ValidationError("compound token list is empty")
    tokens = np.full((len(token_rows), longest), SMILES_PAD_ID, dtype=np.int64)
    for i, row in enumerate(token_rows):
        tokens[i, : len(row)] = row
    mask = tokens != SMILES_PAD_ID
    return tokens, mask


def _compound_forward(model: CpiModel, token_rows: Sequence[Sequence[int]]):
    cfg = model.config
    p = model.params
    tokens, mask = _compound_batch(model, token_rows)
    b, t = tokens.shape
    x = p["comp.tok_embed"][tokens] + p["comp.pos_embed"][:t]
    h, stack_cache = nn.stack_forward(x, p, "comp.", cfg.comp_layers, mask, cfg.comp_heads)
    lengths = mask.sum(axis=1).astype(np.float64)
    pooled = (h * mask[..., None]).sum(axis=1) / lengths[:, None]
    cache = (tokens, mask, lengths, stack_cache, t)
    return pooled, cache


def _compound_backward(model: CpiModel, cache, d_pooled: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    tokens, mask, lengths, stack_cache, t = cache
    d = model.config.embed_dim
    dh = (d_pooled / lengths[:, None])[:, None, :] * mask[..., None]
    dx, grads = nn.stack_backward(stack_cache, dh)
    grads["comp.tok_embed"] = np.zeros_like(p["comp.tok_embed"])
    np.add.at(grads["comp.tok_embed"], tokens.ravel(), dx.reshape(-1, d))
    grads["comp.pos_embed"] = np.zeros_like(p["comp.pos_embed"])
    grads["comp.pos_embed"][:t] = dx.sum(axis=0)
    return grads


def encode_compound(model: CpiModel, compound: CompoundRecord) -> np.ndarray:
    """Pooled compound vector, shape (embed_dim,)."""
    pooled, _ = _compound_forward(model, [compound.tokens])
    if not np.isfinite(pooled).all():
        raise NumericError("compound encoder produced non-finite values")
    return pooled[0]


def _fuse_batch(model: CpiModel, z_comp: np.ndarray, z_prot: np.ndarray):
    p = model.params
    cat = np.concatenate([z_comp, z_prot], axis=1)
    pre = cat @ p["fusion.w1"] + p["fusion.b1"]
    hid = np.maximum(pre, 0.0)
    joint = hid @ p["fusion.w2"] + p["fusion.b2"]
    return joint, (cat, pre, hid)


def fuse(model: CpiModel, z_comp: np.ndarray, z_prot: np.ndarray) -> np.ndarray:
    """Concatenate and mix through the two-layer MLP; shape (fusion_dim,)."""
    d = model.config.embed_dim
    z_comp = np.asarray(z_comp, dtype=np.float64)
    z_prot = np.asarray(z_prot, dtype=np.float64)
    if z_comp.shape != (d,) or z_prot.shape != (d,):
        raise ValidationError(
            f"fuse expects two ({d},) vectors, got {z_comp.shape} and {z_prot.shape}"
        )
    joint, _ = _fuse_batch(model, z_comp[None], z_prot[None])
    return joint[0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, 1e-15, 1.0 - 1e-15)


def predict(model: CpiModel, z_joint: np.ndarray) -> float:
    """Interaction probability, strictly inside (0, 1)."""
    z_joint = np.asarray(z_joint, dtype=np.float64)
    f = model.config.fusion_dim
    if z_joint.shape != (f,):
        raise ValidationError(f"predict expects a ({f},) vector, got {z_joint.shape}")
    logit = float(z_joint @ model.params["dec.w"] + model.params["dec.b"])
    return float(_sigmoid(np.array([logit]))[0])


def cpi_loss(
    predictions: Sequence[float],
    labels: Sequence[int],
    params: Iterable[np.ndarray] | None = None,
    lam: float = 0.0,
) -> float:
    """Summed binary cross-entropy plus (lam / 2) * ||theta||^2.

    Predictions are clamped to [1e-9, 1 - 1e-9] before the logs.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValidationError(
            f"{p.shape[0] if p.ndim else 0} predictions vs {y.shape[0] if y.ndim else 0} labels"
        )
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("labels must be 0 or 1")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum())
    reg = 0.0
    if params is not None and lam > 0.0:
        reg = 0.5 * lam * float(sum((w * w).sum() for w in params))
    return bce + reg


# ---------------------------------------------------------------------------
# batched prediction and training
# ---------------------------------------------------------------------------


def build_protein_cache(
    model: CpiModel, records: Sequence[InteractionRecord]
) -> dict[str, np.ndarray]:
    """One frozen-encoder embedding per distinct sequence."""
    seg = model.segmentation
    cache: dict[str, np.ndarray] = {}
    for rec in records:
        key = rec.protein.raw
        if key not in cache:
            cache[key] = protein_embedding(model.encoder_state, rec.protein, seg)
    return cache


def _pair_logits(
    model: CpiModel,
    records: Sequence[InteractionRecord],
    cache: dict[str, np.ndarray],
):
    z_comp, comp_cache = _compound_forward(model, [r.compound.tokens for r in records])
    z_prot = np.stack([cache[r.protein.raw] for r in records])
    joint, fuse_cache = _fuse_batch(model, z_comp, z_prot)
    logits = joint @ model.params["dec.w"] + model.params["dec.b"]
    return logits, joint, comp_cache, fuse_cache


def predict_pairs(
    model: CpiModel,
    records: Sequence[InteractionRecord],
    cache: dict[str, np.ndarray] | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Interaction probabilities for a list of pairs."""
    if not records:
        return np.zeros(0)
    if cache is None:
        cache = build_protein_cache(model, records)
    out = np.empty(len(records))
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        logits, _, _, _ = _pair_logits(model, chunk, cache)
        out[start : start + len(chunk)] = _sigmoid(logits)
    return out


@dataclass
class FinetuneResult:
    model: CpiModel
    log: TrainLog
    selected_epoch: int
    val_history: list[tuple[int, float]]


def _batch_grads(
    model: CpiModel,
    chunk: Sequence[InteractionRecord],
    cache: dict[str, np.ndarray],
    lam: float,
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Loss, probabilities, and head gradients for one batch.

    Protein embeddings come from the cache and are treated as constants;
    the summed BCE is computed in stable logit form and the gradients
    include the lam * theta regularizer term.
    """
    y = np.array([r.label for r in chunk], dtype=np.float64)
    logits, joint, comp_cache, fuse_cache = _pair_logits(model, chunk, cache)
    probs = _sigmoid(logits)
    data_loss = float((np.logaddexp(0.0, logits) - y * logits).sum())
    loss = data_loss + nn.l2_penalty(model.params, lam)
    p = model.params
    dlogit = probs - y
    grads = nn.zero_grads_like(p)
    grads["dec.w"] += joint.T @ dlogit
    grads["dec.b"] += dlogit.sum()
    djoint = dlogit[:, None] * p["dec.w"][None, :]
    cat, pre, hid = fuse_cache
    grads["fusion.w2"] += hid.T @ djoint
    grads["fusion.b2"] += djoint.sum(axis=0)
    dhid = djoint @ p["fusion.w2"].T
    dpre = dhid * (pre > 0)
    grads["fusion.w1"] += cat.T @ dpre
    grads["fusion.b1"] += dpre.sum(axis=0)
    dcat = dpre @ p["fusion.w1"].T
    dz_comp = dcat[:, : model.config.embed_dim]  # protein side is constant
    nn.accumulate(grads, _compound_backward(model, comp_cache, dz_comp))
    if lam > 0:
        for k in grads:
            grads[k] += lam * p[k]
    return loss, probs, grads


def finetune_run(
    train: Sequence[InteractionRecord],
    valid: Sequence[InteractionRecord],
    frozen: EncoderState,
    config: CpiConfig,
    ft: FinetuneConfig = FinetuneConfig(),
    out_dir: str | Path | None = None,
) -> FinetuneResult:
    """Train the CPI head on frozen protein embeddings.

    The returned model carries the parameters of the epoch with the best
    validation AUROC. The encoder is never updated: no gradient path
    reaches it and the protein embeddings are computed once up front.
    """
    if not train:
        raise ValidationError("training set is empty")
    model = init_cpi(config, frozen, seed=ft.seed)
    cache = build_protein_cache(model, list(train) + list(valid))
    adam = nn.adam_init(model.params)
    log = TrainLog(acc_label="acc")
    val_history: list[tuple[int, float]] = []
    best_auc = -np.inf
    best_params = {k: p.copy() for k, p in model.params.items()}
    best_epoch = 0
    global_step = 0
    train = list(train)

    for epoch in range(1, ft.epochs + 1):
        order = np.random.default_rng((ft.seed, epoch)).permutation(len(train))
        for start in range(0, len(order), ft.batch_size):
            t0 = time.perf_counter()
            chunk = [train[i] for i in order[start : start + ft.batch_size]]
            y = np.array([r.label for r in chunk], dtype=np.float64)
            loss, probs, grads = _batch_grads(model, chunk, cache, ft.lam)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite fine-tune loss at epoch {epoch} step {global_step}"
                )
            p = model.params
            nn.adam_step(
                p, grads, adam, lr=ft.lr, beta1=ft.beta1, beta2=ft.beta2, eps=ft.adam_eps
            )
            global_step += 1
            acc = float(((probs > 0.5) == (y > 0.5)).mean())
            log.append(
                StepRecord(
                    epoch, global_step, loss, acc, (time.perf_counter() - t0) * 1000.0
                )
            )

        if valid:
            val_scores = predict_pairs(model, valid, cache)
            val_labels = np.array([r.label for r in valid])
            val_auc = auroc(val_scores, val_labels)
            val_history.append((epoch, val_auc))
            if val_auc > best_auc:
                best_auc = val_auc
                best_params = {k: q.copy() for k, q in model.params.items()}
                best_epoch = epoch
        else:
            best_params = {k: q.copy() for k, q in model.params.items()}
            best_epoch = epoch

    if not valid:
        logger.warning("no validation pairs: keeping the final epoch")
    model.params = best_params
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        log.write_csv(out_path / "finetune_log.csv")
    return FinetuneResult(
        model=model, log=log, selected_epoch=best_epoch, val_history=val_history
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def checkpoint_from_cpi(model: CpiModel, provenance: dict) -> Checkpoint:
    """Self-contained container: head parameters plus the frozen encoder."""
    params = {f"cpi.{k}": p.copy() for k, p in model.params.items()}
    params.update({f"enc.{k}": p.copy() for k, p in model.encoder_state.params.items()})
    return Checkpoint(
        section="cpi",
        config={
            "cpi": asdict(model.config),
            "encoder": asdict(model.encoder_state.config),
        },
        params=params,
        adam_m=None,
        adam_v=None,
        adam_t=0,
        provenance=dict(provenance),
        log_tail=[],
    )


def cpi_model_from_checkpoint(ckpt: Checkpoint) -> CpiModel:
    if ckpt.section != "cpi":
        raise CheckpointError(f"checkpoint section is {ckpt.section!r}, expected 'cpi'")
    config = CpiConfig(**ckpt.config["cpi"])
    enc_config = EncoderConfig(**ckpt.config["encoder"])
    enc_params = {
        k[len("enc.") :]: v for k, v in ckpt.params.items() if k.startswith("enc.")
    }
    cpi_params = {
        k[len("cpi.") :]: v for k, v in ckpt.params.items() if k.startswith("cpi.")
    }
    encoder_state = EncoderState(config=enc_config, params=enc_params)
    return CpiModel(config=config, params=cpi_params, encoder_state=encoder_state)


def write_predictions(
    path: str | Path,
    pair_ids: Sequence[str],
    scores: Sequence[float],
    labels: Sequence[int],
) -> None:
    if not (len(pair_ids) == len(scores) == len(labels)):
        raise ValidationError("pair_ids, scores, and labels must align")
    lines = ["pair_id,score,label"]
    for pid, s, y in zip(pair_ids, scores, labels):
        lines.append(f"{pid},{s:.17g},{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
