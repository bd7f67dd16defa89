"""Pretraining loop: minimize the reordering loss over shuffled proteins.

Each epoch regenerates every example from a per-example seed derived as
(global_seed, epoch, protein_index), so two runs with the same config and
seed produce bit-identical parameter trajectories. A 5% slice of the
admissible proteins is held out; its examples use the reserved epoch
namespace 0 and stay fixed for the whole run. Held-out permutation
accuracy (scored with the deeper evaluation-time projection) selects the
best checkpoint.

Checkpoints are a single binary container: magic bytes, a format version,
a canonical-JSON header (section tag, config, RNG provenance, a short
training-log tail, array shapes), the little-endian float64 parameter
block, optional Adam moment blocks, and a trailing SHA-256 checksum.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder as enc
from . import nn, perm
from .augment import NoiseSpec, PretrainExample, RAcutConfig, make_pretrain_example
from .corpus import PretrainDataset
from .errors import CheckpointError, NumericError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SRCK"
CHECKPOINT_VERSION = 1
LOG_TAIL_LIMIT = 20
TRAIN_LOG_HEADER = "epoch,step,loss,perm_acc,wall_ms"


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 200
    lr: float = 5e-5
    batch_size: int = 64
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sinkhorn: perm.SinkhornConfig = perm.SinkhornConfig(m=perm.TRAIN_SINKHORN_M)
    noise: NoiseSpec = NoiseSpec()
    global_seed: int = 0
    valid_fraction: float = 0.05
    eval_m: int = perm.EVAL_SINKHORN_M
    stop_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValidationError(
                f"valid_fraction must be in [0, 1), got {self.valid_fraction}"
            )


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    perm_acc: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    acc_label: str = "perm_acc"

    def append(self, rec: StepRecord) -> None:
        if not np.isfinite(rec.loss):
            raise NumericError(f"non-finite loss at epoch {rec.epoch} step {rec.step}")
        if self.records:
            last = self.records[-1]
            if (rec.epoch, rec.step) <= (last.epoch, last.step):
                raise ValidationError(
                    f"log keys must increase: {(last.epoch, last.step)} then "
                    f"{(rec.epoch, rec.step)}"
                )
        self.records.append(rec)

    def write_csv(self, path: str | Path) -> None:
        lines = [f"epoch,step,loss,{self.acc_label},wall_ms"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.step},{r.loss:.17g},{r.perm_acc:.17g},{r.wall_ms:.3f}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def tail(self, limit: int = LOG_TAIL_LIMIT) -> list[list]:
        # Deterministic fields only (no wall time), so identical runs write
        # identical checkpoints.
        return [
            [r.epoch, r.step, r.loss, r.perm_acc] for r in self.records[-limit:]
        ]


@dataclass
class Checkpoint:
    section: str
    config: dict
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] | None
    adam_v: dict[str, np.ndarray] | None
    adam_t: int
    provenance: dict
    log_tail: list[list]


def _array_block(arrays: dict[str, np.ndarray]) -> bytes:
    return b"".join(
        np.ascontiguousarray(arrays[k], dtype="<f8").tobytes() for k in sorted(arrays)
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "section": ckpt.section,
        "config": ckpt.config,
        "provenance": ckpt.provenance,
        "log_tail": ckpt.log_tail,
        "arrays": [
            {"key": k, "shape": list(ckpt.params[k].shape)} for k in sorted(ckpt.params)
        ],
        "has_moments": ckpt.adam_m is not None,
        "adam_t": ckpt.adam_t,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<Q", len(header_bytes))
    body += header_bytes
    body += _array_block(ckpt.params)
    if ckpt.adam_m is not None:
        body += _array_block(ckpt.adam_m)
        body += _array_block(ckpt.adam_v)
    body += hashlib.sha256(bytes(body)).digest()
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + 8 + 32 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    digest = raw[-32:]
    body = raw[:-32]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    header_len = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    offset = 16 + header_len

    def read_block(specs):
        nonlocal offset
        out = {}
        for spec in specs:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
            out[spec["key"]] = arr.reshape(shape).astype(np.float64).copy()
            offset += nbytes
        return out

    specs = sorted(header["arrays"], key=lambda s: s["key"])
    params = read_block(specs)
    adam_m = adam_v = None
    if header["has_moments"]:
        adam_m = read_block(specs)
        adam_v = read_block(specs)
    if offset != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    return Checkpoint(
        section=header["section"],
        config=header["config"],
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=header["adam_t"],
        provenance=header["provenance"],
        log_tail=header["log_tail"],
    )


def checkpoint_from_encoder(
    state: enc.EncoderState,
    adam: nn.AdamState | None,
    provenance: dict,
    log_tail: list[list],
) -> Checkpoint:
    return Checkpoint(
        section="encoder",
        config=asdict(state.config),
        params={k: p.copy() for k, p in state.params.items()},
        adam_m=None if adam is None else {k: v.copy() for k, v in adam.m.items()},
        adam_v=None if adam is None else {k: v.copy() for k, v in adam.v.items()},
        adam_t=0 if adam is None else adam.t,
        provenance=dict(provenance),
        log_tail=list(log_tail),
    )


def encoder_state_from_checkpoint(
    ckpt: Checkpoint, expected_config: enc.EncoderConfig | None = None
) -> enc.EncoderState:
    if ckpt.section != "encoder":
        raise CheckpointError(
            f"checkpoint section is {ckpt.section!r}, expected 'encoder'"
        )
    config = enc.EncoderConfig(**ckpt.config)
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"checkpoint encoder config {ckpt.config} does not match the "
            f"requested config {asdict(expected_config)}; parameter shapes differ"
        )
    return enc.EncoderState(config=config, params=ckpt.params)


def pretrain_step(
    state: enc.EncoderState,
    batch: Sequence[PretrainExample],
    config: PretrainConfig,
    adam: nn.AdamState,
    epoch: int = 0,
    step: int = 0,
) -> tuple[enc.EncoderState, StepRecord]:
    """One batched forward/backward plus one Adam update (in place).

    The reported loss is the mean reordering loss over the batch plus the
    (weight_decay / 2) * ||theta||^2 penalty, so it is always >= 0.
    """
    if not batch:
        raise ValidationError("batch is empty")
    start = time.perf_counter()
    cfg = state.config
    blocks = np.stack([ex.shuffled.blocks for ex in batch])
    lengths = np.stack([ex.shuffled.true_lengths for ex in batch])
    pooled, scores, cache = enc._forward_core(state, blocks, lengths)
    if not np.isfinite(scores).all():
        raise NumericError(
            f"non-finite scores at epoch {epoch} step {step}; "
            f"logit range would exceed float64"
        )
    b = len(batch)
    d_scores = np.zeros_like(scores)
    losses = np.empty(b)
    accs = np.empty(b)
    for i, ex in enumerate(batch):
        q = perm.sinkhorn(scores[i], config.sinkhorn)
        losses[i], dq = perm.reorder_loss_grad(ex.target, q.entries, config.sinkhorn.eps)
        d_scores[i] = perm.sinkhorn_backward(scores[i], config.sinkhorn, dq) / b
        accs[i] = perm.permutation_accuracy(perm.round_to_permutation(q), ex.target)
    penalty = nn.l2_penalty(state.params, config.weight_decay)
    loss = float(losses.mean() + penalty)
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite loss at epoch {epoch} step {step}: "
            f"data={losses.mean()!r} penalty={penalty!r}"
        )
    grads = enc._backward_core(state, cache, d_scores, None)
    nn.adam_step(
        state.params,
        grads,
        adam,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    wall_ms = (time.perf_counter() - start) * 1000.0
    return state, StepRecord(epoch, step, loss, float(accs.mean()), wall_ms)


def heldout_accuracy(
    state: enc.EncoderState, examples: Sequence[PretrainExample], eval_m: int
) -> float:
    """Mean slot accuracy under the deeper evaluation-time projection."""
    sk = perm.SinkhornConfig(m=eval_m)
    total = 0.0
    for ex in examples:
        q = enc.predict_q(state, ex.shuffled, sk)
        total += perm.permutation_accuracy(perm.round_to_permutation(q), ex.target)
    return total / len(examples)


@dataclass
class PretrainResult:
    best_checkpoint: Checkpoint
    log: TrainLog
    val_history: list[tuple[int, float]]
    best_epoch: int


def pretrain_run(
    dataset: PretrainDataset,
    encoder_config: enc.EncoderConfig,
    racut_config: RAcutConfig,
    config: PretrainConfig,
    out_dir: str | Path | None = None,
) -> PretrainResult:
    """Pretrain from scratch; returns the best-by-held-out checkpoint.

    Proteins shorter than n tokens are skipped with a warning. When an
    output directory is given, a checkpoint is written per epoch, the best
    checkpoint is kept up to date, and the step log lands in
    train_log.csv.
    """
    if racut_config.n != encoder_config.n or racut_config.f_max != encoder_config.f_max:
        raise ValidationError(
            f"cut geometry {racut_config.n} x {racut_config.f_max} does not match "
            f"encoder {encoder_config.n} x {encoder_config.f_max}"
        )
    admissible = [p for p in dataset.proteins if len(p.tokens) >= racut_config.n]
    skipped = len(dataset.proteins) - len(admissible)
    if skipped:
        logger.warning(
            "skipping %d of %d proteins shorter than n=%d",
            skipped,
            len(dataset.proteins),
            racut_config.n,
        )
    if not admissible:
        raise ValidationError("no admissible proteins to pretrain on")

    gs = config.global_seed
    total = len(admissible)
    val_count = 0
    if total >= 2 and config.valid_fraction > 0:
        val_count = min(max(1, round(config.valid_fraction * total)), total - 1)
    order = np.random.default_rng((gs, 0)).permutation(total)
    val_idx = np.sort(order[:val_count])
    train_idx = np.sort(order[val_count:])
    val_examples = [
        make_pretrain_example(admissible[i], racut_config, config.noise, (gs, 0, int(i)))
        for i in val_idx
    ]

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    state = enc.init(encoder_config, seed=gs)
    adam = nn.adam_init(state.params)
    log = TrainLog()
    val_history: list[tuple[int, float]] = []
    best_acc = -np.inf
    best_ckpt: Checkpoint | None = None
    best_epoch = 0
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        epoch_order = np.random.default_rng((gs, epoch)).permutation(len(train_idx))
        shuffled_idx = train_idx[epoch_order]
        epoch_accs = []
        for start in range(0, len(shuffled_idx), config.batch_size):
            idxs = shuffled_idx[start : start + config.batch_size]
            batch = [
                make_pretrain_example(
                    admissible[i], racut_config, config.noise, (gs, epoch, int(i))
                )
                for i in idxs
            ]
            global_step += 1
            state, rec = pretrain_step(state, batch, config, adam, epoch, global_step)
            log.append(rec)
            epoch_accs.append(rec.perm_acc)

        if val_examples:
            val_acc = heldout_accuracy(state, val_examples, config.eval_m)
        else:
            val_acc = float(np.mean(epoch_accs))
        val_history.append((epoch, val_acc))

        provenance = {"global_seed": gs, "epoch": epoch, "step": global_step}
        ckpt = checkpoint_from_encoder(state, adam, provenance, log.tail())
        if out_path is not None:
            save_checkpoint(ckpt, out_path / f"epoch_{epoch:04d}.ckpt")
        if val_acc > best_acc:
            best_acc = val_acc
            best_ckpt = ckpt
            best_epoch = epoch
            if out_path is not None:
                save_checkpoint(ckpt, out_path / "best.ckpt")
        if config.stop_accuracy is not None and val_acc >= config.stop_accuracy:
            logger.info("early stop at epoch %d: held-out accuracy %.4f", epoch, val_acc)
            break

    if out_path is not None:
        log.write_csv(out_path / "train_log.csv")
    assert best_ckpt is not None
    return PretrainResult(
        best_checkpoint=best_ckpt,
        log=log,
        val_history=val_history,
        best_epoch=best_epoch,
    )
