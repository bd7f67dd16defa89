"""Scenario splitting, ranking metrics, and the metrics report.

The split is drawn at the pair level with a seeded shuffle; each test pair
is then classified by whether its compound and protein strings appear
anywhere in the training pairs, giving four partitions: seen_both,
unseen_comp, unseen_prot, unseen_both. Identity is exact string equality
on the verbatim SMILES and the uppercased sequence.

AUROC is the tie-averaged rank statistic (ties get half credit); AUPRC is
average precision — the mean over positives of precision at each
positive's rank, with exact ties ordered by input index so the value is
deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import InteractionRecord
from .errors import MetricError, ValidationError

SEEN_BOTH = "seen_both"
UNSEEN_COMP = "unseen_comp"
UNSEEN_PROT = "unseen_prot"
UNSEEN_BOTH = "unseen_both"
PARTITIONS = (SEEN_BOTH, UNSEEN_COMP, UNSEEN_PROT, UNSEEN_BOTH)


@dataclass
class ScenarioSplit:
    train: list[InteractionRecord]
    valid: list[InteractionRecord]
    test_partitions: dict[str, list[InteractionRecord]] = field(default_factory=dict)

    @property
    def test(self) -> list[InteractionRecord]:
        out: list[InteractionRecord] = []
        for name in PARTITIONS:
            out.extend(self.test_partitions.get(name, []))
        return out


def split_scenarios(
    records: Sequence[InteractionRecord],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> ScenarioSplit:
    """Seeded pair-level split, then four-way classification of the test set.

    Every record lands in exactly one of train, valid, or a test
    partition; the four test partitions are disjoint by construction and
    cover the test set.
    """
    if not records:
        raise ValidationError("cannot split an empty record list")
    if any(r < 0 for r in ratios):
        raise ValidationError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {ratios}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    train = [records[i] for i in order[:n_train]]
    valid = [records[i] for i in order[n_train : n_train + n_valid]]
    test = [records[i] for i in order[n_train + n_valid :]]

    train_compounds = {r.compound.smiles for r in train}
    train_proteins = {r.protein.raw for r in train}
    partitions: dict[str, list[InteractionRecord]] = {name: [] for name in PARTITIONS}
    for rec in test:
        comp_seen = rec.compound.smiles in train_compounds
        prot_seen = rec.protein.raw in train_proteins
        if comp_seen and prot_seen:
            partitions[SEEN_BOTH].append(rec)
        elif prot_seen:
            partitions[UNSEEN_COMP].append(rec)
        elif comp_seen:
            partitions[UNSEEN_PROT].append(rec)
        else:
            partitions[UNSEEN_BOTH].append(rec)
    return ScenarioSplit(train=train, valid=valid, test_partitions=partitions)


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> None:
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError(
            f"scores shape {scores.shape} does not match labels shape {labels.shape}"
        )
    if scores.size == 0:
        raise MetricError("no instances")
    if not np.isfinite(scores).all():
        raise ValidationError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative (ties: 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    _check_binary(s, y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(
            f"AUROC undefined: {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j < s.size and sorted_s[j] == sorted_s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)  # average rank of the tie group
        i = j
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _desc_order(scores: np.ndarray) -> np.ndarray:
    # descending score, ascending input index on exact ties
    return np.lexsort((np.arange(scores.size), -scores))


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: mean over positives of precision at their rank."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    _check_binary(s, y)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise MetricError("AUPRC undefined: no positives")
    order = _desc_order(s)
    hits = (y[order] == 1).astype(np.float64)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, s.size + 1)
    return float(precision[hits == 1].mean())


def roc_curve(scores: Sequence[float], labels: Sequence[int]):
    """(fpr, tpr) points at each distinct threshold, from (0,0) to (1,1).

    Trapezoidal integration of this curve reproduces the tie-averaged
    AUROC exactly: tied groups become single diagonal segments.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    _check_binary(s, y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC curve undefined for single-class labels")
    order = np.argsort(-s, kind="stable")
    sorted_s = s[order]
    sorted_y = y[order]
    # last index of each distinct-score group
    distinct = np.flatnonzero(np.r_[sorted_s[1:] != sorted_s[:-1], True])
    tp = np.cumsum(sorted_y == 1)[distinct]
    fp = np.cumsum(sorted_y == 0)[distinct]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return fpr, tpr


def pr_curve(scores: Sequence[float], labels: Sequence[int]):
    """(recall, precision) at every rank in deterministic order.

    Step integration, sum of precision * delta-recall, reproduces average
    precision exactly.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    _check_binary(s, y)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise MetricError("PR curve undefined without positives")
    order = _desc_order(s)
    hits = (y[order] == 1).astype(np.float64)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, s.size + 1)
    recall = tp / n_pos
    return recall, precision


SeedResults = Mapping[str, tuple[Sequence[float], Sequence[int]]]


def emit_report(
    dataset: str,
    per_seed: Sequence[SeedResults],
    out_dir: str | Path,
) -> dict:
    """Aggregate per-seed (scores, labels) into the mean/std report.

    Writes report.json plus one ROC and one PR curve CSV per partition per
    seed. Partitions that are undefined (empty or single-class) for any
    seed are skipped and listed under skipped_partitions. std is the
    population standard deviation, so a single seed reports 0.
    """
    if not per_seed:
        raise ValidationError("need results from at least one seed")
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    partitions: dict[str, dict] = {}
    skipped: dict[str, str] = {}
    names = [name for name in PARTITIONS if any(name in seed for seed in per_seed)]
    for name in names:
        aurocs: list[float] = []
        auprcs: list[float] = []
        n_pairs = 0
        try:
            for k, seed_results in enumerate(per_seed):
                if name not in seed_results:
                    raise MetricError(f"seed {k} has no results for {name}")
                scores, labels = seed_results[name]
                if k == 0:
                    n_pairs = len(labels)
                aurocs.append(auroc(scores, labels))
                auprcs.append(auprc(scores, labels))
                fpr, tpr = roc_curve(scores, labels)
                _write_curve(out_path / f"{name}_roc_seed{k}.csv", "fpr,tpr", fpr, tpr)
                recall, precision = pr_curve(scores, labels)
                _write_curve(
                    out_path / f"{name}_pr_seed{k}.csv", "recall,precision", recall, precision
                )
        except MetricError as exc:
            skipped[name] = str(exc)
            continue
        partitions[name] = {
            "auroc_mean": float(np.mean(aurocs)),
            "auroc_std": float(np.std(aurocs)),
            "auprc_mean": float(np.mean(auprcs)),
            "auprc_std": float(np.std(auprcs)),
            "n_pairs": n_pairs,
        }
    report = {
        "dataset": dataset,
        "seed_count": len(per_seed),
        "partitions": partitions,
    }
    if skipped:
        report["skipped_partitions"] = skipped
    (out_path / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return report


def _write_curve(path: Path, header: str, xs, ys) -> None:
    lines = [header]
    for x, yv in zip(xs, ys):
        lines.append(f"{x:.17g},{yv:.17g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
