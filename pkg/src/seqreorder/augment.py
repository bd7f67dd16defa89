"""Training-time augmentation: random cuts, block shuffles, token noise.

A protein is cut into ``n`` contiguous blocks of random lengths (each
between 1 and ``f_max`` residues, padded up to ``f_max``), the blocks are
shuffled by a uniform random permutation, and token-level noise may then
mask residues. The example records which permutation was applied, which is
the recovery target, plus the seed that produced it. Given the same
(protein, config, noise spec, seed) the pipeline is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import RESIDUE_VOCAB, ProteinRecord, ResidueVocabulary
from .errors import AugmentationError, ValidationError

NOISE_KINDS = ("identity", "mask")


@dataclass(frozen=True)
class RAcutConfig:
    """Block count and length budget for random cuts.

    ``f_max`` is always ceil(l_max / n); passing it explicitly is allowed
    only if it equals that value.
    """

    n: int
    l_max: int
    f_max: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")
        if self.l_max < 1:
            raise ValidationError(f"l_max must be >= 1, got {self.l_max}")
        derived = math.ceil(self.l_max / self.n)
        if self.f_max == 0:
            object.__setattr__(self, "f_max", derived)
        elif self.f_max != derived:
            raise ValidationError(
                f"f_max must equal ceil(l_max/n) = {derived}, got {self.f_max}"
            )


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "mask"
    mask_prob: float = 0.15

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValidationError(f"mask_prob must be in [0, 1], got {self.mask_prob}")


@dataclass
class SubsequenceSet:
    """n blocks of token ids, each padded to f_max, plus true lengths."""

    blocks: np.ndarray  # (n, f_max) int64
    true_lengths: np.ndarray  # (n,) int64

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def f_max(self) -> int:
        return self.blocks.shape[1]

    def copy(self) -> "SubsequenceSet":
        return SubsequenceSet(self.blocks.copy(), self.true_lengths.copy())


@dataclass
class ShuffleMatrix:
    """A permutation: slot i of the shuffled set holds original block perm[i].

    The equivalent binary matrix has P[i][perm[i]] = 1.
    """

    perm: np.ndarray  # (n,) int64

    def __post_init__(self) -> None:
        self.perm = np.asarray(self.perm, dtype=np.int64)
        if self.perm.ndim != 1 or not np.array_equal(
            np.sort(self.perm), np.arange(self.perm.size)
        ):
            raise ValidationError("perm must be a permutation of 0..n-1")

    @property
    def n(self) -> int:
        return int(self.perm.size)

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=np.int64)
        m[np.arange(self.n), self.perm] = 1
        return m

    def transposed(self) -> "ShuffleMatrix":
        """The inverse permutation (transpose of the binary matrix)."""
        return ShuffleMatrix(np.argsort(self.perm))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "ShuffleMatrix":
        m = np.asarray(matrix)
        if (
            m.ndim != 2
            or m.shape[0] != m.shape[1]
            or not np.isin(m, (0, 1)).all()
            or (m.sum(axis=0) != 1).any()
            or (m.sum(axis=1) != 1).any()
        ):
            raise ValidationError("matrix must be a binary permutation matrix")
        return cls(np.argmax(m, axis=1))


@dataclass
class PretrainExample:
    """A shuffled (and possibly noised) SubsequenceSet with its target."""

    shuffled: SubsequenceSet
    target: ShuffleMatrix
    seed: tuple[int, ...]


def racut(
    protein: ProteinRecord,
    config: RAcutConfig,
    rng: np.random.Generator,
    pad_id: int = RESIDUE_VOCAB.pad_id,
) -> SubsequenceSet:
    """Cut a protein into n contiguous blocks of random lengths.

    Lengths are drawn left to right, each uniform over the feasible range
    that still lets every later block receive between 1 and f_max tokens;
    the last block takes the remainder. Tokens beyond n*f_max are dropped.
    Proteins shorter than n tokens cannot be cut and raise
    AugmentationError.
    """
    n, f_max = config.n, config.f_max
    total = len(protein.tokens)
    if total < n:
        raise AugmentationError(
            f"protein has {total} tokens but n={n} blocks were requested"
        )
    rem = min(total, n * f_max)
    lengths = np.empty(n, dtype=np.int64)
    for i in range(1, n):
        blocks_left = n - i
        lo = max(1, rem - blocks_left * f_max)
        hi = min(f_max, rem - blocks_left)
        lengths[i - 1] = int(rng.integers(lo, hi + 1))
        rem -= lengths[i - 1]
    lengths[n - 1] = rem

    blocks = np.full((n, f_max), pad_id, dtype=np.int64)
    offset = 0
    for i in range(n):
        li = int(lengths[i])
        blocks[i, :li] = protein.tokens[offset : offset + li]
        offset += li
    return SubsequenceSet(blocks=blocks, true_lengths=lengths)


def sample_shuffle(n: int, rng: np.random.Generator) -> ShuffleMatrix:
    """Draw a uniform random permutation of n slots."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    return ShuffleMatrix(rng.permutation(n))


def shuffle_apply(sset: SubsequenceSet, p: ShuffleMatrix) -> SubsequenceSet:
    """Reorder blocks: output slot i holds input block p.perm[i]."""
    if p.n != sset.n:
        raise ValidationError(
            f"permutation is over {p.n} slots but the set has {sset.n} blocks"
        )
    return SubsequenceSet(
        blocks=sset.blocks[p.perm].copy(),
        true_lengths=sset.true_lengths[p.perm].copy(),
    )


def apply_noise(
    sset: SubsequenceSet,
    spec: NoiseSpec,
    rng: np.random.Generator,
    pad_id: int = RESIDUE_VOCAB.pad_id,
    mask_id: int = RESIDUE_VOCAB.mask_id,
) -> SubsequenceSet:
    """Apply token noise. Pads are never touched; lengths never change."""
    out = sset.copy()
    if spec.kind == "identity":
        return out
    draws = rng.random(out.blocks.shape)
    nonpad = np.arange(out.f_max)[None, :] < out.true_lengths[:, None]
    masked = (draws < spec.mask_prob) & nonpad
    out.blocks[masked] = mask_id
    return out


def make_pretrain_example(
    protein: ProteinRecord,
    config: RAcutConfig,
    spec: NoiseSpec,
    seed: int | Sequence[int],
    pad_id: int = RESIDUE_VOCAB.pad_id,
    mask_id: int = RESIDUE_VOCAB.mask_id,
) -> PretrainExample:
    """Cut, permute, then noise — in that order, from one seeded generator.

    The same (protein, config, spec, seed) always yields the same example;
    the seed is recorded on the example for provenance.
    """
    seed_key = (seed,) if isinstance(seed, int) else tuple(int(s) for s in seed)
    rng = np.random.default_rng(seed_key)
    sset = racut(protein, config, rng, pad_id=pad_id)
    target = sample_shuffle(config.n, rng)
    shuffled = shuffle_apply(sset, target)
    noisy = apply_noise(shuffled, spec, rng, pad_id=pad_id, mask_id=mask_id)
    return PretrainExample(shuffled=noisy, target=target, seed=seed_key)


def render_example(
    example: PretrainExample, vocab: ResidueVocabulary = RESIDUE_VOCAB
) -> str:
    """Render blocks as residue strings for debugging (pads as middle dots)."""
    lines = []
    for i in range(example.shuffled.n):
        block = example.shuffled.blocks[i]
        text = vocab.decode(block.tolist())
        lines.append(f"slot {i} <- block {int(example.target.perm[i])}: {text}")
    return "\n".join(lines)
