"""Tokenization and dataset ingestion for compound-protein interaction data.

Proteins are tokenized over a fixed residue vocabulary: 22 canonical
single-letter codes (the 20 standard amino acids plus U and O) and one
unknown class that absorbs every other letter — 23 residue classes in all,
with dedicated pad and mask ids above them. SMILES strings are tokenized
character-wise over a fixed printable character set.

Interaction files are tab-separated ``smiles<TAB>sequence<TAB>label`` with
one record per line and an optional header row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ParseError, ValidationError

# 22 canonical residue letters, alphabetical. Everything else -> unknown.
CANONICAL_RESIDUES = "ACDEFGHIKLMNOPQRSTUVWY"
UNKNOWN_RESIDUE_CHAR = "X"
PAD_CHAR = "·"  # middle dot, used when rendering padded blocks
MASK_CHAR = "#"

DEFAULT_MAX_RESIDUES = 1200
DEFAULT_MAX_ATOMS = 290

# Fixed printable SMILES alphabet: organic/inorganic element letters,
# aromatic lowercase, ring-bond digits, and structural punctuation.
SMILES_CHARS = (
    "#$%()*+-./0123456789:=@[\\]"
    "ABCDEFGHIKLMNOPRSTUVWXYZ"
    "abcdefghilmnoprstuy"
)


@dataclass(frozen=True)
class ResidueVocabulary:
    """Residue-letter to token-id table with pad/mask ids.

    Exactly 23 residue classes (ids 0..22, the last being the unknown
    class); ``pad_id`` and ``mask_id`` sit above them and are distinct from
    every residue id.
    """

    residue_to_id: Mapping[str, int]
    unknown_id: int
    pad_id: int
    mask_id: int

    def __post_init__(self) -> None:
        ids = set(self.residue_to_id.values()) | {self.unknown_id}
        if len(ids) != self.num_residue_classes:
            raise ValidationError("residue ids must be distinct")
        if self.pad_id in ids or self.mask_id in ids or self.pad_id == self.mask_id:
            raise ValidationError("pad and mask ids must be distinct from residue ids")

    @property
    def num_residue_classes(self) -> int:
        return len(self.residue_to_id) + 1  # + unknown

    @property
    def size(self) -> int:
        """Total id count (residues + unknown + pad + mask): embedding rows."""
        return max(self.pad_id, self.mask_id) + 1

    def token_id(self, ch: str) -> int:
        return self.residue_to_id.get(ch, self.unknown_id)

    def id_to_char(self, token: int) -> str:
        if token == self.pad_id:
            return PAD_CHAR
        if token == self.mask_id:
            return MASK_CHAR
        if token == self.unknown_id:
            return UNKNOWN_RESIDUE_CHAR
        for ch, i in self.residue_to_id.items():
            if i == token:
                return ch
        raise ValidationError(f"token id {token} is out of vocabulary")

    def decode(self, tokens: Sequence[int]) -> str:
        return "".join(self.id_to_char(t) for t in tokens)


def standard_vocabulary() -> ResidueVocabulary:
    mapping = {ch: i for i, ch in enumerate(CANONICAL_RESIDUES)}
    unknown = len(mapping)
    return ResidueVocabulary(
        residue_to_id=mapping,
        unknown_id=unknown,
        pad_id=unknown + 1,
        mask_id=unknown + 2,
    )


RESIDUE_VOCAB = standard_vocabulary()

SMILES_TO_ID = {ch: i for i, ch in enumerate(SMILES_CHARS)}
SMILES_UNKNOWN_ID = len(SMILES_CHARS)
SMILES_PAD_ID = SMILES_UNKNOWN_ID + 1
SMILES_VOCAB_SIZE = SMILES_PAD_ID + 1


@dataclass
class ProteinRecord:
    """An uppercased residue string plus its token ids (tail-truncated)."""

    raw: str
    tokens: list[int]


@dataclass
class CompoundRecord:
    """A verbatim SMILES string plus its character token ids."""

    smiles: str
    tokens: list[int]


@dataclass
class InteractionRecord:
    compound: CompoundRecord
    protein: ProteinRecord
    label: int


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of an interaction TSV."""

    smiles_col: int = 0
    sequence_col: int = 1
    label_col: int = 2
    has_header: bool = False
    delimiter: str = "\t"


def encode_protein(
    raw: str,
    vocab: ResidueVocabulary = RESIDUE_VOCAB,
    l_max: int = DEFAULT_MAX_RESIDUES,
) -> ProteinRecord:
    """Tokenize a residue string.

    Case is normalized to uppercase before lookup; letters outside the
    canonical set collapse to the unknown class; anything beyond ``l_max``
    residues is dropped from the tail. The stored ``raw`` string is the
    full uppercased input (truncation applies to tokens only).
    """
    if not raw:
        raise ValidationError("protein sequence is empty")
    if l_max < 1:
        raise ValidationError(f"l_max must be >= 1, got {l_max}")
    upper = raw.upper()
    tokens = [vocab.token_id(ch) for ch in upper[:l_max]]
    return ProteinRecord(raw=upper, tokens=tokens)


def encode_smiles(raw: str, max_atoms: int = DEFAULT_MAX_ATOMS) -> CompoundRecord:
    """Tokenize a SMILES string character-wise, truncating past max_atoms."""
    if not raw:
        raise ValidationError("SMILES string is empty")
    if max_atoms < 1:
        raise ValidationError(f"max_atoms must be >= 1, got {max_atoms}")
    tokens = [SMILES_TO_ID.get(ch, SMILES_UNKNOWN_ID) for ch in raw[:max_atoms]]
    return CompoundRecord(smiles=raw, tokens=tokens)


def parse_dataset(
    path: str | Path,
    schema: DatasetSchema = DatasetSchema(),
    vocab: ResidueVocabulary = RESIDUE_VOCAB,
    l_max: int = DEFAULT_MAX_RESIDUES,
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> list[InteractionRecord]:
    """Parse an interaction TSV into records, preserving file order.

    Raises ParseError for a structurally bad row and ValidationError for a
    row whose fields fail encoding (empty sequence, label outside {0,1});
    both name the offending 1-based line number.
    """
    path = Path(path)
    needed = max(schema.smiles_col, schema.sequence_col, schema.label_col) + 1
    records: list[InteractionRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if schema.has_header and lineno == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split(schema.delimiter)
            if len(fields) < needed:
                raise ParseError(
                    f"{path.name} line {lineno}: expected at least {needed} "
                    f"columns, got {len(fields)}"
                )
            label_text = fields[schema.label_col].strip()
            try:
                label_value = float(label_text)
            except ValueError:
                raise ParseError(
                    f"{path.name} line {lineno}: label {label_text!r} is not a number"
                ) from None
            if label_value not in (0.0, 1.0):
                raise ValidationError(
                    f"{path.name} line {lineno}: label must be 0 or 1, got {label_text!r}"
                )
            try:
                compound = encode_smiles(fields[schema.smiles_col].strip(), max_atoms)
                protein = encode_protein(
                    fields[schema.sequence_col].strip(), vocab, l_max
                )
            except ValidationError as exc:
                raise ValidationError(f"{path.name} line {lineno}: {exc}") from None
            records.append(
                InteractionRecord(compound=compound, protein=protein, label=int(label_value))
            )
    return records


@dataclass
class PretrainDataset:
    """The protein multiset used for pretraining.

    When built for a downstream task this must come from the training split
    only (use ``from_interactions`` on the train records), so no test
    protein leaks into pretraining.
    """

    proteins: list[ProteinRecord] = field(default_factory=list)

    @classmethod
    def from_interactions(cls, records: Sequence[InteractionRecord]) -> "PretrainDataset":
        proteins, seen = [], set()
        for r in records:
            if r.protein.raw not in seen:
                seen.add(r.protein.raw)
                proteins.append(r.protein)
        return cls(proteins=proteins)

    def __len__(self) -> int:
        return len(self.proteins)


def write_vocab_table(path: str | Path, vocab: ResidueVocabulary = RESIDUE_VOCAB) -> None:
    """Emit the id<TAB>char table for auditing."""
    rows = sorted(
        [(i, ch) for ch, i in vocab.residue_to_id.items()]
        + [
            (vocab.unknown_id, UNKNOWN_RESIDUE_CHAR),
            (vocab.pad_id, PAD_CHAR),
            (vocab.mask_id, MASK_CHAR),
        ]
    )
    text = "".join(f"{i}\t{ch}\n" for i, ch in rows)
    Path(path).write_text(text, encoding="utf-8")
