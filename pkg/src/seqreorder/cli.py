"""Command-line entry points.

Commands: split, pretrain, finetune, evaluate, gradcheck,
export-embeddings, plus synth (the bundled corpus generator). Every
command takes --seed (defaulted, echoed into every artifact it writes)
and --out; when --out is omitted the output root comes from the
SEQREORDER_OUT environment variable (default ./runs).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import cpi as cpi_mod
from . import encoder as enc
from . import evaluation, pretrain, synthetic
from .augment import RAcutConfig
from .config import RunConfig
from .corpus import (
    DatasetSchema,
    PretrainDataset,
    encode_protein,
    parse_dataset,
    write_vocab_table,
)
from .errors import CheckpointError, ParseError, SeqReorderError, ValidationError
from .gradcheck import run_gradcheck

logger = logging.getLogger(__name__)

OUT_ROOT_ENV = "SEQREORDER_OUT"

_CONFIG_FLAGS = {
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "weight_decay": float,
    "embed_dim": int,
    "layers": int,
    "heads": int,
    "ffn_dim": int,
    "n": int,
    "l_max": int,
    "max_atoms": int,
    "mask_prob": float,
    "noise_kind": str,
    "sinkhorn_m": int,
    "eval_m": int,
    "fusion_dim": int,
    "comp_layers": int,
    "comp_heads": int,
    "comp_ffn_dim": int,
    "lam": float,
    "train_ratio": float,
    "valid_ratio": float,
    "test_ratio": float,
}

_GEOMETRY_FLAGS = ("embed_dim", "layers", "heads", "ffn_dim", "n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    for name, typ in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def _run_config(args: argparse.Namespace) -> RunConfig:
    rc = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return rc.with_overrides(overrides)


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ROOT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, command: str, rc: RunConfig, inputs: dict) -> None:
    meta = {"command": command, "seed": rc.seed, "config": rc.to_dict(), "inputs": inputs}
    (out / "run_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _schema(args: argparse.Namespace) -> DatasetSchema:
    return DatasetSchema(has_header=bool(getattr(args, "header", False)))


def _write_records_tsv(path: Path, records) -> None:
    lines = [f"{r.compound.smiles}\t{r.protein.raw}\t{r.label}" for r in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_split(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    out = _out_dir(args, "split")
    records = parse_dataset(args.data, _schema(args), l_max=rc.l_max, max_atoms=rc.max_atoms)
    split = evaluation.split_scenarios(records, rc.ratios(), seed=rc.seed)
    _write_records_tsv(out / "train.tsv", split.train)
    _write_records_tsv(out / "valid.tsv", split.valid)
    counts = {"train": len(split.train), "valid": len(split.valid)}
    for name in evaluation.PARTITIONS:
        part = split.test_partitions[name]
        _write_records_tsv(out / f"test_{name}.tsv", part)
        counts[f"test_{name}"] = len(part)
    manifest = {
        "seed": rc.seed,
        "ratios": list(rc.ratios()),
        "source": Path(args.data).name,
        "counts": counts,
        "files": ["train.tsv", "valid.tsv"]
        + [f"test_{name}.tsv" for name in evaluation.PARTITIONS],
    }
    (out / "split_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_vocab_table(out / "vocab.tsv")
    _write_meta(out, "split", rc, {"data": str(args.data)})
    print(f"split {len(records)} pairs -> {counts}")
    return 0


def _load_proteins_file(path: str | Path, l_max: int) -> PretrainDataset:
    proteins = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split("\t")
        seq = fields[1] if len(fields) > 1 else fields[0]
        try:
            proteins.append(encode_protein(seq, l_max=l_max))
        except ValidationError as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from None
    return PretrainDataset(proteins=proteins)


def cmd_pretrain(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    out = _out_dir(args, "pretrain")
    if bool(args.data) == bool(args.proteins):
        raise ValidationError("give exactly one of --data (pairs TSV) or --proteins")
    if args.data:
        records = parse_dataset(args.data, _schema(args), l_max=rc.l_max, max_atoms=rc.max_atoms)
        dataset = PretrainDataset.from_interactions(records)
        source = str(args.data)
    else:
        dataset = _load_proteins_file(args.proteins, rc.l_max)
        source = str(args.proteins)
    result = pretrain.pretrain_run(
        dataset,
        rc.encoder(),
        rc.racut(),
        rc.pretrain(stop_accuracy=args.stop_accuracy),
        out_dir=out,
    )
    write_vocab_table(out / "vocab.tsv")
    _write_meta(out, "pretrain", rc, {"source": source, "proteins": len(dataset)})
    last_epoch, last_acc = result.val_history[-1]
    print(
        f"pretrained {last_epoch} epochs on {len(dataset)} proteins; "
        f"best epoch {result.best_epoch}, held-out accuracy "
        f"{max(a for _, a in result.val_history):.4f} (final {last_acc:.4f})"
    )
    print(f"best checkpoint: {out / 'best.ckpt'}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    out = _out_dir(args, "finetune")
    if bool(args.checkpoint) == bool(args.random_init):
        raise ValidationError("give exactly one of --checkpoint or --random-init")
    if args.checkpoint:
        ckpt = pretrain.load_checkpoint(args.checkpoint)
        frozen = pretrain.encoder_state_from_checkpoint(ckpt)
        for name in _GEOMETRY_FLAGS:
            value = getattr(args, name)
            if value is not None and getattr(frozen.config, name) != value:
                raise CheckpointError(
                    f"checkpoint encoder has {name}={getattr(frozen.config, name)} "
                    f"but {name}={value} was requested; parameter shapes differ"
                )
    else:
        frozen = enc.init(rc.encoder(), seed=rc.seed)

    train = parse_dataset(args.train, _schema(args), l_max=rc.l_max, max_atoms=rc.max_atoms)
    valid = (
        parse_dataset(args.valid, _schema(args), l_max=rc.l_max, max_atoms=rc.max_atoms)
        if args.valid
        else []
    )
    cpi_cfg = rc.with_overrides({"embed_dim": frozen.config.embed_dim}).cpi()
    result = cpi_mod.finetune_run(train, valid, frozen, cpi_cfg, rc.finetune(), out_dir=out)
    ckpt_out = cpi_mod.checkpoint_from_cpi(
        result.model, {"global_seed": rc.seed, "epoch": result.selected_epoch, "step": 0}
    )
    pretrain.save_checkpoint(ckpt_out, out / "cpi.ckpt")

    cache = cpi_mod.build_protein_cache(result.model, train + list(valid))
    for spec in args.test or []:
        if "=" not in spec:
            raise ValidationError(f"--test expects NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        records = parse_dataset(path, _schema(args), l_max=rc.l_max, max_atoms=rc.max_atoms)
        for rec in records:
            if rec.protein.raw not in cache:
                cache[rec.protein.raw] = enc.protein_embedding(
                    result.model.encoder_state, rec.protein, result.model.segmentation
                )
        scores = cpi_mod.predict_pairs(result.model, records, cache)
        cpi_mod.write_predictions(
            out / f"predictions_{name}.csv",
            [f"{name}-{i:06d}" for i in range(len(records))],
            scores,
            [r.label for r in records],
        )
    _write_meta(
        out,
        "finetune",
        rc,
        {
            "train": str(args.train),
            "valid": str(args.valid) if args.valid else None,
            "encoder": str(args.checkpoint) if args.checkpoint else "random-init",
        },
    )
    if result.val_history:
        best = max(a for _, a in result.val_history)
        print(
            f"fine-tuned {rc.epochs} epochs on {len(train)} pairs; "
            f"selected epoch {result.selected_epoch} (valid AUROC {best:.4f})"
        )
    else:
        print(f"fine-tuned {rc.epochs} epochs on {len(train)} pairs (no validation set)")
    print(f"model: {out / 'cpi.ckpt'}")
    return 0


def _read_predictions(path: Path) -> tuple[np.ndarray, np.ndarray]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "pair_id,score,label":
        raise ParseError(f"{path}: expected header 'pair_id,score,label'")
    scores, labels = [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise ParseError(f"{path} line {lineno}: expected 3 fields, got {len(fields)}")
        try:
            s = float(fields[1])
        except ValueError:
            raise ParseError(f"{path} line {lineno}: bad score {fields[1]!r}") from None
        if not np.isfinite(s):
            raise ParseError(f"{path} line {lineno}: non-finite score")
        if fields[2] not in ("0", "1"):
            raise ParseError(f"{path} line {lineno}: label must be 0 or 1, got {fields[2]!r}")
        scores.append(s)
        labels.append(int(fields[2]))
    return np.array(scores), np.array(labels)


def cmd_evaluate(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    out = _out_dir(args, "evaluate")
    per_seed = []
    for run_dir in args.run:
        run_path = Path(run_dir)
        files = sorted(run_path.glob("predictions_*.csv"))
        if not files:
            raise ValidationError(f"{run_dir}: no predictions_*.csv files found")
        seed_results = {}
        for f in files:
            name = f.stem[len("predictions_") :]
            seed_results[name] = _read_predictions(f)
        per_seed.append(seed_results)
    report = evaluation.emit_report(args.dataset_name, per_seed, out)
    _write_meta(out, "evaluate", rc, {"runs": [str(r) for r in args.run]})
    for name, stats in report["partitions"].items():
        print(
            f"{name:12s} auroc {stats['auroc_mean']:.4f} +/- {stats['auroc_std']:.4f}  "
            f"auprc {stats['auprc_mean']:.4f} +/- {stats['auprc_std']:.4f}  "
            f"n={stats['n_pairs']}"
        )
    for name, reason in report.get("skipped_partitions", {}).items():
        print(f"{name:12s} skipped: {reason}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = run_gradcheck(seed=args.seed)
    ok = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max relative error {r.max_rel_err:.3e} (tol {r.tol:.0e})")
        ok = ok and r.passed
    return 0 if ok else 1


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    out = _out_dir(args, "export-embeddings")
    ckpt = pretrain.load_checkpoint(args.checkpoint)
    state = pretrain.encoder_state_from_checkpoint(ckpt)
    seg = RAcutConfig(n=state.config.n, l_max=state.config.n * state.config.f_max)
    rows, skipped = [], []
    for lineno, line in enumerate(
        Path(args.proteins).read_text(encoding="utf-8").splitlines(), 1
    ):
        line = line.strip()
        if not line:
            continue
        fields = line.split("\t")
        pid, seq = (fields[0], fields[1]) if len(fields) > 1 else (f"row{lineno}", fields[0])
        try:
            protein = encode_protein(seq, l_max=seg.l_max)
            vec = enc.protein_embedding(state, protein, seg)
        except (ValidationError, SeqReorderError) as exc:
            logger.warning("skipping %s: %s", pid, exc)
            skipped.append(f"{pid}\t{exc}")
            continue
        rows.append(pid + "\t" + "\t".join(f"{v:.17g}" for v in vec))
    (out / "embeddings.tsv").write_text(
        "\n".join(rows) + ("\n" if rows else ""), encoding="utf-8"
    )
    (out / "skipped.log").write_text(
        "\n".join(skipped) + ("\n" if skipped else ""), encoding="utf-8"
    )
    _write_meta(out, "export-embeddings", rc, {"checkpoint": str(args.checkpoint)})
    print(f"wrote {len(rows)} embeddings ({len(skipped)} skipped) to {out / 'embeddings.tsv'}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out_path = Path(args.out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "motif":
        seqs = synthetic.motif_sequences(
            num_sequences=args.num,
            n_families=args.families,
            block_len=args.block_len,
            seed=args.seed,
            length_jitter=args.jitter,
        )
        synthetic.write_sequence_tsv(out_path, seqs)
        print(f"wrote {len(seqs)} sequences to {out_path}")
    else:
        corpus = synthetic.interaction_corpus(
            num_proteins=args.num_proteins,
            num_compounds=args.num_compounds,
            num_pairs=args.num_pairs,
            seed=args.seed,
        )
        synthetic.write_interaction_tsv(out_path, corpus)
        positives = sum(y for _, _, y in corpus.rows)
        print(f"wrote {len(corpus.rows)} pairs ({positives} positive) to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqreorder",
        description="Subsequence-reordering pretraining and CPI evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a pairs TSV into scenario partitions")
    p.add_argument("--data", required=True, help="smiles<TAB>sequence<TAB>label TSV")
    p.add_argument("--header", action="store_true", help="input has a header row")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="pretrain the encoder on shuffled proteins")
    p.add_argument("--data", default=None, help="pairs TSV; proteins are taken from it")
    p.add_argument("--proteins", default=None, help="id<TAB>sequence or plain-sequence file")
    p.add_argument("--header", action="store_true")
    p.add_argument("--stop-accuracy", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the CPI head on a frozen encoder")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", default=None)
    p.add_argument("--test", action="append", metavar="NAME=PATH")
    p.add_argument("--checkpoint", default=None, help="pretrained encoder checkpoint")
    p.add_argument("--random-init", action="store_true", help="use an untrained encoder")
    p.add_argument("--header", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="aggregate predictions into the metrics report")
    p.add_argument("--run", action="append", required=True, help="finetune output dir (one per seed)")
    p.add_argument("--dataset-name", default="dataset")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-embeddings", help="write protein embeddings for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--proteins", required=True, help="id<TAB>sequence file")
    _add_common(p)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("synth", help="generate a bundled synthetic corpus")
    p.add_argument("kind", choices=("motif", "cpi"))
    p.add_argument("--out-file", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num", type=int, default=2000, help="motif: sequence count")
    p.add_argument("--families", type=int, default=4)
    p.add_argument("--block-len", type=int, default=12)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--num-proteins", type=int, default=400)
    p.add_argument("--num-compounds", type=int, default=400)
    p.add_argument("--num-pairs", type=int, default=1200)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SeqReorderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
