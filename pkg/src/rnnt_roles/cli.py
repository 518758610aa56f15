"""Command-line pipeline: data generation, training, alignment, decoding, scoring.

Every command resolves its configuration as defaults <- config file <- flag
overrides and writes the resolved snapshot next to its outputs, so any run
can be reproduced from the output directory alone. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .alignment import alignment_record, emission_steps, viterbi_force_align
from .decoder import NetworkScorer, SuppressionConfig, beam_search, greedy_decode, hypothesis_record
from .estimators import RoleDiarizer, TransducerRecognizer
from .fileio import DataError, read_json, read_jsonl, sha256_file, write_json, write_jsonl
from .lattice import LogitLattice
from .metrics import score_corpus
from .models import checkpoint_hash, load_checkpoint, save_checkpoint
from .numerics import NumericalError
from .synthdata import SynthConfig, gen_corpus, read_dataset, read_vocabulary, write_dataset, write_vocabulary
from .training import transducer_from_checkpoint, role_from_checkpoint
from .vocab import RoleTranscript

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# Production-scale recipe, recorded for reference; the toy defaults below are
# sized to run the full pipeline in minutes on one CPU core.
FULL_SCALE_RECIPE = {
    "beam_size": 20,
    "asr_epochs": 40,
    "rd_epochs": 30,
    "average_best_checkpoints": 10,
    "learning_rate": 1e-4,
    "warmup_steps": 10_000,
    "weight_decay": 1e-6,
    "encoder_layers": 12,
    "rd_encoder_layers": 9,
    "tap_layer": 6,
    "model_dim": 384,
    "subsample_factor": 4,
    "train_hours": 1750.0,
    "val_hours": 26.5,
    "test_hours": 35.0,
    "suppression": {"alpha": 0.1, "beta": 0.99, "min_gap": 3, "tokens": ["yeah", "okay"]},
}


def default_config() -> dict:
    return {
        "seed": 0,
        "data": {
            "vocab_size": 24,
            "roles": ["DOC", "PAT", "OTH"],
            "role_unigram_bias": 0.95,
            "mean_turn_length": 3.0,
            "min_words": 5,
            "max_words": 15,
            "frames_per_token": [2, 2],
            "noise_std": 0.1,
            "silence_frames": [2, 2],
            "long_dependency": False,
            "subword_split": 1,
            "input_dim": 8,
            "second_other_prob": 0.05,
            "num_train": 2000,
            "num_val": 200,
            "num_test": 200,
        },
        "asr": {
            "encoder_kind": "unidirectional-recurrent",
            "encoder_layers": 2,
            "hidden_dim": 32,
            "tap_layer": 1,
            "subsample_factor": 2,
            "predictor_kind": "cnn",
            "predictor_context": 2,
            "embed_dim": 16,
            "joint_dim": 32,
        },
        "rd": {
            "encoder_kind": "unidirectional-recurrent",
            "encoder_layers": 1,
            "hidden_dim": 32,
            "predictor_kind": "rnn",
            "predictor_context": 2,
            "embed_dim": 16,
            "joint_dim": 32,
        },
        "train": {
            "learning_rate": 3e-3,
            "warmup_steps": 200,
            "weight_decay": 1e-6,
            "epochs": 5,
            "average_top_k": 3,
        },
        "decode": {
            "beam_size": 4,
            "max_symbols_per_frame": 10,
            "suppression": {
                "alpha": 0.1,
                "beta": 0.99,
                "tokens": ["yeah", "okay"],
                "min_gap": 3,
                "suppressed_blank_value": 0.01,
            },
        },
    }


class UsageError(RuntimeError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _deep_update(base: dict, override: dict) -> dict:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _apply_set(config: dict, assignment: str):
    if "=" not in assignment:
        raise UsageError(f"--set expects key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = path.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise UsageError(f"unknown config section {path!r}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {path!r}")
    node[parts[-1]] = value


def resolve_config(args) -> dict:
    config = default_config()
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise DataError(f"config file not found: {args.config}")
        _deep_update(config, read_json(args.config))
    for assignment in getattr(args, "set", None) or []:
        _apply_set(config, assignment)
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    return config


def _snapshot(out_dir, config, command):
    doc = dict(config)
    doc["command"] = command
    write_json(os.path.join(out_dir, "config.json"), doc)


def _load_split(data_dir, split):
    vocab = read_vocabulary(os.path.join(data_dir, "vocab.json"))
    path = os.path.join(data_dir, f"{split}.jsonl")
    if not os.path.exists(path):
        raise DataError(f"missing dataset split: {path}")
    return vocab, read_dataset(path, vocab)


def _write_history(out_dir, history):
    lines = ["epoch,train_loss,val_loss"]
    for row in history:
        if row["epoch"] == 0:
            continue
        train = "" if row["train_loss"] is None else f"{row['train_loss']:.6f}"
        val = "" if row["val_loss"] is None else f"{row['val_loss']:.6f}"
        lines.append(f"{row['epoch']},{train},{val}")
    from .fileio import atomic_write_text

    atomic_write_text(os.path.join(out_dir, "history.csv"), "\n".join(lines) + "\n")


def _recognizer_from_config(config, vocab, role_augmented):
    asr = config["asr"]
    train = config["train"]
    return TransducerRecognizer(
        vocabulary=vocab,
        role_augmented=role_augmented,
        encoder_kind=asr["encoder_kind"],
        encoder_layers=asr["encoder_layers"],
        hidden_dim=asr["hidden_dim"],
        tap_layer=asr["tap_layer"],
        subsample_factor=asr["subsample_factor"],
        predictor_kind=asr["predictor_kind"],
        predictor_context=asr["predictor_context"],
        embed_dim=asr["embed_dim"],
        joint_dim=asr["joint_dim"],
        learning_rate=train["learning_rate"],
        warmup_steps=train["warmup_steps"],
        weight_decay=train["weight_decay"],
        epochs=train["epochs"],
        average_top_k=train["average_top_k"],
        beam_size=config["decode"]["beam_size"],
        max_symbols_per_frame=config["decode"]["max_symbols_per_frame"],
        seed=config["seed"],
    )


# --- commands --------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = resolve_config(args)
    data_cfg = dict(config["data"])
    counts = {k: int(data_cfg.pop(f"num_{k}")) for k in ("train", "val", "test")}
    synth = SynthConfig.from_dict({**data_cfg, "seed": config["seed"]})
    vocab, splits = gen_corpus(synth, counts["train"], counts["val"], counts["test"])
    os.makedirs(args.out, exist_ok=True)
    for split, utts in splits.items():
        write_dataset(os.path.join(args.out, f"{split}.jsonl"), utts)
    write_vocabulary(os.path.join(args.out, "vocab.json"), vocab)
    _snapshot(args.out, config, "gen-data")
    print(f"wrote {counts['train']}/{counts['val']}/{counts['test']} utterances to {args.out}")
    return EXIT_OK


def _cmd_train_recognizer(args, role_augmented) -> int:
    config = resolve_config(args)
    for key, flag in (("epochs", "epochs"),):
        if getattr(args, flag, None) is not None:
            config["train"][key] = getattr(args, flag)
    if getattr(args, "predictor", None):
        config["asr"]["predictor_kind"] = args.predictor
    if getattr(args, "context", None) is not None:
        config["asr"]["predictor_context"] = args.context
    vocab, train_utts = _load_split(args.data, "train")
    _, val_utts = _load_split(args.data, "val")
    recognizer = _recognizer_from_config(config, vocab, role_augmented)
    recognizer.fit(train_utts, validation=val_utts)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), recognizer.checkpoint_)
    _write_history(args.out, recognizer.history_)
    _snapshot(args.out, config, "train-role-asr" if role_augmented else "train-asr")
    final = recognizer.history_[-1]["val_loss"]
    print(f"final validation loss: {final:.6f}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.json')}")
    return EXIT_OK


def cmd_train_asr(args) -> int:
    return _cmd_train_recognizer(args, role_augmented=False)


def cmd_train_role_asr(args) -> int:
    return _cmd_train_recognizer(args, role_augmented=True)


def cmd_force_align(args) -> int:
    config = resolve_config(args)
    vocab, utts = _load_split(args.data, args.split)
    ckpt = load_checkpoint(args.asr)
    network = transducer_from_checkpoint(ckpt)
    records = []
    for utt in utts:
        F, _ = network.encoder.forward(utt.features)
        G = network.predictor.forward_sequence(utt.tokens)
        lat = LogitLattice(network.joiner.forward_all(F, G), blank=network.blank)
        path = viterbi_force_align(lat, utt.tokens)
        if len(emission_steps(path)) != len(utt.tokens):
            raise NumericalError(f"alignment of {utt.id} lost emission steps")
        records.append(alignment_record(utt.id, path))
    os.makedirs(args.out, exist_ok=True)
    write_jsonl(os.path.join(args.out, "alignments.jsonl"), records)
    _snapshot(args.out, config, "force-align")
    print(f"aligned {len(records)} utterances from split {args.split!r}")
    return EXIT_OK


def cmd_train_rd(args) -> int:
    config = resolve_config(args)
    if getattr(args, "epochs", None) is not None:
        config["train"]["epochs"] = args.epochs
    if getattr(args, "predictor", None):
        config["rd"]["predictor_kind"] = args.predictor
    if getattr(args, "context", None) is not None:
        config["rd"]["predictor_context"] = args.context
    vocab, train_utts = _load_split(args.data, "train")
    _, val_utts = _load_split(args.data, "val")

    asr_hash_before = sha256_file(args.asr)
    asr_ckpt = load_checkpoint(args.asr)
    recognizer = _recognizer_from_config(config, vocab, role_augmented=False)
    recognizer.checkpoint_ = asr_ckpt
    recognizer.network_ = transducer_from_checkpoint(asr_ckpt)

    rd_cfg = config["rd"]
    train = config["train"]
    init_ckpt = load_checkpoint(args.init_from) if getattr(args, "init_from", None) else None
    diarizer = RoleDiarizer(
        recognizer=recognizer,
        encoder_kind=rd_cfg["encoder_kind"],
        encoder_layers=rd_cfg["encoder_layers"],
        hidden_dim=rd_cfg["hidden_dim"],
        predictor_kind=rd_cfg["predictor_kind"],
        predictor_context=rd_cfg["predictor_context"],
        embed_dim=rd_cfg["embed_dim"],
        joint_dim=rd_cfg["joint_dim"],
        init_predictor_from=init_ckpt,
        learning_rate=train["learning_rate"],
        warmup_steps=train["warmup_steps"],
        weight_decay=train["weight_decay"],
        epochs=train["epochs"],
        average_top_k=train["average_top_k"],
        beam_size=config["decode"]["beam_size"],
        seed=config["seed"],
    )
    diarizer.fit(train_utts, validation=val_utts)
    asr_hash_after = sha256_file(args.asr)
    print(f"frozen recognizer hash before: {asr_hash_before}")
    print(f"frozen recognizer hash after:  {asr_hash_after}")
    if asr_hash_before != asr_hash_after:
        raise NumericalError("frozen recognizer checkpoint changed during role training")
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), diarizer.checkpoint_)
    _write_history(args.out, diarizer.history_)
    _snapshot(args.out, config, "train-rd")
    print(f"final validation role cross-entropy: {diarizer.history_[-1]['val_loss']:.6f}")
    return EXIT_OK


def _suppression_from_config(config, vocab):
    sup = config["decode"]["suppression"]
    ids = []
    for word in sup["tokens"]:
        ids.extend(vocab.encode_words([word]))
    return SuppressionConfig(
        alpha=sup["alpha"], beta=sup["beta"], suppression_set=frozenset(ids),
        min_gap=sup["min_gap"], suppressed_blank_value=sup["suppressed_blank_value"],
    )


def cmd_decode(args) -> int:
    config = resolve_config(args)
    dec = config["decode"]
    if getattr(args, "beam", None) is not None:
        dec["beam_size"] = args.beam
    sup_cfg = dec["suppression"]
    if getattr(args, "alpha", None) is not None:
        sup_cfg["alpha"] = args.alpha
    if getattr(args, "beta", None) is not None:
        sup_cfg["beta"] = args.beta
    if getattr(args, "gap", None) is not None:
        sup_cfg["min_gap"] = args.gap
    if getattr(args, "tokens", None):
        sup_cfg["tokens"] = [t.strip() for t in args.tokens.split(",") if t.strip()]

    vocab, utts = _load_split(args.data, args.split)
    asr = transducer_from_checkpoint(load_checkpoint(args.asr))
    rd = role_from_checkpoint(load_checkpoint(args.rd)) if args.rd else None
    suppression = None
    if args.suppress:
        if rd is None:
            raise UsageError("--suppress requires a role-head checkpoint (--rd)")
        suppression = _suppression_from_config(config, vocab)
        print(f"suppression: alpha={suppression.alpha} beta={suppression.beta} "
              f"gap={suppression.min_gap} tokens={sorted(sup_cfg['tokens'])}")

    records = []
    triggers = 0
    for utt in utts:
        scorer = NetworkScorer(asr, utt.features, rd)
        if args.greedy:
            hyp = greedy_decode(scorer, dec["max_symbols_per_frame"])
        else:
            hyp = beam_search(scorer, dec["beam_size"], suppression=suppression,
                              max_symbols_per_frame=dec["max_symbols_per_frame"])[0]
        triggers += hyp.suppression_count
        records.append(hypothesis_record(utt.id, hyp, vocab=vocab, roles=vocab.roles))
    os.makedirs(args.out, exist_ok=True)
    write_jsonl(os.path.join(args.out, "hyps.jsonl"), records)
    _snapshot(args.out, config, "decode")
    print(f"decoded {len(records)} utterances; suppression triggers: {triggers}")
    return EXIT_OK


def cmd_score(args) -> int:
    config = resolve_config(args)
    vocab, utts = _load_split(args.data, args.split)
    refs = {utt.id: utt.words for utt in utts}
    hyp_records = read_jsonl(args.hyp)
    hyps = {}
    roles_missing = False
    for rec in hyp_records:
        words = []
        for token, role in zip(rec["tokens"], rec["roles"]):
            if role is None:
                roles_missing = True
                role = vocab.roles.roles[-1]
            words.append((token, role))
        hyps[rec["id"]] = RoleTranscript(words=words)
    for utt_id in refs:
        hyps.setdefault(utt_id, RoleTranscript(words=[]))
    report = score_corpus(refs, hyps, roles=vocab.roles)
    doc = report.to_dict()
    if roles_missing:
        doc["corpus"]["wder"] = None
        doc["corpus"]["r_wder"] = None
        doc["note"] = "hypothesis records carry no roles; attribution metrics omitted"
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "report.json"), doc)
    lines = ["id,reference_words,correct,substitutions,deletions,insertions,wer,wder,r_wder"]
    for row in report.per_utterance:
        fields = [str(row["id"]), str(row["reference_words"]), str(row["correct"]),
                  str(row["substitutions"]), str(row["deletions"]), str(row["insertions"])]
        for key in ("wer", "wder", "r_wder"):
            value = row[key]
            if roles_missing and key in ("wder", "r_wder"):
                value = None
            fields.append("" if value is None else f"{value:.6f}")
        lines.append(",".join(fields))
    from .fileio import atomic_write_text

    atomic_write_text(os.path.join(args.out, "per_utterance.csv"), "\n".join(lines) + "\n")
    _snapshot(args.out, config, "score")
    corpus = doc["corpus"]
    wer = corpus["wer"]
    print(f"WER: {'inf' if wer is None else f'{wer:.4f}'} "
          f"(C={corpus['correct']} S={corpus['substitutions']} "
          f"D={corpus['deletions']} I={corpus['insertions']})")
    print(f"WDER: {corpus['wder']}")
    print(f"R-WDER: {corpus['r_wder']}")
    print("top deleted tokens:", [w for w, _ in report.histogram[:5]])
    return EXIT_OK


def cmd_context_sweep(args) -> int:
    config = resolve_config(args)
    if getattr(args, "epochs", None) is not None:
        config["train"]["epochs"] = args.epochs
    contexts = [c.strip() for c in args.contexts.split(",") if c.strip()]
    if not contexts:
        raise UsageError("no contexts given")
    vocab, train_utts = _load_split(args.data, "train")
    _, val_utts = _load_split(args.data, "val")
    rows = []
    for context in contexts:
        cfg = copy.deepcopy(config)
        if context == "rnn":
            cfg["asr"]["predictor_kind"] = "rnn"
        else:
            try:
                cfg["asr"]["predictor_context"] = int(context)
            except ValueError:
                raise UsageError(f"context must be an integer or 'rnn', got {context!r}")
            cfg["asr"]["predictor_kind"] = "cnn"
        recognizer = _recognizer_from_config(cfg, vocab, role_augmented=True)
        recognizer.fit(train_utts, validation=val_utts)
        refs, hyps = {}, {}
        for utt, transcript in zip(val_utts, recognizer.predict(val_utts)):
            refs[utt.id] = utt.words
            hyps[utt.id] = transcript
        report = score_corpus(refs, hyps, roles=vocab.roles)
        # an untrained sweep point can decode nothing: no aligned pairs
        r = float("nan") if report.r_wder is None else report.r_wder
        w = float("nan") if report.wer == float("inf") else report.wer
        rows.append((context, w, r))
        print(f"context {context}: WER={w:.4f} R-WDER={r:.4f}")
    os.makedirs(args.out, exist_ok=True)
    lines = ["context,wer,r_wder"]
    for context, w, r in rows:
        lines.append(f"{context},{w:.6f},{r:.6f}")
    from .fileio import atomic_write_text

    atomic_write_text(os.path.join(args.out, "sweep.csv"), "\n".join(lines) + "\n")
    _snapshot(args.out, config, "context-sweep")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="rnnt-roles",
                    description="Joint recognition + speaker-role diarization lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (overrides defaults)")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a single config value (repeatable)")
        p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("gen-data", help="generate a synthetic conversation corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func in (("train-asr", cmd_train_asr), ("train-role-asr", cmd_train_role_asr)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a generated corpus")
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--epochs", type=int)
        p.add_argument("--predictor", choices=["cnn", "rnn"])
        p.add_argument("--context", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("force-align", help="align references against a frozen recognizer")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_force_align)

    p = sub.add_parser("train-rd", help="train the role head against a frozen recognizer")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--predictor", choices=["cnn", "rnn", "shared"])
    p.add_argument("--context", type=int)
    p.add_argument("--init-from", dest="init_from",
                   help="initialize the role predictor from a role-augmented checkpoint")
    p.set_defaults(func=cmd_train_rd)

    p = sub.add_parser("decode", help="beam-search decoding with optional suppression")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--rd")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--beam", type=int)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--suppress", action="store_true")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gap", type=int)
    p.add_argument("--tokens", help="comma-separated suppression word list")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="score a hypothesis file against references")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("context-sweep",
                       help="train role-augmented recognizers across predictor contexts")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--contexts", default="1,2,4,rnn")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_context_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, AssertionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
