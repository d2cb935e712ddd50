"""Command-line surface: synthesize data, train, align, evaluate, embed.

Exit codes: 0 success, 2 usage/config/data error, 3 numerical failure.
Training is driven by an INI-style config file:

    [paths]
    train_l1 = data/l1.txt
    train_l2 = data/l2.txt
    val_l1 = data/l1.txt        ; optional
    val_l2 = data/l2.txt        ; optional
    gold = data/gold.txt        ; optional
    checkpoint = checkpoint.json
    metrics = metrics.tsv

    [model]
    encoder = bow               ; bow | birnn
    d = 100
    d_x = 128
    hierarchical = false
    d_s = 16

    [training]
    epochs = 30
    batch = 100
    lr = 1e-3
    n_neg = 1000
    seed = 1
    css = true
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import alignment, baselines, corpus, semeval, training
from .corpus import NULL_ID, NULL_TOKEN
from .errors import AlignvaeError, TrainingError
from .model import ModelConfig

_CONFIG_SCHEMA = {
    "paths": {
        "train_l1": str, "train_l2": str, "val_l1": str, "val_l2": str,
        "gold": str, "checkpoint": str, "metrics": str,
    },
    "model": {
        "encoder": str, "d": int, "d_x": int, "hierarchical": bool, "d_s": int,
    },
    "training": {
        "epochs": int, "batch": int, "lr": float, "n_neg": int,
        "seed": int, "css": bool, "em_iters": int, "max_vocab": int,
    },
}

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _parse_config(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise AlignvaeError(f"config file not found: {path}")
    values: dict[str, dict] = {section: {} for section in _CONFIG_SCHEMA}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise AlignvaeError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            kind = _CONFIG_SCHEMA[section].get(key)
            if kind is None:
                raise AlignvaeError(f"unknown config key {key!r} in [{section}]")
            if kind is bool:
                if raw.lower() not in _BOOL:
                    raise AlignvaeError(f"bad boolean for {key!r}: {raw!r}")
                values[section][key] = _BOOL[raw.lower()]
            else:
                try:
                    values[section][key] = kind(raw)
                except ValueError:
                    raise AlignvaeError(f"bad value for {key!r}: {raw!r}") from None
    return values


def cmd_synth(args) -> int:
    synth = corpus.synth_corpus(
        seed=args.seed, v1=args.v1, v2=args.v2, n_pairs=args.pairs,
        len_range=(args.len[0], args.len[1]), shuffle_l2=args.shuffle,
    )
    out = args.out
    os.makedirs(out, exist_ok=True)
    corpus.write_corpus(
        synth,
        os.path.join(out, "l1.txt"),
        os.path.join(out, "l2.txt"),
        os.path.join(out, "gold.txt"),
    )
    n_links = sum(len(v) for v in synth.gold.values())
    print(
        f"wrote {len(synth.l1_lines)} sentence pairs, {n_links} gold links, "
        f"{len(synth.mapping)} dictionary entries to {out}"
    )
    return 0


def _model_config(cfg: dict) -> ModelConfig:
    section = cfg.get("model", {})
    return ModelConfig(
        encoder=section.get("encoder", "bow"),
        d=section.get("d", 100),
        d_x=section.get("d_x", 128),
        hierarchical=section.get("hierarchical", False),
        d_s=section.get("d_s", 16),
    )


def _train_config(cfg: dict) -> training.TrainConfig:
    section = cfg.get("training", {})
    return training.TrainConfig(
        epochs=section.get("epochs", 30),
        batch_size=section.get("batch", 100),
        lr=section.get("lr", 1e-3),
        n_neg=section.get("n_neg", 1000),
        seed=section.get("seed", 1),
        css=section.get("css", True),
    )


def cmd_train(args) -> int:
    cfg = _parse_config(args.config)
    paths = cfg["paths"]
    for key in ("train_l1", "train_l2"):
        if key not in paths:
            raise AlignvaeError(f"config missing required key {key!r} in [paths]")
    if args.hierarchical is not None:
        cfg.setdefault("model", {})["hierarchical"] = args.hierarchical
    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    pairs, vocab1, vocab2 = corpus.load_parallel(
        paths["train_l1"], paths["train_l2"],
        max_vocab=cfg["training"].get("max_vocab"),
    )

    val_pairs = val_gold = None
    if "val_l1" in paths and "val_l2" in paths:
        val_pairs, _, _ = corpus.load_parallel(
            paths["val_l1"], paths["val_l2"], max_len=None, vocabs=(vocab1, vocab2)
        )
    if "gold" in paths:
        val_gold = alignment.parse_gold(paths["gold"])

    ckpt_path = paths.get("checkpoint", "checkpoint.json")
    metrics_path = paths.get("metrics", "metrics.tsv")

    if args.baseline == "ibm1":
        iters = cfg["training"].get("em_iters", 10)
        table, trace = baselines.ibm1_train(pairs, len(vocab1), len(vocab2), iters)
        baselines.save_ibm1_table(table, vocab1, vocab2, ckpt_path)
        with open(metrics_path, "w", encoding="utf-8") as fh:
            for it, ll in enumerate(trace):
                fh.write(f"{it}\t{ll!r}\n")
        print(f"ibm1 table written to {ckpt_path}")
        return 0

    ckpt = training.train(
        pairs, vocab1, vocab2, model_cfg, train_cfg,
        val_pairs=val_pairs, val_gold=val_gold,
        log_path=metrics_path, log_fn=lambda line: print(line, file=sys.stderr),
    )
    training.save_checkpoint(ckpt, ckpt_path)
    print(f"checkpoint written to {ckpt_path} (best epoch {ckpt.best_epoch})")
    return 0


def cmd_align(args) -> int:
    l1 = corpus.read_sentences(args.l1)
    l2 = corpus.read_sentences(args.l2)
    if len(l1) != len(l2):
        raise AlignvaeError("parallel files differ in length")
    links_by_sid = {}
    if args.baseline == "ibm1":
        table = baselines.load_ibm1_table(args.checkpoint)
        for sid, (a, b) in enumerate(zip(l1, l2), start=1):
            links_by_sid[sid] = baselines.ibm1_align_tokens(a, b, table, NULL_TOKEN)
    else:
        ckpt = training.load_checkpoint(args.checkpoint)
        params = ckpt.build_store()
        vocab1, vocab2 = ckpt.vocabularies()
        for sid, (a, b) in enumerate(zip(l1, l2), start=1):
            pair = corpus.SentencePair(
                x=(NULL_ID,) + vocab1.encode(a), y=vocab2.encode(b)
            )
            links_by_sid[sid] = (
                alignment.viterbi_align(pair, params, ckpt.model_cfg) if b else set()
            )
    alignment.write_links(links_by_sid, args.out)
    print(f"wrote alignments for {len(links_by_sid)} sentences to {args.out}")
    return 0


def _eval_aer(args) -> int:
    pred = alignment.parse_gold(args.pred)
    gold = alignment.parse_gold(args.gold)
    pred_links = {sid: set(g.possible) for sid, g in pred.items()}
    score, counts = alignment.corpus_aer(pred_links, gold)
    print(f"{score:.6f}")
    print(f"|A|={counts['A']} |S|={counts['S']} |P|={counts['P']}")
    return 0


def _eval_lexsub(args) -> int:
    instances = semeval.parse_lexsub(args.data)
    if args.checkpoint:
        ckpt = training.load_checkpoint(args.checkpoint)
        params = ckpt.build_store()
        vocab1, _ = ckpt.vocabularies()
        score, per_instance = semeval.mean_gap(
            instances, vocab1, params, ckpt.model_cfg,
            metric=args.metric, reverse_kl=args.reverse_kl,
        )
    else:
        # no model: score the candidates in file order
        per_instance = [
            semeval.gap([w for _, w in inst.candidates]) for inst in instances
        ]
        score = float(np.mean(per_instance))
    if args.per_instance:
        with open(args.per_instance, "w", encoding="utf-8") as fh:
            for k, value in enumerate(per_instance):
                fh.write(f"{k}\t{value!r}\n")
            fh.write(f"mean\t{score!r}\n")
    print(f"{score:.6f}")
    return 0


def _eval_wordsim(args) -> int:
    rows = semeval.parse_wordsim(args.data)
    gold = [row[2] for row in rows]
    if args.checkpoint:
        ckpt = training.load_checkpoint(args.checkpoint)
        params = ckpt.build_store()
        vocab1, _ = ckpt.vocabularies()
        if not args.corpus:
            raise AlignvaeError("wordsim with a checkpoint needs --corpus (L1 text)")
        sentences = corpus.read_sentences(args.corpus)
        ids = [(NULL_ID, *vocab1.encode(toks)) for toks in sentences]
        sys_scores = []
        for t1, t2, _, _ in rows:
            e1 = semeval.type_embedding(t1, vocab1, ids, params, ckpt.model_cfg)
            e2 = semeval.type_embedding(t2, vocab1, ids, params, ckpt.model_cfg)
            sys_scores.append(semeval.cosine(e1, e2))
    else:
        if any(row[3] is None for row in rows):
            raise AlignvaeError(
                "wordsim without a checkpoint needs a 4th system-score column"
            )
        sys_scores = [row[3] for row in rows]
    print(f"{semeval.spearman(sys_scores, gold):.6f}")
    return 0


def cmd_eval(args) -> int:
    if args.kind == "aer":
        return _eval_aer(args)
    if args.kind == "lexsub":
        return _eval_lexsub(args)
    return _eval_wordsim(args)


def cmd_embed(args) -> int:
    ckpt = training.load_checkpoint(args.checkpoint)
    params = ckpt.build_store()
    vocab1, _ = ckpt.vocabularies()
    sentences = corpus.read_sentences(args.corpus)
    ids = [(NULL_ID, *vocab1.encode(toks)) for toks in sentences]
    with open(args.out, "w", encoding="utf-8") as fh:
        if args.mode == "type":
            table = semeval.type_embeddings_for_corpus(ids, params, ckpt.model_cfg)
            seen = []
            for toks in sentences:
                for tok in toks:
                    if tok not in seen:
                        seen.append(tok)
            for tok in seen:
                vec = table[vocab1.id(tok)]
                fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")
            print(f"wrote {len(seen)} type embeddings to {args.out}")
        else:
            for sid, row in enumerate(ids, start=1):
                vec = semeval.sentence_embedding(row, params, ckpt.model_cfg)
                fh.write(str(sid) + " " + " ".join(repr(float(v)) for v in vec) + "\n")
            print(f"wrote {len(ids)} sentence embeddings to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignvae",
        description="Bilingual word embeddings and alignments from parallel text.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dictionary corpus")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--v1", type=int, default=30, help="L1 vocabulary size")
    p.add_argument("--v2", type=int, default=30, help="L2 vocabulary size")
    p.add_argument("--pairs", type=int, default=3000)
    p.add_argument("--len", type=int, nargs=2, default=(3, 8), metavar=("LO", "HI"))
    p.add_argument("--shuffle", action="store_true", help="shuffle the L2 side")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--hierarchical", type=lambda v: _BOOL[v.lower()], default=None,
                   help="override the model.hierarchical config key")
    p.add_argument("--baseline", choices=["ibm1"], default=None,
                   help="train the IBM1 baseline instead of the joint model")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("align", help="predict alignments for parallel text")
    p.add_argument("--checkpoint", required=True,
                   help="model checkpoint, or table file with --baseline ibm1")
    p.add_argument("--baseline", choices=["ibm1"], default=None)
    p.add_argument("l1")
    p.add_argument("l2")
    p.add_argument("out")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("eval", help="aer | lexsub | wordsim")
    kinds = p.add_subparsers(dest="kind", required=True)
    q = kinds.add_parser("aer")
    q.add_argument("pred")
    q.add_argument("gold")
    q = kinds.add_parser("lexsub")
    q.add_argument("data")
    q.add_argument("--checkpoint", default=None)
    q.add_argument("--metric", choices=["kl", "cosine"], default="kl")
    q.add_argument("--reverse-kl", action="store_true",
                   help="rank by divergence from target to candidate")
    q.add_argument("--per-instance", default=None, help="write per-instance GAP here")
    q = kinds.add_parser("wordsim")
    q.add_argument("data")
    q.add_argument("--checkpoint", default=None)
    q.add_argument("--corpus", default=None, help="L1 text for type embeddings")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("embed", help="extract type or sentence embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=["type", "sentence"], required=True)
    p.add_argument("corpus", help="L1 text file")
    p.add_argument("out")
    p.set_defaults(fn=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except AlignvaeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
