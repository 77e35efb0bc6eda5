"""Command-line interface: ``awesim <subcommand> [options]``.

Every subcommand accepts the global flags ``--config``, ``--seed``,
``--out`` and ``--jobs``. Exit status is 0 on success, 1 when a stage or
experiment cell failed and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, abx, caernn, corpus as corpus_mod, experiment, probes, synthetic
from .caernn import ModelConfig, TrainConfig

log = logging.getLogger("awesim")


def _ratio(text: str) -> tuple:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must look like 90:10, got {text!r}")
    return a, b


def _pair(text: str) -> tuple:
    parts = tuple(p for p in text.split(",") if p)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated items, got {text!r}")
    return parts


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")) if path else {}


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")


# -- training sets ----------------------------------------------------------

def _load_trainset(path, eager=False):
    doc = _read_json(path)
    base = Path(path).parent
    by_id = {}
    for m in doc["manifests"]:
        for t in corpus_mod.load_manifest(base / m, eager=eager).tokens:
            by_id[t.token_id] = t
    toks = tuple(by_id[i] for i in doc["pretrain_tokens"])
    pairs = tuple(corpus_mod.TrainingPair(by_id[a], by_id[b]) for a, b in doc["pairs"])
    return corpus_mod.TrainingSet(toks, pairs, tuple(doc["ratio"])), doc


def _model_and_train(args):
    cfg = _read_json(args.config)
    seed = args.seed if args.seed is not None else cfg.get("train", {}).get("seed", 0)
    train = {k: v for k, v in cfg.get("train", {}).items() if k != "seed"}
    return ModelConfig(**cfg.get("model", {})), TrainConfig(seed=seed, **train)


# -- subcommands ------------------------------------------------------------

def cmd_synth(args):
    preset = synthetic.SynthPreset(**_read_json(args.config))
    if args.seed is not None:
        preset.seed = args.seed
    specs = synthetic.two_language_specs(preset)
    out = _out(args)
    written = {}
    for li, lang in enumerate(sorted(specs)):
        for k, split in enumerate(("train", "test")):
            c = corpus_mod.synth_corpus(specs[lang][split], [preset.seed, 2 * li + k])
            path = out / f"{lang}_{split}.jsonl"
            corpus_mod.write_manifest(c, path, out / "features")
            written[f"{lang}_{split}"] = {"manifest": str(path), "tokens": len(c),
                                          "duration": c.total_duration}
    _emit(written)
    return 0


def cmd_prepare(args):
    out = _out(args)
    a = corpus_mod.load_manifest(args.manifest_a, eager=args.eager_features)
    b = corpus_mod.load_manifest(args.manifest_b, eager=args.eager_features) if args.manifest_b else None
    if args.match and b is not None:
        a, b = corpus_mod.match_subsets(a, b, seed=args.seed or 0)
    ts = corpus_mod.mix_bilingual(a, b, args.ratio, args.tokens, args.pairs, args.seed or 0,
                                  cross_speaker_only=args.cross_speaker_only)
    manifests = [Path(args.manifest_a).resolve()] + ([Path(args.manifest_b).resolve()] if b else [])
    doc = {"ratio": list(ts.ratio),
           "manifests": [str(m) for m in manifests],
           "pretrain_tokens": [t.token_id for t in ts.pretrain_tokens],
           "pairs": [[p.input.token_id, p.target.token_id] for p in ts.pairs]}
    path = out / "trainset.json"
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    _emit({"trainset": str(path), "tokens": len(ts.pretrain_tokens), "pairs": len(ts.pairs)})
    return 0


def cmd_pretrain(args):
    ts, _ = _load_trainset(args.trainset, args.eager_features)
    mcfg, tcfg = _model_and_train(args)
    p = caernn.pretrain_autoencoder(ts, tcfg, mcfg)
    out = _out(args)
    caernn.save_checkpoint(p, out / "pretrain.awem")
    caernn.write_training_log(p, tcfg, out / "pretrain_log.json", {"stage": "pretrain"})
    _emit({"checkpoint": str(out / "pretrain.awem"), "epoch_loss": p.history["pretrain"]})
    return 0


def cmd_train(args):
    ts, _ = _load_trainset(args.trainset, args.eager_features)
    _, tcfg = _model_and_train(args)
    p = caernn.load_checkpoint(args.init)
    p = caernn.train_cae(p, ts, tcfg)
    out = _out(args)
    caernn.save_checkpoint(p, out / "model.awem")
    caernn.write_training_log(p, tcfg, out / "train_log.json", {"stage": "train"})
    _emit({"checkpoint": str(out / "model.awem"), "epoch_loss": p.history["train"]})
    return 0


def cmd_embed(args):
    p = caernn.load_checkpoint(args.model)
    c = corpus_mod.load_manifest(args.manifest, eager=args.eager_features)
    vecs = caernn.encode_many(p, [t.features for t in c.tokens])
    path = _out(args) / "embeddings.awee"
    sidecar = caernn.write_embeddings(path, [t.token_id for t in c.tokens], vecs)
    _emit({"embeddings": str(path), "ids": str(sidecar), "count": len(vecs), "dim": vecs.shape[1]})
    return 0


def cmd_abx(args):
    p = caernn.load_checkpoint(args.model)
    c = corpus_mod.load_manifest(args.manifest, eager=args.eager_features)
    seed = args.seed or 0
    ds = args.distinct_speakers
    if args.kind == "phone":
        if not args.contrast:
            raise ValueError("--contrast is required for the phone task")
        trips = abx.sample_phone_triplets(c, args.contrast, args.n, seed, distinct_speakers=ds)
    elif args.kind == "minimal_pair":
        pairs = args.pair or (experiment.contrast_minimal_pairs(c, args.contrast) if args.contrast else [])
        if not pairs:
            raise ValueError("give --pair w1,w2 (repeatable) or a --contrast with minimal pairs")
        trips = []
        for k, pair in enumerate(pairs):
            trips += abx.sample_minimal_pair_triplets(c, pair, args.n, [seed, k], distinct_speakers=ds)
    else:
        if args.distance is None:
            raise ValueError("--distance is required for the edit_distance task")
        trips = abx.sample_edit_distance_triplets(c, args.distance, args.n, seed, distinct_speakers=ds)
    res = abx.abx_error_rate(trips, lambda xs: caernn.encode_many(p, xs))
    out = _out(args)
    abx.save_triplets(trips, out / f"abx_{args.kind}.triplets.jsonl")
    _emit(res.to_json(args.kind), out / f"abx_{args.kind}.json")
    return 0


def cmd_probe(args):
    p = caernn.load_checkpoint(args.model)
    vecs, labels = [], []
    seed = args.seed or 0
    for li, m in enumerate((args.manifest_a, args.manifest_b)):
        c = corpus_mod.load_manifest(m, eager=args.eager_features)
        rng = np.random.default_rng([seed, 100 + li])
        pick = np.sort(rng.permutation(len(c))[:args.n])
        vecs.append(caernn.encode_many(p, [c.tokens[i].features for i in pick]))
        labels += [c.language] * len(pick)
    s = probes.LabeledEmbeddingSet(np.concatenate(vecs), labels, split_seed=seed)
    res = probes.train_language_probe(s, l2=args.l2)
    out = _out(args)
    if args.dump_weights:
        np.save(out / "probe_weights.npy", np.append(res.weights, res.bias))
    _emit(res.to_json(), out / "probe.json")
    return 0


def _experiment_config(args):
    if not args.config:
        raise ValueError("--config is required")
    cfg = experiment.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.cross_speaker_only:
        cfg.cross_speaker_only = True
    if args.distinct_speakers:
        cfg.distinct_speakers = True
    return cfg


def cmd_run(args):
    cfg = _experiment_config(args)
    outcome = experiment.run_experiment(cfg, _out(args), jobs=args.jobs, figures=not args.no_figures)
    for c in outcome.failed:
        log.error("cell %s failed: %s", c["cell"], c["error"])
    _emit({"cells": len(outcome.cells), "failed": [c["cell"] for c in outcome.failed],
           "report": str(outcome.report_dir)})
    return 1 if outcome.failed else 0


def cmd_report(args):
    cfg = _experiment_config(args)
    rep = experiment.write_report(cfg, _out(args), figures=not args.no_figures)
    _emit({"report": str(rep), "files": sorted(p.name for p in rep.iterdir())})
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="JSON configuration file")
    g.add_argument("--seed", type=int, metavar="N", help="random seed (overrides the config)")
    g.add_argument("--out", metavar="DIR", help="output directory (default: current directory)")
    g.add_argument("--jobs", type=int, default=1, metavar="K", help="parallel worker processes")
    g.add_argument("--eager-features", action="store_true", help="load all features up front")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="awesim", description=__doc__.splitlines()[0],
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="write the synthetic two-language corpora as manifests (--config: preset)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", parents=[common], help="build a (mixed) training set")
    p.add_argument("--manifest-a", required=True)
    p.add_argument("--manifest-b")
    p.add_argument("--ratio", type=_ratio, default=(100, 0))
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--match", action="store_true", help="match speakers and durations first")
    p.add_argument("--cross-speaker-only", action="store_true")
    p.set_defaults(func=cmd_prepare)

    for name, func, helptext in (("pretrain", cmd_pretrain, "autoencoder pretraining"),
                                 ("train", cmd_train, "correspondence training")):
        p = sub.add_parser(name, parents=[common], help=f"{helptext} (--config: model/train JSON)")
        p.add_argument("--trainset", required=True)
        if name == "train":
            p.add_argument("--init", required=True, help="pretrained checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("embed", parents=[common], help="embed every token of a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("abx", parents=[common], help="run one ABX task")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=experiment.TASK_KINDS, required=True)
    p.add_argument("--contrast", type=_pair)
    p.add_argument("--pair", type=_pair, action="append")
    p.add_argument("--distance", type=int)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--distinct-speakers", action="store_true")
    p.set_defaults(func=cmd_abx)

    p = sub.add_parser("probe", parents=[common], help="language-identity probe")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest-a", required=True)
    p.add_argument("--manifest-b", required=True)
    p.add_argument("--n", type=int, default=5000, help="tokens per language")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--dump-weights", action="store_true")
    p.set_defaults(func=cmd_probe)

    for name, func, helptext in (("run", cmd_run, "run a full experiment"),
                                 ("report", cmd_report, "rebuild report CSVs and figures")):
        p = sub.add_parser(name, parents=[common], help=f"{helptext} (--config: experiment JSON)")
        p.add_argument("--no-figures", action="store_true", help="write CSVs only")
        p.add_argument("--cross-speaker-only", action="store_true")
        p.add_argument("--distinct-speakers", action="store_true")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"awesim {args.command}: error: {e}", file=sys.stderr)
        return 2
    except caernn.TrainingDiverged as e:
        print(f"awesim {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
