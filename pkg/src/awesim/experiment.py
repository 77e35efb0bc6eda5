"""Declarative ratio-sweep experiments: train, evaluate, aggregate.

An experiment is one JSON document (see README for the schema). Every
(ratio, seed) cell gets its own directory under ``<out>/cells`` holding the
pretraining and final checkpoints, training logs and one JSON result per
task, so an interrupted sweep resumes where it stopped. Report assembly
reads only those files.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import multiprocessing
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import abx, caernn, corpus as corpus_mod, probes, synthetic
from .caernn import ModelConfig, TrainConfig

log = logging.getLogger(__name__)

TASK_KINDS = ("phone", "minimal_pair", "edit_distance")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """One ABX task evaluated on a language's test corpus.

    ``phone`` needs ``contrast``; ``minimal_pair`` takes explicit ``pairs``
    or derives them from ``contrast``; ``edit_distance`` yields one result
    per entry of ``distances``.
    """

    id: str
    kind: str
    language: str
    contrast: tuple | None = None
    pairs: tuple | None = None
    distances: tuple = (1, 2, 3, 4)
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task {self.id!r}: kind must be one of {TASK_KINDS}")
        if self.kind == "phone" and not self.contrast:
            raise ConfigError(f"task {self.id!r}: phone task needs a contrast")
        if self.kind == "minimal_pair" and not (self.contrast or self.pairs):
            raise ConfigError(f"task {self.id!r}: minimal_pair task needs pairs or a contrast")
        if self.n < 1:
            raise ConfigError(f"task {self.id!r}: n must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        if d.get("contrast") is not None:
            d["contrast"] = tuple(d["contrast"])
        if d.get("pairs") is not None:
            d["pairs"] = tuple(tuple(p) for p in d["pairs"])
        if "distances" in d:
            d["distances"] = tuple(int(x) for x in d["distances"])
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"task {d.get('id')!r}: unknown keys {sorted(unknown)}")
        return cls(**d)

    def keys(self) -> list:
        """``(result_key, edit_distance)`` for every result this task produces."""
        if self.kind == "edit_distance":
            return [(f"{self.id}_d{d}", d) for d in self.distances]
        return [(self.id, None)]


@dataclass
class ExperimentConfig:
    data: dict
    ratios: list
    budgets: dict
    seeds: list
    tasks: list
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    cross_speaker_only: bool = False
    distinct_speakers: bool = False
    n_perm: int = 10_000
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        self.ratios = [tuple(int(v) for v in r) for r in self.ratios]
        for r in self.ratios:
            if len(r) != 2 or sum(r) != 100 or min(r) < 0:
                raise ConfigError(f"ratio {list(r)} must be two shares summing to 100")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.ratios)) != len(self.ratios):
            raise ConfigError("duplicate ratios")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate task ids")
        for key in ("tokens", "pairs"):
            if int(self.budgets.get(key, 0)) < 1:
                raise ConfigError(f"budgets.{key} must be a positive integer")
        langs = self.languages
        if not 1 <= len(langs) <= 2:
            raise ConfigError("one or two languages are required")
        if len(langs) == 1 and any(r != (100, 0) for r in self.ratios):
            raise ConfigError("a single-language experiment only supports the ratio (100, 0)")
        for t in self.tasks:
            if t.language not in langs:
                raise ConfigError(f"task {t.id!r} uses unknown language {t.language!r}")
        self.train_config(self.seeds[0])

    @property
    def languages(self) -> list:
        if "synthetic" in self.data:
            return list(self.data.get("languages", ["A", "B"]))
        if "manifests" in self.data:
            return list(self.data["manifests"])
        raise ConfigError("data needs either 'synthetic' or 'manifests'")

    def train_config(self, seed) -> TrainConfig:
        return TrainConfig(seed=int(seed), **self.train)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known - {"name"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d.pop("name", None)
        d["tasks"] = [TaskSpec.from_dict(t) for t in d.get("tasks", [])]
        d["model"] = ModelConfig(**d.get("model", {}))
        return cls(base_dir=Path(base_dir), **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(doc, base_dir=path.parent)


@dataclass(frozen=True)
class ReportRow:
    ratio: tuple
    task_id: str
    edit_distance: int | None
    seed: int
    error_rate: float

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 100.0:
            raise ValueError(f"error rate {self.error_rate} outside [0, 100]")

    @property
    def ratio_label(self) -> str:
        return f"{self.ratio[0]}:{self.ratio[1]}"


# -- data -------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> dict:
    """``{language: {"train": Corpus, "test": Corpus}}`` for the configured languages."""
    data = cfg.data
    out = {}
    if "synthetic" in data:
        preset = synthetic.SynthPreset(**data["synthetic"])
        specs = synthetic.two_language_specs(preset)
        for lang in cfg.languages:
            if lang not in specs:
                raise ConfigError(f"synthetic data has languages A and B, not {lang!r}")
            # stream index fixed per (language, split), independent of selection
            li = sorted(specs).index(lang)
            out[lang] = {split: corpus_mod.synth_corpus(specs[lang][split], [preset.seed, 2 * li + k])
                         for k, split in enumerate(("train", "test"))}
        return out
    eager = bool(data.get("eager_features", False))
    for lang, paths in data["manifests"].items():
        out[lang] = {split: corpus_mod.load_manifest(cfg.base_dir / paths[split], eager=eager)
                     for split in ("train", "test")}
    if data.get("match") and len(out) == 2:
        a, b = cfg.languages
        out[a]["train"], out[b]["train"] = corpus_mod.match_subsets(
            out[a]["train"], out[b]["train"], seed=int(data.get("match_seed", 0)))
    return out


def contrast_minimal_pairs(corpus, contrast) -> list:
    """Word-type pairs whose phone strings differ only by ``contrast`` at one position."""
    p1, p2 = contrast
    phones = {w: toks[0].phones for w, toks in corpus.by_type().items()}
    index = {ph: w for w, ph in phones.items()}
    pairs = []
    for w, ph in sorted(phones.items()):
        for i, s in enumerate(ph):
            if s == p1:
                other = index.get(ph[:i] + (p2,) + ph[i + 1:])
                if other is not None:
                    pairs.append((w, other))
    return pairs


def build_triplets(cfg: ExperimentConfig, data: dict) -> dict:
    """Sample every task's triplets once; they are shared by all cells."""
    out = {}
    for t in cfg.tasks:
        test = data[t.language]["test"]
        ds = cfg.distinct_speakers
        if t.kind == "phone":
            out[t.id] = abx.sample_phone_triplets(test, t.contrast, t.n, t.seed, distinct_speakers=ds)
        elif t.kind == "minimal_pair":
            pairs = t.pairs or contrast_minimal_pairs(test, t.contrast)
            if not pairs:
                raise ConfigError(f"task {t.id!r}: no minimal pairs for contrast {t.contrast}")
            trips = []
            for k, pair in enumerate(pairs):
                trips += abx.sample_minimal_pair_triplets(test, pair, t.n, [t.seed, k],
                                                          distinct_speakers=ds)
            out[t.id] = trips
        else:
            for key, d in t.keys():
                out[key] = abx.sample_edit_distance_triplets(test, d, t.n, [t.seed, d],
                                                             distinct_speakers=ds)
    return out


# -- cells ------------------------------------------------------------------

def cell_name(ratio, seed) -> str:
    return f"ratio{ratio[0]:03d}-{ratio[1]:03d}_seed{seed}"


def _write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def _load_stage(ckpt: Path, log_path: Path):
    p = caernn.load_checkpoint(ckpt)
    doc = json.loads(log_path.read_text(encoding="utf-8"))
    p.history = {"pretrain": list(doc["pretrain_epoch_loss"]),
                 "train": list(doc["train_epoch_loss"])}
    return p


def training_set_for(cfg: ExperimentConfig, data: dict, ratio, seed):
    langs = cfg.languages
    a = data[langs[0]]["train"]
    b = data[langs[1]]["train"] if len(langs) > 1 else None
    return corpus_mod.mix_bilingual(a, b, ratio, int(cfg.budgets["tokens"]),
                                    int(cfg.budgets["pairs"]), seed,
                                    cross_speaker_only=cfg.cross_speaker_only)


def probe_embeddings(cfg: ExperimentConfig, data: dict, params, seed):
    n = int(cfg.probe.get("n_per_language", 5000))
    vecs, labels = [], []
    for li, lang in enumerate(cfg.languages):
        toks = data[lang]["test"].tokens
        rng = np.random.default_rng([int(seed), 100 + li])
        pick = np.sort(rng.permutation(len(toks))[:n])
        vecs.append(caernn.encode_many(params, [toks[i].features for i in pick]))
        labels += [lang] * len(pick)
    return probes.LabeledEmbeddingSet(np.concatenate(vecs), labels, split_seed=int(seed))


def run_cell(cfg: ExperimentConfig, data: dict, triplets: dict, ratio, seed, out_dir) -> dict:
    """Train and evaluate one (ratio, seed) cell, reusing finished stages.

    Returns a summary of what was (re)computed.
    """
    cell = Path(out_dir) / "cells" / cell_name(ratio, seed)
    (cell / "results").mkdir(parents=True, exist_ok=True)
    done = {"cell": cell.name, "pretrained": False, "trained": False, "evaluated": [],
            "probe": False}
    tcfg = cfg.train_config(seed)
    final, final_log = cell / "model.awem", cell / "train_log.json"
    pre, pre_log = cell / "pretrain.awem", cell / "pretrain_log.json"
    params = None
    if final.exists() and final_log.exists():
        params = _load_stage(final, final_log)
    else:
        ts = training_set_for(cfg, data, ratio, seed)
        if pre.exists() and pre_log.exists():
            params = _load_stage(pre, pre_log)
        else:
            params = caernn.pretrain_autoencoder(ts, tcfg, cfg.model)
            caernn.save_checkpoint(params, pre)
            caernn.write_training_log(params, tcfg, pre_log, {"ratio": list(ratio), "stage": "pretrain"})
            done["pretrained"] = True
        params = caernn.train_cae(params, ts, tcfg)
        caernn.save_checkpoint(params, final)
        caernn.write_training_log(params, tcfg, final_log, {"ratio": list(ratio), "stage": "train"})
        done["trained"] = True

    embed = lambda xs: caernn.encode_many(params, xs)  # noqa: E731
    for t in cfg.tasks:
        for key, d in t.keys():
            path = cell / "results" / f"{key}.json"
            if path.exists():
                continue
            res = abx.abx_error_rate(triplets[key], embed)
            doc = res.to_json(key)
            doc.update(task_id=t.id, edit_distance=d, ratio=list(ratio), seed=int(seed))
            _write_json(path, doc)
            done["evaluated"].append(key)

    if cfg.probe.get("enabled") and len(cfg.languages) == 2:
        path = cell / "probe.json"
        if not path.exists():
            s = probe_embeddings(cfg, data, params, seed)
            res = probes.train_language_probe(s, l2=float(cfg.probe.get("l2", 1e-4)))
            doc = res.to_json()
            doc.update(ratio=list(ratio), seed=int(seed))
            _write_json(path, doc)
            done["probe"] = True
    return done


# -- driver -----------------------------------------------------------------

_SHARED: dict = {}


def _cell_worker(job):
    ratio, seed, out_dir = job
    cell = Path(out_dir) / "cells" / cell_name(ratio, seed)
    failed = cell / "FAILED.txt"
    try:
        if failed.exists():
            failed.unlink()
        return run_cell(_SHARED["cfg"], _SHARED["data"], _SHARED["triplets"], ratio, seed, out_dir)
    except Exception as e:  # a failing cell must not stop the sweep
        cell.mkdir(parents=True, exist_ok=True)
        failed.write_text(traceback.format_exc(), encoding="utf-8")
        log.error("cell %s failed: %s", cell.name, e)
        return {"cell": cell.name, "error": f"{type(e).__name__}: {e}"}


@dataclass
class ExperimentOutcome:
    cells: list
    report_dir: Path | None

    @property
    def failed(self) -> list:
        return [c for c in self.cells if "error" in c]


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1, report: bool = True,
                   figures: bool = True) -> ExperimentOutcome:
    """Run every (ratio, seed) cell, then assemble the report.

    Cells run in order, or in ``jobs`` forked worker processes. A failed
    cell leaves ``FAILED.txt`` in its directory; the others still run and
    the report covers whatever completed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    triplets = build_triplets(cfg, data)
    tdir = out_dir / "tasks"
    tdir.mkdir(exist_ok=True)
    for key, trips in triplets.items():
        abx.save_triplets(trips, tdir / f"{key}.jsonl")
    _SHARED.update(cfg=cfg, data=data, triplets=triplets)
    jobs_list = [(r, s, str(out_dir)) for r in cfg.ratios for s in cfg.seeds]
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs) as pool:
            cells = pool.map(_cell_worker, jobs_list, chunksize=1)
    else:
        cells = [_cell_worker(j) for j in jobs_list]
    report_dir = write_report(cfg, out_dir, figures=figures) if report else None
    return ExperimentOutcome(cells, report_dir)


# -- report -----------------------------------------------------------------

def collect_rows(cfg: ExperimentConfig, out_dir) -> list:
    rows = []
    for r in cfg.ratios:
        for s in cfg.seeds:
            cell = Path(out_dir) / "cells" / cell_name(r, s) / "results"
            for t in cfg.tasks:
                for key, d in t.keys():
                    path = cell / f"{key}.json"
                    if path.exists():
                        doc = json.loads(path.read_text(encoding="utf-8"))
                        rows.append(ReportRow(r, t.id, d, int(s), float(doc["error_rate"])))
    return rows


def collect_probe_results(cfg: ExperimentConfig, out_dir) -> list:
    out = []
    for r in cfg.ratios:
        for s in cfg.seeds:
            path = Path(out_dir) / "cells" / cell_name(r, s) / "probe.json"
            if path.exists():
                out.append(json.loads(path.read_text(encoding="utf-8")))
    return out


def _group_key(row: ReportRow):
    x = row.edit_distance if row.edit_distance is not None else row.task_id
    return row.ratio, x


def emit_figure_data(rows) -> dict:
    """Per task id, ``{ratio, x, mean_error, se, n}`` records aggregated over seeds.

    ``x`` is the edit distance for edit-distance tasks and the task id
    otherwise. Group order follows first appearance in ``rows``.
    """
    tables = {}
    for task_id in dict.fromkeys(r.task_id for r in rows):
        groups = {}
        for r in rows:
            if r.task_id == task_id:
                groups.setdefault(_group_key(r), []).append(r.error_rate)
        stats = probes.mean_se(groups)
        tables[task_id] = [{"ratio": f"{ratio[0]}:{ratio[1]}", "x": x, "mean_error": m, "se": se,
                            "n": len(groups[(ratio, x)])}
                           for (ratio, x), (m, se) in stats.items()]
    return tables


def compare_ratios(rows, n_perm: int = 10_000, seed: int = 0) -> list:
    """Permutation tests between every two ratios, per task and x, over seeds."""
    out = []
    for task_id in dict.fromkeys(r.task_id for r in rows):
        groups = {}
        for r in rows:
            if r.task_id == task_id:
                groups.setdefault(_group_key(r), []).append(r.error_rate)
        xs = list(dict.fromkeys(x for _, x in groups))
        ratios = list(dict.fromkeys(ratio for ratio, _ in groups))
        for x in xs:
            for r1, r2 in itertools.combinations(ratios, 2):
                g1, g2 = groups.get((r1, x)), groups.get((r2, x))
                if not g1 or not g2:
                    continue
                res = probes.permutation_test(g1, g2, n_perm=n_perm, seed=seed)
                out.append({"task_id": task_id, "x": x, "ratio_1": f"{r1[0]}:{r1[1]}",
                            "ratio_2": f"{r2[0]}:{r2[1]}", "mean_1": float(np.mean(g1)),
                            "mean_2": float(np.mean(g2)), "p_value": res.p_value,
                            "exact": res.exact, "degenerate": res.degenerate,
                            "n_perm": res.n_perm,
                            "test": "two-sided permutation test on the mean difference"})
    return out


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return "" if v is None else str(v)


def to_csv(records: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


FIGURE_COLUMNS = ["ratio", "x", "mean_error", "se", "n"]


def write_report(cfg: ExperimentConfig, out_dir, figures: bool = True) -> Path:
    """Write CSV tables (and PNG figures) under ``<out_dir>/report``."""
    out_dir = Path(out_dir)
    rep = out_dir / "report"
    rep.mkdir(parents=True, exist_ok=True)
    rows = collect_rows(cfg, out_dir)
    row_recs = [{"ratio": r.ratio_label, "task_id": r.task_id, "edit_distance": r.edit_distance,
                 "seed": r.seed, "error_rate": r.error_rate} for r in rows]
    (rep / "rows.csv").write_text(
        to_csv(row_recs, ["ratio", "task_id", "edit_distance", "seed", "error_rate"]), encoding="utf-8")
    tables = emit_figure_data(rows) if rows else {}
    for task_id, recs in tables.items():
        (rep / f"figure_{task_id}.csv").write_text(to_csv(recs, FIGURE_COLUMNS), encoding="utf-8")
    comps = compare_ratios(rows, n_perm=cfg.n_perm) if rows else []
    (rep / "comparisons.csv").write_text(
        to_csv(comps, ["task_id", "x", "ratio_1", "ratio_2", "mean_1", "mean_2", "p_value",
                       "exact", "degenerate", "n_perm", "test"]), encoding="utf-8")
    probe_docs = collect_probe_results(cfg, out_dir)
    if probe_docs:
        recs = [{"ratio": f"{d['ratio'][0]}:{d['ratio'][1]}", "seed": d["seed"],
                 "accuracy": d["accuracy"], "n_train": d["n_train"], "n_test": d["n_test"]}
                for d in probe_docs]
        (rep / "probe.csv").write_text(
            to_csv(recs, ["ratio", "seed", "accuracy", "n_train", "n_test"]), encoding="utf-8")
        groups = {}
        for rec in recs:
            groups.setdefault(rec["ratio"], []).append(rec["accuracy"])
        summary = [{"ratio": k, "mean_accuracy": m, "se": se, "n": len(groups[k])}
                   for k, (m, se) in probes.mean_se(groups).items()]
        (rep / "probe_summary.csv").write_text(
            to_csv(summary, ["ratio", "mean_accuracy", "se", "n"]), encoding="utf-8")
    if figures and tables:
        from .report import render_figures
        render_figures(tables, rep, probe_docs)
    return rep


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "data": cfg.data, "ratios": [list(r) for r in cfg.ratios], "budgets": cfg.budgets,
        "seeds": list(cfg.seeds), "model": asdict(cfg.model), "train": cfg.train,
        "probe": cfg.probe, "cross_speaker_only": cfg.cross_speaker_only,
        "distinct_speakers": cfg.distinct_speakers, "n_perm": cfg.n_perm,
        "tasks": [{k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(t).items()
                   if v is not None} for t in cfg.tasks],
    }
    return d
