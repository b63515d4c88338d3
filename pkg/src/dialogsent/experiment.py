"""Per-fold orchestration behind the CLI: train, fuse and report.

Layout under ``output_dir``::

    corpus/<name>.csv, corpus/audio/*.wav
    folds.json
    cache/mfcc/<utterance>.mf60
    runs/<modality>/<monitor>/foldNN/{config.json, history.csv, best.ckpt, test_report.json}
    runs/bimodal/<monitor>/foldNN/{config.json, forest.json, fused_train.*, test_report.json}
    report.json
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .audio_features import MfccConfig, featurize_many
from .corpus import Corpus, GeneratorConfig, generate_synthetic_corpus, load_manifest, save_manifest
from .errors import InputError, SpecError
from .fusion import Forest, ForestConfig, FusedVector, fused_matrix, write_fused
from .metrics import METRIC_NAMES, MetricsReport, aggregate_folds, evaluate
from .nets import (AcousticModelSpec, TextModelSpec, acoustic_preset, build_acoustic, build_text,
                   load_checkpoint, spec_from_dict)
from .splits import FoldAssignment, assign_folds, fold_view
from .text_features import EmbeddingConfig, embed_many, make_provider
from .trainer import MonitorCriterion, TrainConfig, predict, train, write_run

log = logging.getLogger(__name__)

MODALITIES = ("acoustic", "text", "bimodal")
FUSION_FIT_SPLITS = ("train", "validation", "train+validation")
TABLE_COLUMNS = (("WA", "wa"), ("Ng.R", "neg_recall"), ("Ps.R", "pos_recall"), ("Nt.R", "neu_recall"), ("UA", "ua"))


@dataclass
class ExperimentConfig:
    output_dir: str = "experiment"
    corpus: dict = field(default_factory=lambda: {"generator": {}})
    k_folds: int = 10
    folds: Optional[list] = None
    monitors: list = field(default_factory=lambda: ["UA"])
    modality: str = "acoustic"
    acoustic_model: Union[str, dict] = "switchboard"
    text_model: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)
    text_trainer: dict = field(default_factory=lambda: {"use_scheduler": False})
    mfcc: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=dict)
    embedding_table: Optional[str] = None
    forest: dict = field(default_factory=dict)
    fusion_fit: str = "train+validation"
    seed: int = 0

    def __post_init__(self):
        self.monitors = [MonitorCriterion(m).value for m in self.monitors]
        if not self.monitors:
            raise InputError("monitors must be non-empty")
        if self.k_folds < 3:
            raise InputError("k_folds must be at least 3")
        if self.modality not in MODALITIES:
            raise InputError(f"modality must be one of {MODALITIES}")
        if set(self.corpus) - {"generator", "manifest", "name"} or \
                ("generator" in self.corpus) == ("manifest" in self.corpus):
            raise InputError("corpus needs exactly one of 'generator' or 'manifest' (plus optional 'name')")
        if self.fusion_fit not in FUSION_FIT_SPLITS:
            raise InputError(f"fusion_fit must be one of {FUSION_FIT_SPLITS}")
        if self.folds is not None:
            bad = [f for f in self.folds if not 0 <= f < self.k_folds]
            if bad:
                raise InputError(f"folds out of range: {bad}")
        # surface config errors now rather than inside a worker
        self.generator_config()
        self.acoustic_spec()
        self.text_spec()
        self.train_config(MonitorCriterion.UA, "acoustic")
        self.train_config(MonitorCriterion.UA, "text")
        self.mfcc_config()
        self.embedding_config()
        self.forest_config()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown experiment config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def fold_list(self) -> list[int]:
        return list(range(self.k_folds)) if self.folds is None else sorted(self.folds)

    def corpus_name(self) -> str:
        return self.corpus.get("name", "synthetic")

    def generator_config(self) -> Optional[GeneratorConfig]:
        if "generator" not in self.corpus:
            return None
        return GeneratorConfig.from_dict(self.corpus["generator"])

    def manifest_path(self) -> Path:
        if "manifest" in self.corpus:
            return Path(self.corpus["manifest"])
        return self.out / "corpus" / f"{self.corpus_name()}.csv"

    def acoustic_spec(self) -> AcousticModelSpec:
        if isinstance(self.acoustic_model, str):
            return acoustic_preset(self.acoustic_model)
        return spec_from_dict({"type": "acoustic", **self.acoustic_model})

    def acoustic_preset_name(self) -> Optional[str]:
        return self.acoustic_model if isinstance(self.acoustic_model, str) else None

    def text_spec(self) -> TextModelSpec:
        return TextModelSpec(**self.text_model)

    def train_config(self, monitor: MonitorCriterion, modality: str) -> TrainConfig:
        opts = dict(self.trainer)
        if modality == "text":
            opts.update(self.text_trainer)
        opts["monitor"] = monitor
        return TrainConfig(**opts)

    def mfcc_config(self) -> MfccConfig:
        return MfccConfig(**self.mfcc)

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(**self.embedding)

    def forest_config(self) -> ForestConfig:
        opts = {"seed": self.seed, **self.forest}
        return ForestConfig(**opts)


def run_seed(global_seed: int, fold: int, modality: str) -> int:
    # shared by every monitor so criteria are compared from the same initialisation
    return int(np.random.SeedSequence([global_seed, fold, MODALITIES.index(modality)]).generate_state(1)[0])


def run_dir(cfg: ExperimentConfig, modality: str, monitor: str, fold: int) -> Path:
    return cfg.out / "runs" / modality / monitor / f"fold{fold:02d}"


# -- generate -------------------------------------------------------------------

def generate(cfg: ExperimentConfig) -> tuple[Corpus, Path]:
    gen = cfg.generator_config()
    if gen is None:
        raise InputError("corpus is a manifest; nothing to generate")
    corpus = generate_synthetic_corpus(gen, cfg.corpus_name())
    path = save_manifest(corpus, cfg.out / "corpus")
    return corpus, path


# -- data preparation -----------------------------------------------------------

class FoldData:
    """Labeled corpus, fold assignment and lazily computed modality inputs."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        path = cfg.manifest_path()
        if not path.is_file():
            raise FileNotFoundError(f"manifest {path} not found; run 'generate' first")
        self.corpus = load_manifest(path)
        self.by_id = self.corpus.by_id()
        self.assignment = self._assignment()
        self._acoustic = None
        self._provider = None

    def _assignment(self) -> FoldAssignment:
        path = self.cfg.out / "folds.json"
        if path.is_file():
            fa = FoldAssignment.load(path)
            if fa.k == self.cfg.k_folds and set(fa.fold_of_dialog) == set(self.corpus.dialogs()):
                return fa
        fa = assign_folds(self.corpus, self.cfg.k_folds, self.cfg.seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        fa.save(path)
        return fa

    def split(self, fold: int):
        view = fold_view(self.corpus, self.assignment, fold, (fold + 1) % self.cfg.k_folds)
        return tuple(sorted(ids) for ids in (view.train_ids, view.validation_ids, view.test_ids))

    def labels(self, ids) -> np.ndarray:
        return np.array([int(self.by_id[i].label) for i in ids], dtype=np.int64)

    def featurize_audio(self) -> dict:
        """MFCC matrices for every labeled utterance, read through the on-disk cache."""
        if self._acoustic is None:
            self._acoustic = featurize_many(self.corpus.labeled(), self.cfg.mfcc_config(),
                                            cache_dir=self.cfg.out / "cache" / "mfcc")
        return self._acoustic

    def acoustic_inputs(self, ids) -> np.ndarray:
        features = self.featurize_audio()
        return np.stack([features[i] for i in ids])

    def text_inputs(self, ids) -> np.ndarray:
        if self._provider is None:
            self._provider = make_provider(self.cfg.embedding_config(), self.cfg.embedding_table)
        return embed_many([list(self.by_id[i].transcript) for i in ids], self.cfg.embedding_config(),
                          self._provider)

    def inputs(self, modality: str, ids) -> np.ndarray:
        return self.acoustic_inputs(ids) if modality == "acoustic" else self.text_inputs(ids)


# -- train ------------------------------------------------------------------------

def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")


def train_one(cfg: ExperimentConfig, data: FoldData, modality: str, monitor: str, fold: int,
              force: bool = False) -> Optional[MetricsReport]:
    out = run_dir(cfg, modality, monitor, fold)
    if (out / "test_report.json").is_file() and not force:
        log.info("skip %s/%s/fold%02d (complete)", modality, monitor, fold)
        return None
    train_ids, val_ids, test_ids = data.split(fold)
    seed = run_seed(cfg.seed, fold, modality)
    x_tr = data.inputs(modality, train_ids)
    if modality == "acoustic":
        graph = build_acoustic(cfg.acoustic_spec(), (*x_tr.shape[1:], 1), seed)
        flat = x_tr.reshape(-1, x_tr.shape[-1]).astype(np.float64)
        graph.set_normalization(flat.mean(axis=0), flat.std(axis=0))
    else:
        graph = build_text(cfg.text_spec(), x_tr.shape[1:], seed)
    tcfg = replace(cfg.train_config(MonitorCriterion(monitor), modality), seed=seed)
    run = train(graph, (x_tr, data.labels(train_ids)),
                (data.inputs(modality, val_ids), data.labels(val_ids)), tcfg)
    rep = evaluate(data.labels(test_ids), predict(graph, data.inputs(modality, test_ids)))
    write_run(run, graph, out, {
        "experiment": cfg.to_dict(), "modality": modality, "monitor": monitor, "fold": fold,
        "validation_fold": (fold + 1) % cfg.k_folds, "train": tcfg.to_dict(),
        "model": graph.spec.to_dict(), "best_epoch": run.best_epoch, "best_value": run.best_value,
    })
    _write_json(out / "test_report.json", rep.to_dict())
    log.info("%s/%s/fold%02d: best epoch %d, test UA %.3f", modality, monitor, fold, run.best_epoch, rep.ua)
    return rep


def fuse_one(cfg: ExperimentConfig, data: FoldData, monitor: str, fold: int,
             force: bool = False) -> Optional[MetricsReport]:
    out = run_dir(cfg, "bimodal", monitor, fold)
    if (out / "test_report.json").is_file() and not force:
        log.info("skip bimodal/%s/fold%02d (complete)", monitor, fold)
        return None
    graphs = {}
    for modality in ("acoustic", "text"):
        ckpt = run_dir(cfg, modality, monitor, fold) / "best.ckpt"
        if not (ckpt.parent / "test_report.json").is_file():
            raise FileNotFoundError(
                f"no trained {modality} model for monitor {monitor}, fold {fold} ({ckpt}); "
                f"train the acoustic and text modalities first")
        graphs[modality] = load_checkpoint(ckpt)
    train_ids, val_ids, test_ids = data.split(fold)
    # forest rows never include the test fold; the validation fold is unseen by the network weights
    fit_ids = {"train": train_ids, "validation": val_ids,
               "train+validation": train_ids + val_ids}[cfg.fusion_fit]
    preset = cfg.acoustic_preset_name()

    def fused(ids):
        return fused_matrix(graphs["acoustic"], graphs["text"], data.acoustic_inputs(ids),
                            data.text_inputs(ids), preset)

    x_tr, y_tr = fused(fit_ids), data.labels(fit_ids)
    forest = Forest.fit(x_tr, y_tr, cfg.forest_config())
    rep = evaluate(data.labels(test_ids), forest.predict(fused(test_ids)))
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"experiment": cfg.to_dict(), "modality": "bimodal", "monitor": monitor,
                                      "fold": fold, "forest": asdict(cfg.forest_config())})
    forest.save(out / "forest.json")
    write_fused(out / "fused_train", [FusedVector(x_tr[i], uid, int(y_tr[i])) for i, uid in enumerate(fit_ids)])
    _write_json(out / "test_report.json", rep.to_dict())
    log.info("bimodal/%s/fold%02d: test UA %.3f", monitor, fold, rep.ua)
    return rep


def _job(args):
    cfg_dict, modality, monitor, fold, force = args
    torch.set_num_threads(1)
    cfg = ExperimentConfig.from_dict(cfg_dict)
    data = FoldData(cfg)
    if modality == "bimodal":
        return fuse_one(cfg, data, monitor, fold, force)
    return train_one(cfg, data, modality, monitor, fold, force)


def run_tasks(cfg: ExperimentConfig, modality: str, force: bool = False, jobs: int = 1) -> None:
    tasks = [(cfg.to_dict(), modality, m, f, force) for m in cfg.monitors for f in cfg.fold_list]
    if jobs > 1:
        data = FoldData(cfg)
        if modality != "text":
            data.featurize_audio()  # fill the feature cache once, before forking
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_job, tasks))
        return
    torch.set_num_threads(1)
    data = FoldData(cfg)
    for _, mod, monitor, fold, frc in tasks:
        if mod == "bimodal":
            fuse_one(cfg, data, monitor, fold, frc)
        else:
            train_one(cfg, data, mod, monitor, fold, frc)


def train_modality(cfg: ExperimentConfig, force: bool = False, jobs: int = 1) -> None:
    run_tasks(cfg, cfg.modality, force, jobs)


# -- report -------------------------------------------------------------------------

def collect(cfg: ExperimentConfig) -> dict:
    """{modality: {monitor: aggregated report dict or None}} over the configured folds."""
    out = {}
    for modality in MODALITIES:
        base = cfg.out / "runs" / modality
        if not base.is_dir():
            continue
        rows = {}
        for monitor in cfg.monitors:
            reports = []
            for fold in cfg.fold_list:
                path = run_dir(cfg, modality, monitor, fold) / "test_report.json"
                if not path.is_file():
                    reports = None
                    break
                reports.append(MetricsReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
            if reports:
                agg = aggregate_folds(reports).to_dict()
                agg["folds"] = len(reports)
                rows[monitor] = agg
            else:
                rows[monitor] = None
        out[modality] = rows
    return out


def render_table(title: str, rows: dict) -> str:
    head = f"{'Monitoring criteria':<20}" + "".join(f"{c:>7}" for c, _ in TABLE_COLUMNS)
    lines = [title, head, "-" * len(head)]
    for monitor, rep in rows.items():
        if rep is None:
            cells = "".join(f"{'--':>7}" for _ in TABLE_COLUMNS)
        else:
            cells = "".join(f"{100 * rep[key]:>7.1f}" for _, key in TABLE_COLUMNS)
        lines.append(f"{monitor:<20}{cells}")
    return "\n".join(lines)


def make_report(cfg: ExperimentConfig) -> tuple[dict, str]:
    results = collect(cfg)
    if not results:
        raise FileNotFoundError(f"no completed runs under {cfg.out / 'runs'}")
    payload = {"k_folds": cfg.k_folds, "folds": cfg.fold_list, "metrics": list(METRIC_NAMES),
               "results": results}
    _write_json(cfg.out / "report.json", payload)
    text = "\n\n".join(render_table(f"[{m}]", rows) for m, rows in results.items())
    return payload, text
