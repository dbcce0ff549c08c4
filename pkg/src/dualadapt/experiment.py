"""End-to-end synthetic experiment: pre-train, adapt, track, report."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .data import TrainingSampler
from .evaluate import EvalReport, evaluate
from .model import Model, ModelConfig, assemble_model, freeze_partition
from .params import ParamStore
from .synth import SynthConfig, SyntheticSequence, generate_sequence
from .tracker import track
from .train import AdamWState, lr_at, pretrain_foundation, train_step

# toggles applied on top of the main model config
VARIANTS: dict[str, dict[str, Any]] = {
    "no_stma": {"use_stma": False},
    "no_shallow": {"use_shallow": False},
    "no_deep": {"use_deep": False},
    "T1": {"memory_size": 1},
}


@dataclass
class DataConfig:
    train_sequences: int = 24
    train_length: int = 60
    train_seed: int = 1000
    pretrain_sequences: int = 24
    pretrain_seed: int = 5000
    eval_sequences: int = 24
    eval_length: int = 60
    eval_seed: int = 9000
    eval_lead_event: str | None = "darkness"


@dataclass
class PhaseConfig:
    steps: int = 800
    lr: float = 4e-4
    batch_size: int = 8
    weight_decay: float = 1e-4
    schedule: str = "tenth"
    event_fraction: float = 0.6


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/desk"
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PhaseConfig = field(default_factory=lambda: PhaseConfig(steps=600, event_fraction=0.0))
    train: PhaseConfig = field(default_factory=PhaseConfig)
    variants: list[str] = field(default_factory=list)
    strategy: str = "uniform"
    log_frames: bool = True

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.synth, dict):
            self.synth = SynthConfig(**self.synth)
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        if isinstance(self.pretrain, dict):
            self.pretrain = PhaseConfig(**self.pretrain)
        if isinstance(self.train, dict):
            self.train = PhaseConfig(**self.train)
        self.variants = list(self.variants)
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; known: {sorted(VARIANTS)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "model": self.model.to_dict(),
            "synth": self.synth.to_dict(),
            "data": asdict(self.data),
            "pretrain": asdict(self.pretrain),
            "train": asdict(self.train),
            "variants": list(self.variants),
            "strategy": self.strategy,
            "log_frames": self.log_frames,
        }


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return ExperimentConfig(**raw)


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


class MetricsLog:
    """Line-delimited JSON records, one per step or frame."""

    def __init__(self, path: Path | None):
        self._fh = open(path, "w") if path is not None else None
        self.records: list[dict] = []

    def __call__(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


@dataclass
class ExperimentResult:
    adapter: EvalReport
    baseline: EvalReport
    variants: dict[str, EvalReport] = field(default_factory=dict)
    model: Model | None = None

    def __iter__(self):
        yield self.adapter
        yield self.baseline

    def rows(self) -> dict[str, EvalReport]:
        return {"adapter": self.adapter, "baseline": self.baseline, **self.variants}


def make_sequences(count: int, length: int, seed: int, config: SynthConfig) -> list[SyntheticSequence]:
    return [generate_sequence(seed + i, length, config) for i in range(count)]


def fit_adapters(config: ModelConfig, foundation: dict[str, np.ndarray], sampler: TrainingSampler,
                 phase: PhaseConfig, seed: int, log: Callable[[dict], None] | None = None,
                 tag: str = "adapter") -> Model:
    model = assemble_model(config, foundation)
    rng = np.random.default_rng([seed, 23])
    state = AdamWState()
    for step in range(phase.steps):
        lr = lr_at(step, phase.steps, phase.lr, phase.schedule)
        loss, state = train_step(model, sampler(rng), state, lr, phase.weight_decay)
        if log is not None:
            log({"phase": "train", "model": tag, "step": step, "loss": loss, "lr": lr})
    return model


def evaluate_model(model: Model, sequences: list[SyntheticSequence], strategy: str = "uniform",
                   adapters: bool = True, log: Callable[[dict], None] | None = None,
                   tag: str = "adapter") -> EvalReport:
    preds, gts, events = [], [], []
    bb = model.config.backbone
    for seq in sequences:
        res = track(model, seq, strategy, adapters=adapters)
        preds += res.boxes
        gts += [f.gt for f in seq.frames]
        events += [seq.event_at(i) for i in range(len(seq))]
        if log is not None:
            for i, (b, c) in enumerate(zip(res.boxes, res.confidences)):
                log({"phase": "eval", "model": tag, "seq": seq.seed, "frame": i, "event": seq.event_at(i),
                     "box": [b.cx, b.cy, b.w, b.h], "confidence": c})
    frame_size = sequences[0].frame_size
    # centre-error radius: 1/16 of the search extent measured in frame pixels at nominal target size
    radius = bb.search_size[0] / 16.0
    return evaluate(preds, gts, events, radius=radius, scale=frame_size)


def write_summary(path: Path, rows: dict[str, EvalReport]) -> None:
    kinds = sorted({k for r in rows.values() for k in r.per_event})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mean_iou", "success_auc", "precision_at_r"] + [f"{k}_iou" for k in kinds])
        for name, r in rows.items():
            w.writerow([name, f"{r.mean_iou:.6f}", f"{r.success_auc:.6f}", f"{r.precision_at_r:.6f}"]
                       + [f"{r.event_iou(k):.6f}" for k in kinds])


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Pre-train an RGB foundation, adapt it, evaluate against the frozen baseline."""
    out = Path(config.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        dump_config(config, out / "config.yaml")
    log = MetricsLog(out / "metrics.jsonl" if write else None)
    frame_log = log if config.log_frames else None
    try:
        mcfg = replace(config.model, seed=config.seed)
        bb = mcfg.backbone
        plain = replace(config.synth, events=(), lead_event=None)
        pre_seqs = make_sequences(config.data.pretrain_sequences, config.data.train_length,
                                  config.data.pretrain_seed, plain)
        pre_sampler = TrainingSampler(pre_seqs, bb, mcfg.memory_size, config.pretrain.batch_size,
                                      event_fraction=0.0)
        foundation = pretrain_foundation(mcfg, pre_sampler, config.pretrain.steps, config.pretrain.lr,
                                         config.pretrain.weight_decay, seed=config.seed, log=log)
        del pre_seqs, pre_sampler  # frames are large; only the weights are needed from here

        train_seqs = make_sequences(config.data.train_sequences, config.data.train_length,
                                    config.data.train_seed, config.synth)
        eval_cfg = replace(config.synth, lead_event=config.data.eval_lead_event)
        eval_seqs = make_sequences(config.data.eval_sequences, config.data.eval_length,
                                   config.data.eval_seed, eval_cfg)

        def sampler_for(c: ModelConfig) -> TrainingSampler:
            return TrainingSampler(train_seqs, bb, c.memory_size, config.train.batch_size,
                                   event_fraction=config.train.event_fraction)

        model = fit_adapters(mcfg, foundation, sampler_for(mcfg), config.train, config.seed, log, "adapter")
        adapter = evaluate_model(model, eval_seqs, config.strategy, True, frame_log, "adapter")
        base_model = assemble_model(mcfg, foundation)
        baseline = evaluate_model(base_model, eval_seqs, config.strategy, False, frame_log, "baseline")
        variants, variant_models = {}, {}
        for name in config.variants:
            vcfg = replace(mcfg, **VARIANTS[name])
            vm = fit_adapters(vcfg, foundation, sampler_for(vcfg), config.train, config.seed, log, name)
            variants[name] = evaluate_model(vm, eval_seqs, config.strategy, True, frame_log, name)
            variant_models[name] = vm
    finally:
        log.close()

    result = ExperimentResult(adapter, baseline, variants, model)
    if write:
        reports = {k: v.to_dict() for k, v in result.rows().items()}
        (out / "reports.json").write_text(json.dumps(reports, indent=1, sort_keys=True) + "\n")
        write_summary(out / "summary.csv", result.rows())
        model.store.save(out / "model.ckpt")
        for name, vm in variant_models.items():
            vm.store.save(out / f"model_{name}.ckpt")
        (out / "audit.json").write_text(json.dumps(freeze_partition(model).to_dict(), indent=1, sort_keys=True) + "\n")
    return result


def load_reports(path: str | Path) -> dict[str, EvalReport]:
    raw = json.loads(Path(path).read_text())
    return {k: EvalReport.from_dict(v) for k, v in raw.items()}


def load_model(checkpoint: str | Path, config: ModelConfig) -> Model:
    store = ParamStore.load(checkpoint)
    store.lock()
    return Model(config, store)
