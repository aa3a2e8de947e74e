"""Training loop, loss, experiment configs and the decoder ablation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .dataio import Dataset, load_dataset
from .decoder import DecoderConfig
from .encoder import encoder_config
from .errors import ConfigError, NumericError
from .metrics import MetricsReport, evaluate_dataset
from .model import MTLSegFormer, preprocess
from .optim import AdamW, poly_lr
from .synth import dilate_mask
from .tensor import Tensor, log_softmax_lastdim, no_grad


@dataclass
class TrainConfig:
    data: str = ""
    out: str = "run"
    iterations: int = 2000
    batch_size: int = 2
    base_lr: float = 6e-5
    poly_power: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    encoder: str = "T0"
    channels: int = 16
    heads: int = 2
    cross_reduction: int = 1
    cross_attention: bool = True
    dilate: int = 6
    checkpoint_interval: int = 500
    log_interval: int = 50

    def validate(self):
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if not self.data:
            raise ConfigError("config needs a data directory")

    def as_lines(self) -> list[str]:
        return [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """`key = value` lines with `#` comments; unknown keys are errors."""
    cfg = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        kind = types[key]
        try:
            if kind == "bool":
                values[key] = _BOOL_WORDS[value.lower()]
            elif kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except (KeyError, ValueError):
            raise ConfigError(f"line {lineno}: bad value {value!r} for '{key}'") from None
    return replace(cfg, **values)


def load_train_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


@dataclass
class LogEntry:
    iteration: int
    lr: float
    task_losses: tuple[float, ...]
    total_loss: float
    wall: float

    def line(self) -> str:
        tasks = " ".join(f"loss{k + 1}={v:.6f}" for k, v in enumerate(self.task_losses))
        return f"iter={self.iteration} lr={self.lr:.10g} {tasks} loss={self.total_loss:.6f} wall={self.wall:.2f}"


@dataclass
class RunLog:
    """initial_loss: untrained-model loss over an evaluation window;
    final_loss: mean training loss over the last window of iterations."""

    entries: list[LogEntry] = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0

    def numeric_lines(self) -> list[str]:
        """Log content without wall-clock, for determinism comparisons."""
        out = []
        for e in self.entries:
            tasks = " ".join(f"loss{k + 1}={v:.6f}" for k, v in enumerate(e.task_losses))
            out.append(f"iter={e.iteration} lr={e.lr:.10g} {tasks} loss={e.total_loss:.6f}")
        out.append(f"initial_loss={self.initial_loss:.6f}")
        out.append(f"final_loss={self.final_loss:.6f}")
        return out


def mtl_loss(logits: list[Tensor], labels: list[np.ndarray]) -> tuple[Tensor, list[float]]:
    """Sum over tasks of mean pixel-wise two-class cross-entropy."""
    if len(logits) != len(labels):
        raise ConfigError(f"{len(logits)} logit maps vs {len(labels)} label masks")
    total = None
    per_task = []
    for logit, label in zip(logits, labels):
        label = np.asarray(label)
        if logit.shape[:2] != label.shape:
            raise ConfigError(f"logits {logit.shape} vs labels {label.shape}")
        if not np.isin(label, (0, 1)).all():
            raise ConfigError("labels must be binary 0/1")
        y = label.astype(logit.data.dtype)
        onehot = np.stack([1.0 - y, y], axis=-1)
        logp = log_softmax_lastdim(logit)
        nll = (logp * Tensor(onehot)).sum() * (-1.0 / y.size)
        per_task.append(float(nll.data))
        total = nll if total is None else total + nll
    if not np.isfinite(total.data).all():
        raise NumericError("non-finite loss")
    return total, per_task


def _prepare(dataset: Dataset, dilate: int):
    """Preprocess images once; dilate thin-task labels for training."""
    images, labels = [], []
    for sample in dataset.samples():
        images.append(sample.image)
        per_task = []
        for mask, is_thin in zip(sample.masks, dataset.thin):
            if is_thin and dilate > 0:
                per_task.append(dilate_mask(mask, dilate))
            else:
                per_task.append(mask)
        labels.append(per_task)
    return images, labels


def build_model(cfg: TrainConfig, tasks: int) -> MTLSegFormer:
    dec = DecoderConfig(
        channels=cfg.channels,
        tasks=tasks,
        heads=cfg.heads,
        cross_reduction=cfg.cross_reduction,
        cross_attention=cfg.cross_attention,
    )
    return MTLSegFormer(encoder_config(cfg.encoder), dec, seed=cfg.seed)


def train(cfg: TrainConfig, stream=None) -> tuple[Path, RunLog]:
    """Run the configured training; returns (checkpoint path, log).

    Deterministic for a fixed config: model init, the shuffling stream and
    every update depend only on the config. On a non-finite loss the run
    aborts, leaving the last interval checkpoint in place.
    """
    cfg.validate()
    dataset = load_dataset(cfg.data)
    images, labels = _prepare(dataset, cfg.dilate)
    model = build_model(cfg, tasks=len(dataset.tasks))
    model.calibrate_heads(images[: min(8, len(images))])
    named = list(model.named_parameters())
    opt = AdamW(named, cfg.base_lr, cfg.weight_decay, cfg.iterations, cfg.poly_power)

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "last.ckpt"
    (out_dir / "config.txt").write_text("\n".join(cfg.as_lines()) + "\n", encoding="utf-8")

    order_rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x5EED])))
    permutation: list[int] = []

    def next_batch(size: int) -> list[int]:
        nonlocal permutation
        batch = []
        while len(batch) < size:
            if not permutation:
                permutation = list(order_rng.permutation(len(images)))
            batch.append(permutation.pop(0))
        return batch

    log = RunLog()
    window = min(50, cfg.iterations)
    last_losses: list[float] = []
    started = time.monotonic()
    n_tasks = len(dataset.tasks)

    with no_grad():
        init_losses = []
        for idx in range(min(16, len(images))):
            loss, _ = mtl_loss(model(preprocess(images[idx])), labels[idx])
            init_losses.append(float(loss.data))
    log.initial_loss = float(np.mean(init_losses))

    def emit(entry: LogEntry):
        log.entries.append(entry)
        if stream is not None:
            stream(entry.line())

    last_batch_stats = (0.0, tuple(0.0 for _ in range(n_tasks)))
    for it in range(cfg.iterations):
        lr = opt.lr
        batch = next_batch(cfg.batch_size)
        total = None
        task_acc = np.zeros(n_tasks)
        for idx in batch:
            logits = model(preprocess(images[idx]))
            loss, per_task = mtl_loss(logits, labels[idx])
            task_acc += per_task
            total = loss if total is None else total + loss
        total = total * (1.0 / cfg.batch_size)
        batch_loss = float(total.data)
        if not np.isfinite(batch_loss):
            raise NumericError(f"non-finite loss at iteration {it}; last checkpoint kept at {ckpt_path}")
        total.backward()
        opt.step()
        opt.zero_grad()

        task_means = tuple(task_acc / cfg.batch_size)
        last_batch_stats = (batch_loss, task_means)
        last_losses.append(batch_loss)
        if len(last_losses) > window:
            last_losses.pop(0)

        if it % cfg.log_interval == 0:
            emit(LogEntry(it, lr, task_means, batch_loss, time.monotonic() - started))
        if (it + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(ckpt_path, model.state())

    emit(LogEntry(cfg.iterations, opt.lr if opt.step_count < cfg.iterations else poly_lr(cfg.iterations, cfg.iterations, cfg.base_lr, cfg.poly_power), last_batch_stats[1], last_batch_stats[0], time.monotonic() - started))
    log.final_loss = float(np.mean(last_losses))
    save_checkpoint(ckpt_path, model.state())
    (out_dir / "run.log").write_text("\n".join(e.line() for e in log.entries) + "\n", encoding="utf-8")
    return ckpt_path, log


@dataclass
class AblationResult:
    tasks: tuple[str, ...]
    seeds: tuple[int, ...]
    param_counts: dict[str, int]  # variant -> parameter count
    reports: dict[str, list[MetricsReport]]  # variant -> one report per seed

    VARIANTS = ("mtl", "single")

    def mean_metric(self, variant: str, task: str, metric: str) -> float:
        values = []
        for report in self.reports[variant]:
            scores = report.seg_dilated.get(task, report.seg_raw[task])
            values.append(getattr(scores, metric))
        return float(np.mean(values))

    def table(self) -> list[str]:
        header = ["variant", "params"]
        for t in self.tasks:
            header.extend([f"{t}.f1", f"{t}.iou"])
        rows = ["\t".join(header)]
        for variant in self.VARIANTS:
            cols = [variant, str(self.param_counts[variant])]
            for t in self.tasks:
                cols.append(f"{self.mean_metric(variant, t, 'f1'):.4f}")
                cols.append(f"{self.mean_metric(variant, t, 'iou'):.4f}")
            rows.append("\t".join(cols))
        return rows


def ablate(cfg: TrainConfig, seeds, eval_data: str | None = None, stream=None) -> AblationResult:
    """Train the cross-task decoder against the no-exchange variant.

    Both variants share encoder config and seed per run; the only parameter
    difference is the cross-attention projection set.
    """
    cfg.validate()
    seeds = tuple(seeds)
    eval_set = load_dataset(eval_data or cfg.data)
    param_counts: dict[str, int] = {}
    reports: dict[str, list[MetricsReport]] = {v: [] for v in AblationResult.VARIANTS}
    for variant in AblationResult.VARIANTS:
        for seed in seeds:
            run_cfg = replace(
                cfg,
                seed=seed,
                cross_attention=(variant == "mtl"),
                out=str(Path(cfg.out) / f"{variant}_seed{seed}"),
            )
            if stream is not None:
                stream(f"# training variant={variant} seed={seed}")
            model_tasks = len(load_dataset(run_cfg.data).tasks)
            param_counts[variant] = build_model(run_cfg, model_tasks).parameter_count()
            _, _ = train(run_cfg, stream=None)
            model = build_model(run_cfg, model_tasks)
            from .checkpoint import load_checkpoint

            model.load_state(load_checkpoint(Path(run_cfg.out) / "last.ckpt"))
            report = evaluate_dataset(model, eval_set, dilate_element=cfg.dilate)
            reports[variant].append(report)
            if stream is not None:
                stream(f"# variant={variant} seed={seed} " + " ".join(report.tsv_row().split("\t")))
    return AblationResult(eval_set.tasks, seeds, param_counts, reports)
