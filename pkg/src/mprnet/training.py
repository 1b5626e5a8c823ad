"""Training loop, stage-wise evaluation and the run orchestrator."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .autograd.tensor import Tape, Tensor
from .checkpoint import save_checkpoint
from .data.sampling import BatchPrefetcher, ImagePair, TrainingData
from .errors import NonFiniteLossError, UsageError
from .inference import restore
from .losses import LossReport, total_loss
from .metrics import MetricReport, psnr, rgb_to_y, ssim, ssim_rgb
from .models.config import LossConfig, OptimConfig, RunConfig, TrainConfig
from .network import MPRNet
from .optim import Adam, cosine_lr

logger = logging.getLogger(__name__)

LOG_STAGES = 3
MISSING = "-"


def _fmt(value: Optional[float]) -> str:
    return MISSING if value is None else f"{value:.9e}"


@dataclass
class IterationRecord:
    """One line of ``train.log``: iter loss char1 edge1 char2 edge2 char3 edge3 lr."""
    iteration: int
    loss: float
    char: List[Optional[float]]
    edge: List[Optional[float]]
    lr: float

    @classmethod
    def from_report(cls, iteration: int, report: LossReport, lr: float) -> "IterationRecord":
        char: List[Optional[float]] = [None] * LOG_STAGES
        edge: List[Optional[float]] = [None] * LOG_STAGES
        for stage, c, e in zip(report.stages, report.char, report.edge):
            char[stage - 1], edge[stage - 1] = c, e
        return cls(iteration, report.total, char, edge, lr)

    def to_line(self) -> str:
        fields = [str(self.iteration), _fmt(self.loss)]
        for c, e in zip(self.char, self.edge):
            fields += [_fmt(c), _fmt(e)]
        fields.append(_fmt(self.lr))
        return " ".join(fields)


@dataclass
class ValidationRecord:
    iteration: int
    reports: List[MetricReport]

    @property
    def final_psnr(self) -> float:
        return self.reports[-1].psnr

    def to_line(self) -> str:
        psnrs = " ".join(f"psnr{r.stage}={r.psnr:.6f}" for r in self.reports)
        ssims = " ".join(f"ssim{r.stage}={r.ssim:.6f}" for r in self.reports)
        return f"{self.iteration} {psnrs} {ssims}"


@dataclass
class TrainLog:
    records: List[IterationRecord] = field(default_factory=list)
    validations: List[ValidationRecord] = field(default_factory=list)
    best_psnr: Optional[float] = None
    best_iteration: Optional[int] = None

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]


# ------------------------------------------------------------------ training


def training_step(
    model: MPRNet, optimizer: Adam, clean: np.ndarray, degraded: np.ndarray, loss_cfg: LossConfig,
    lr: float, iteration: int,
) -> LossReport:
    """Forward all stages, backpropagate the summed loss of supervised outputs, apply Adam."""
    img = Tensor(degraded, dtype=model.dtype)
    target = Tensor(clean, dtype=model.dtype)
    optimizer.zero_grad()
    with Tape() as tape:
        outputs = model(img)
        report = total_loss([o for o in outputs if o.supervised], target, loss_cfg)
    if not report.is_finite():
        raise NonFiniteLossError(iteration, report.terms())
    tape.backward(report.total_tensor)
    optimizer.step(lr)
    return report


def train(
    model: MPRNet,
    data: TrainingData,
    train_cfg: TrainConfig,
    optim_cfg: OptimConfig,
    loss_cfg: LossConfig,
    out_dir: Optional[Path] = None,
    validation: Optional[Sequence[ImagePair]] = None,
    lr_schedule: Optional[Callable[[int], float]] = None,
    progress: bool = False,
    workers: int = 1,
) -> TrainLog:
    """
    Run ``train_cfg.iters`` Adam iterations on batches from ``data``.

    When ``out_dir`` is given, ``train.log`` gets one line per iteration,
    ``val.log`` one line per validation, ``best.mprf`` follows the best final-stage
    validation PSNR and ``last.mprf`` is refreshed every ``checkpoint_every``
    iterations and at the end.
    """
    if optim_cfg.total_iters is None:
        optim_cfg = optim_cfg.model_copy(update={"total_iters": train_cfg.iters})
    schedule = lr_schedule or (lambda t: cosine_lr(t, optim_cfg))
    optimizer = Adam(model.parameters(), optim_cfg)
    log = TrainLog()

    train_log = val_log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        train_log = (out_dir / "train.log").open("w", encoding="utf-8")
        val_log = (out_dir / "val.log").open("w", encoding="utf-8")

    logger.info("Training %d parameters for %d iterations", model.param_count(), train_cfg.iters)
    batches = BatchPrefetcher(data, 1, train_cfg.iters + 1, depth=train_cfg.prefetch, workers=workers)
    bar = tqdm(total=train_cfg.iters, desc="train", disable=not progress)
    try:
        for iteration, (clean, degraded) in enumerate(batches, start=1):
            lr = schedule(iteration - 1)
            report = training_step(model, optimizer, clean, degraded, loss_cfg, lr, iteration)
            record = IterationRecord.from_report(iteration, report, lr)
            log.records.append(record)
            if train_log is not None:
                train_log.write(record.to_line() + "\n")
                train_log.flush()
            logger.debug("iter %d loss %.6g lr %.3g", iteration, report.total, lr)
            bar.update(1)
            bar.set_postfix(loss=f"{report.total:.4g}", lr=f"{lr:.2e}")

            last = iteration == train_cfg.iters
            if validation and (iteration % train_cfg.val_every == 0 or last):
                entry = ValidationRecord(iteration, evaluate(model, validation, workers=workers))
                log.validations.append(entry)
                if val_log is not None:
                    val_log.write(entry.to_line() + "\n")
                    val_log.flush()
                if log.best_psnr is None or entry.final_psnr > log.best_psnr:
                    log.best_psnr, log.best_iteration = entry.final_psnr, iteration
                    logger.info("New best validation PSNR %.3f dB at iteration %d", entry.final_psnr, iteration)
                    if out_dir is not None:
                        save_checkpoint(model, out_dir / "best.mprf", {"iteration": iteration, "psnr": entry.final_psnr})
            if out_dir is not None and (iteration % train_cfg.checkpoint_every == 0 or last):
                save_checkpoint(model, out_dir / "last.mprf", {"iteration": iteration})
    finally:
        batches.close()
        bar.close()
        for handle in (train_log, val_log):
            if handle is not None:
                handle.close()
    logger.info("Training finished after %d iterations", len(log.records))
    return log


# ---------------------------------------------------------------- evaluation


def score_image(restored: np.ndarray, clean: np.ndarray, y_channel: bool = False, peak: float = 1.0) -> Tuple[float, float]:
    """(psnr, ssim) of one (3, h, w) restoration; ``peak`` 255 scores 8-bit quantized images."""
    a = np.asarray(restored, dtype=np.float64)
    b = np.asarray(clean, dtype=np.float64)
    if peak != 1.0:
        a = np.round(np.clip(a, 0.0, 1.0) * peak)
        b = np.round(np.clip(b, 0.0, 1.0) * peak)
    if y_channel:
        a, b = rgb_to_y(a), rgb_to_y(b)
    value = psnr(a, b, peak=peak)
    if y_channel:
        return value, ssim(a / peak, b / peak)
    return value, ssim_rgb(a / peak, b / peak)


def _average(stage: int, scores: List[Tuple[float, float]], y_channel: bool) -> MetricReport:
    return MetricReport(
        stage=stage,
        psnr=float(np.mean([s[0] for s in scores])),
        ssim=float(np.mean([s[1] for s in scores])),
        evaluated_on="y-channel" if y_channel else "rgb",
        images=len(scores),
    )


def evaluate(
    model: MPRNet,
    pairs: Sequence[ImagePair],
    exit_stage: Optional[int] = None,
    y_channel: bool = False,
    peak: float = 1.0,
    workers: int = 1,
) -> List[MetricReport]:
    """Mean PSNR/SSIM per stage (or only ``exit_stage``) over (clean, degraded) pairs."""
    if not pairs:
        raise UsageError("evaluate: empty test set")
    if exit_stage is not None and not 1 <= exit_stage <= model.n_stages:
        raise UsageError(f"exit_stage must be in [1, {model.n_stages}], got {exit_stage}")
    stages = [exit_stage] if exit_stage is not None else list(range(1, model.n_stages + 1))

    def score(pair: ImagePair) -> Dict[int, Tuple[float, float]]:
        clean, degraded = pair
        return {
            stage: score_image(restored, clean, y_channel, peak)
            for stage, restored in restore(model, degraded, stages[-1])
            if stage in stages
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_image = list(pool.map(score, pairs))
    else:
        per_image = [score(pair) for pair in pairs]
    return [_average(stage, [scores[stage] for scores in per_image], y_channel) for stage in stages]


def degraded_baseline(
    pairs: Sequence[ImagePair], y_channel: bool = False, peak: float = 1.0, dtype=np.float64
) -> MetricReport:
    """Metrics of the degraded inputs themselves, reported as stage 0."""
    if not pairs:
        raise UsageError("degraded_baseline: empty test set")
    scores = [score_image(np.asarray(d, dtype=dtype), c, y_channel, peak) for c, d in pairs]
    return _average(0, scores, y_channel)


# ------------------------------------------------------------------ run level


@dataclass
class TrainResult:
    model: MPRNet
    log: TrainLog
    reports: List[MetricReport]
    baseline: MetricReport
    out_dir: Optional[Path]


def run_training(config: RunConfig, out_dir: Optional[Path] = None, progress: bool = True,
                 workers: int = 1, write_artifacts: bool = True) -> TrainResult:
    """Build model and data from ``config``, train, evaluate, and write the run directory."""
    model = MPRNet(config.model)
    data = TrainingData.from_config(config.train, config.degrade)
    validation = data.validation_pairs()
    log = train(
        model, data, config.train, config.optim, config.loss,
        out_dir=out_dir, validation=validation, progress=progress, workers=workers,
    )
    reports = evaluate(model, validation, workers=workers)
    baseline = degraded_baseline(validation, dtype=model.dtype)
    result = TrainResult(model, log, reports, baseline, out_dir)
    if out_dir is not None and write_artifacts:
        from .generator import ReportGenerator

        ReportGenerator(Path(out_dir)).write_run(config, result)
    final = reports[-1].psnr
    if math.isfinite(final):
        logger.info("Final stage %d PSNR %.3f dB (input %.3f dB)", reports[-1].stage, final, baseline.psnr)
    return result
