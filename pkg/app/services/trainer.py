"""
The training loop.

Each step: augment -> forward -> total loss -> backward -> Nesterov SGD
step -> EMA update. Every `eval_every` steps (default once per epoch) the
EMA model is evaluated, metrics are flushed and checkpoints written.
A non-finite loss term or gradient aborts the run with its step index.
"""

from pathlib import Path
from typing import Dict, List, Optional
import logging
import time

import numpy as np
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import NaNAbortError
from app.schemas.augment import AugmentMode, AugmentPolicy
from app.schemas.dataset import DatasetSplit
from app.schemas.experiment import ExperimentConfig
from app.schemas.metrics import MetricsRow, TrainingReport
from app.schemas.model import ModelParams, ModelSpec
from app.services.augment import BatchAugmenter
from app.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from app.services.datasets import batch_iterator, load_dataset, steps_per_epoch, with_labeled_split
from app.services.evaluation import evaluate
from app.services.metrics import emit_metrics
from app.services.models import init_params, logits_fn, params_from_arrays
from app.services.objective import compute_objective
from app.services.optim import cosine_lr, ema_update, init_ema, init_optim_state, sgd_nesterov_step
from app.utils.helpers import ensure_directory, format_percent, write_json

logger = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.json"

# Branch ids keep the rng streams of the three augmented views apart
WEAK_LABELED, WEAK_UNLABELED, STRONG_UNLABELED = 0, 1, 2


class Trainer:
    """One training run; owns parameters, optimizer and EMA state"""

    def __init__(self, config: ExperimentConfig, split: Optional[DatasetSplit] = None):
        self.config = config
        self.output_dir = ensure_directory(config.output_dir)

        split = split or load_dataset(config)
        if not split.labeled_indices:
            split = with_labeled_split(split, config.num_labels, config.seed)
        self.split = split
        self.labeled = split.labeled
        self.unlabeled = split.train

        self.spec = ModelSpec.from_experiment(config, split.train.sample_shape)
        self.params = init_params(self.spec)
        self.steps_per_epoch = steps_per_epoch(len(self.unlabeled), config.batch_size, config.mu)
        total = config.epochs * self.steps_per_epoch
        self.total_steps = min(total, config.max_steps) if config.max_steps else total
        self.eval_every = config.eval_every or self.steps_per_epoch

        arrays = self.params.arrays()
        self.optim = init_optim_state(arrays, config.momentum, config.weight_decay, config.lr, self.total_steps)
        self.ema = init_ema(arrays, config.ema_decay)
        self.weak_policy = AugmentPolicy.from_experiment(config, AugmentMode.WEAK)
        self.strong_policy = AugmentPolicy.from_experiment(config, AugmentMode.STRONG)

        self.step = 0
        self.best_accuracy = float("nan")
        self.best_step: Optional[int] = None
        self.pending: List[MetricsRow] = []
        self.last_row: Optional[MetricsRow] = None
        self.max_distance = 0.0

    # ==================== Paths ====================
    @property
    def metrics_path(self) -> Path:
        return self.output_dir / METRICS_FILE

    @property
    def last_checkpoint_path(self) -> Path:
        return self.output_dir / LAST_CHECKPOINT

    @property
    def best_checkpoint_path(self) -> Path:
        return self.output_dir / BEST_CHECKPOINT

    # ==================== State ====================
    def resume(self) -> bool:
        """Restore from last.ckpt when present; returns whether a checkpoint was loaded"""
        if not self.last_checkpoint_path.exists():
            return False
        checkpoint = load_checkpoint(str(self.last_checkpoint_path))
        self.params = params_from_arrays(self.spec, checkpoint.params, trainable=True)
        self.optim = self.optim.model_copy(update={
            "velocity": dict(checkpoint.velocity) or self.optim.velocity,
            "step": min(checkpoint.step, self.total_steps),
        })
        self.ema = self.ema.model_copy(update={"shadow": dict(checkpoint.ema) or self.params.arrays()})
        self.step = checkpoint.step
        self.best_accuracy = checkpoint.best_accuracy
        logger.info("Resumed from %s at step %d", self.last_checkpoint_path, self.step)
        return True

    def checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            params=self.params.arrays(),
            ema=self.ema.shadow,
            velocity=self.optim.velocity,
            step=self.step,
            epoch=epoch,
            best_accuracy=self.best_accuracy,
        )

    # ==================== Steps ====================
    def train_step(self, labeled, unlabeled, epoch: int) -> MetricsRow:
        step = self.step
        lr = cosine_lr(step, self.total_steps, self.config.lr)
        weak = BatchAugmenter(self.weak_policy, epoch, step, WEAK_LABELED)
        weak_unlabeled = BatchAugmenter(self.weak_policy, epoch, step, WEAK_UNLABELED)
        strong = BatchAugmenter(self.strong_policy, epoch, step, STRONG_UNLABELED)

        self.params.zero_grad()
        total, breakdown = compute_objective(
            labeled, unlabeled, logits_fn(self.params), self.config,
            weak_augment=weak, strong_augment=strong, unlabeled_weak_augment=weak_unlabeled,
        )
        if not breakdown.is_finite():
            raise NaNAbortError(step, f"total={breakdown.total}, ranking={breakdown.supervised_rank}/{breakdown.unsupervised_rank}")

        total.backward()
        grads: Dict[str, np.ndarray] = {}
        for name, tensor in self.params.tensors.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if not np.all(np.isfinite(grad)):
                raise NaNAbortError(step, f"non-finite gradient for {name}")
            grads[name] = grad

        arrays, self.optim = sgd_nesterov_step(self.params.arrays(), grads, self.optim, lr)
        self.params = self.params.with_arrays(arrays)
        self.ema = ema_update(self.ema, arrays, step if self.config.ema_warmup else None)
        if breakdown.max_distance is not None:
            self.max_distance = max(self.max_distance, breakdown.max_distance)
        self.step += 1

        return MetricsRow(
            step=step,
            epoch=epoch,
            lr=lr,
            supervised_ce=breakdown.supervised_ce,
            unsupervised_ce=breakdown.unsupervised_ce,
            supervised_rank=breakdown.supervised_rank,
            unsupervised_rank=breakdown.unsupervised_rank,
            total=breakdown.total,
            confident_fraction=breakdown.confident_fraction,
        )

    def evaluate_ema(self, row: MetricsRow, epoch: int) -> MetricsRow:
        train_acc = evaluate(self.ema.shadow, self.labeled, self.spec).accuracy
        validation_acc = None
        if len(self.split.validation):
            validation_acc = evaluate(self.ema.shadow, self.split.validation, self.spec).accuracy
        test_acc = evaluate(self.ema.shadow, self.split.test, self.spec).accuracy
        row = row.model_copy(update={
            "train_accuracy": train_acc,
            "validation_accuracy": validation_acc,
            "test_accuracy": test_acc,
        })

        if validation_acc is not None and (np.isnan(self.best_accuracy) or validation_acc > self.best_accuracy):
            self.best_accuracy = validation_acc
            self.best_step = self.step
            save_checkpoint(self.checkpoint(epoch), str(self.best_checkpoint_path))
        save_checkpoint(self.checkpoint(epoch), str(self.last_checkpoint_path))
        logger.info(
            "step %d/%d epoch %d: total %.4f, confident %s, EMA validation %s, test %s",
            self.step, self.total_steps, epoch, row.total,
            format_percent(row.confident_fraction), format_percent(validation_acc), format_percent(test_acc),
        )
        return row

    def flush(self) -> None:
        if self.pending:
            emit_metrics(self.pending, str(self.metrics_path), append=True)
            self.pending = []

    # ==================== Loop ====================
    def run(self) -> TrainingReport:
        config = self.config
        if config.resume:
            self.resume()
        elif self.metrics_path.exists():
            self.metrics_path.unlink()

        first_epoch = self.step // self.steps_per_epoch
        last_epoch = (self.total_steps - 1) // self.steps_per_epoch
        started = time.perf_counter()
        progress = tqdm(total=self.total_steps, initial=self.step, disable=not settings.SHOW_PROGRESS)
        epoch = first_epoch

        try:
            for epoch in range(first_epoch, last_epoch + 1):
                batches = batch_iterator(
                    self.labeled, self.unlabeled, config.batch_size, config.mu,
                    config.seed, epoch, self.split.num_classes,
                )
                for index, (labeled, unlabeled) in enumerate(batches):
                    global_step = epoch * self.steps_per_epoch + index
                    if global_step < self.step:
                        continue
                    if global_step >= self.total_steps:
                        break

                    row = self.train_step(labeled, unlabeled, epoch)
                    if config.log_wall_time:
                        row = row.model_copy(update={"wall_time": time.perf_counter() - started})
                    if self.step % self.eval_every == 0 or self.step == self.total_steps:
                        row = self.evaluate_ema(row, epoch)
                        self.pending.append(row)
                        self.flush()
                    else:
                        self.pending.append(row)
                    self.last_row = row
                    progress.update(1)
        except NaNAbortError as e:
            self.flush()
            logger.error("%s", e)
            raise
        finally:
            progress.close()

        self.flush()
        return self.report(epoch)

    def report(self, epoch: int) -> TrainingReport:
        best_path = self.best_checkpoint_path if self.best_checkpoint_path.exists() else self.last_checkpoint_path
        test_model = self.ema.shadow
        if best_path.exists():
            test_model = load_checkpoint(str(best_path)).evaluation_params()
        test = evaluate(test_model, self.split.test, self.spec)
        raw_validation = None
        if len(self.split.validation):
            raw_validation = evaluate(self.params, self.split.validation).accuracy

        report = TrainingReport(
            steps=self.step,
            epochs=epoch + 1,
            final=self.last_row,
            best_validation_accuracy=None if np.isnan(self.best_accuracy) else self.best_accuracy,
            best_step=self.best_step,
            test=test,
            raw_validation_accuracy=raw_validation,
            checkpoint_path=str(best_path),
            metrics_path=str(self.metrics_path),
        )
        write_json(self.output_dir / REPORT_FILE, report.model_dump_json(indent=2))
        logger.info("Finished %d steps; test accuracy %s", self.step, format_percent(test.accuracy))
        return report


def run_training(config: ExperimentConfig, split: Optional[DatasetSplit] = None) -> TrainingReport:
    return Trainer(config, split).run()


def load_model_for_eval(spec: ModelSpec, checkpoint_path: str) -> ModelParams:
    """EMA parameters from a checkpoint, ready for evaluation"""
    checkpoint = load_checkpoint(checkpoint_path)
    return params_from_arrays(spec, checkpoint.evaluation_params())
