"""
Training Loop - Epoch/mini-batch driver with stop requests, periodic checkpoints and bit-exact resume
"""
import logging
import math
import threading
import time
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_from_dict
from .data import BatchPlan, batch_indices
from .errors import CompatibilityError, DivergenceError
from .file_manager import format_duration

logger = logging.getLogger(__name__)


class TrainStatus(Enum):
    QUEUED = "Queued"
    TRAINING = "Training"
    COMPLETED = "Completed"
    ERROR = "Error"
    STOPPED = "Stopped"


class TrainingLoop:
    """
    Shared driver for every trainer.

    Subclasses set ``kind`` and ``columns`` (per-batch metrics averaged over
    an epoch) and implement ``_n_rows``, ``_train_step``, ``_model_arrays`` and ``_load_model``.
    Optional hooks: ``_epoch_metrics`` adds columns computed once per epoch,
    ``_reset_accumulators`` runs at the start of an epoch when
    ``reset_sdl_each_epoch`` is set, ``_header_state`` adds scalar state to
    the checkpoint header.
    """

    kind = ''
    columns: Sequence[str] = ()
    epoch_columns: Sequence[str] = ()

    def __init__(self, config: ExperimentConfig, checkpoint_path: Optional[str] = None,
                 on_epoch_end: Optional[Callable] = None,
                 on_status_change: Optional[Callable] = None):
        self.config = config
        self.checkpoint_path = checkpoint_path
        self.on_epoch_end = on_epoch_end            # fn(row: dict)
        self.on_status_change = on_status_change    # fn(status: TrainStatus)

        self.status = TrainStatus.QUEUED
        self.epoch = 0
        self.batch_pos = 0
        self.step = 0
        self.sums: Dict[str, float] = {c: 0.0 for c in self.columns}
        self.count = 0
        self.history: List[Dict[str, Any]] = []

        self._stop_event = threading.Event()

    @property
    def metric_columns(self) -> List[str]:
        return ['epoch', *self.columns, *self.epoch_columns]

    @property
    def plan(self) -> BatchPlan:
        t = self.config.training
        return BatchPlan(batch_size=t.batch_size, seed=t.seed, drop_last=t.drop_last)

    # ── Subclass hooks ─────────────────────────────────────────────────────

    def _n_rows(self) -> int:
        raise NotImplementedError

    def _train_step(self, idx: np.ndarray) -> Dict[str, float]:
        raise NotImplementedError

    def _model_arrays(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def _load_model(self, arrays: Dict[str, np.ndarray], header: Dict[str, Any]):
        raise NotImplementedError

    def _epoch_metrics(self) -> Dict[str, Any]:
        return {}

    def _reset_accumulators(self):
        pass

    def _header_state(self) -> Dict[str, Any]:
        return {}

    # ── Helpers ────────────────────────────────────────────────────────────

    def _set_status(self, status: TrainStatus):
        self.status = status
        if self.on_status_change:
            self.on_status_change(status)

    def _guard(self, total: float):
        """Call before the parameter update so a diverged step never lands in the model."""
        if not math.isfinite(total):
            logger.error(f"{self.kind}: non-finite loss {total} at step {self.step}")
            self._set_status(TrainStatus.ERROR)
            raise DivergenceError("training diverged (non-finite loss)", step=self.step)

    def request_stop(self):
        self._stop_event.set()

    @property
    def stop_requested(self) -> bool:
        return self._stop_event.is_set()

    # ── Main loop ──────────────────────────────────────────────────────────

    def run(self, stop_at_step: Optional[int] = None) -> List[Dict[str, Any]]:
        """
        Train until the configured epoch count, a stop request, or
        ``stop_at_step`` global steps. Stopping writes a checkpoint that
        ``restore`` continues from exactly.
        """
        self._set_status(TrainStatus.TRAINING)
        n = self._n_rows()
        plan = self.plan
        every = self.config.training.checkpoint_every
        started = time.monotonic()

        while self.epoch < self.config.training.epochs:
            blocks = batch_indices(n, plan, self.epoch)
            if self.batch_pos == 0 and self.epoch > 0 and self.config.training.reset_sdl_each_epoch:
                self._reset_accumulators()

            while self.batch_pos < len(blocks):
                if self.stop_requested or (stop_at_step is not None and self.step >= stop_at_step):
                    self._stop()
                    return self.history
                metrics = self._train_step(blocks[self.batch_pos])
                for c in self.columns:
                    self.sums[c] += metrics[c]
                self.count += 1
                self.batch_pos += 1
                self.step += 1
                logger.debug(f"{self.kind} step {self.step}: total={metrics['total']:.6f}")
                if every and self.step % every == 0:
                    self.save_checkpoint()

            self._finish_epoch(started)

        self._set_status(TrainStatus.COMPLETED)
        self.save_checkpoint()
        return self.history

    def _finish_epoch(self, started: float):
        count = max(self.count, 1)
        row: Dict[str, Any] = {'epoch': self.epoch + 1}
        row.update({c: self.sums[c] / count for c in self.columns})
        row.update(self._epoch_metrics())
        self.history.append(row)

        summary = ", ".join(f"{k}={v:.5g}" for k, v in row.items()
                            if k != 'epoch' and isinstance(v, float))
        logger.info(f"{self.kind} epoch {row['epoch']}/{self.config.training.epochs}: "
                    f"{summary} [{format_duration(time.monotonic() - started)}]")
        if self.on_epoch_end:
            self.on_epoch_end(row)

        self.sums = {c: 0.0 for c in self.columns}
        self.count = 0
        self.epoch += 1
        self.batch_pos = 0

    def _stop(self):
        logger.info(f"{self.kind}: stopping at epoch {self.epoch + 1}, step {self.step}")
        self.save_checkpoint()
        self._set_status(TrainStatus.STOPPED)

    # ── Persistence ────────────────────────────────────────────────────────

    def to_checkpoint(self) -> Checkpoint:
        header = {
            'config': self.config.to_dict(),
            'epoch': self.epoch,
            'batch_pos': self.batch_pos,
            'step': self.step,
            'sums': dict(self.sums),
            'count': self.count,
            'history': list(self.history),
            'finished': self.epoch >= self.config.training.epochs,
            **self._header_state(),
        }
        return Checkpoint(kind=self.kind, header=header, tensors=self._model_arrays())

    def save_checkpoint(self):
        if self.checkpoint_path:
            save_checkpoint(self.checkpoint_path, self.to_checkpoint())

    def restore(self, ckpt: Checkpoint):
        if ckpt.kind != self.kind:
            raise CompatibilityError(f"checkpoint holds a {ckpt.kind!r} run, expected {self.kind!r}")
        header = ckpt.header
        self._load_model(ckpt.tensors, header)
        self.epoch = int(header['epoch'])
        self.batch_pos = int(header['batch_pos'])
        self.step = int(header['step'])
        self.sums = {c: float(header['sums'][c]) for c in self.columns}
        self.count = int(header['count'])
        self.history = [dict(row) for row in header['history']]
        logger.info(f"Resuming {self.kind} at epoch {self.epoch + 1}, batch {self.batch_pos}, step {self.step}")


def checkpoint_config(path: str):
    """Load a checkpoint together with the config it was trained under."""
    ckpt = load_checkpoint(path)
    if 'config' not in ckpt.header:
        raise CompatibilityError(f"{path}: checkpoint carries no config snapshot")
    return ckpt, config_from_dict(ckpt.header['config'])


def trained_config(ckpt: Checkpoint, fallback: ExperimentConfig) -> ExperimentConfig:
    """The config snapshot a model was built under, else ``fallback``."""
    if 'config' not in ckpt.header:
        logger.warning(f"{ckpt.kind} checkpoint carries no config snapshot, using the current config")
        return fallback
    return config_from_dict(ckpt.header['config'])
