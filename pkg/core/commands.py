"""
Commands - One function per CLI subcommand; each loads its inputs, runs, writes CSV/checkpoints, records the run
"""
import argparse
import csv
import logging
import os
import signal
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from functools import partial
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .bench import bench_decorr
from .cca import (LinearCcaModel, SoftCcaTrainer, correlation_strength, cross_view_eval,
                  linear_cca_fit, soft_cca_from_checkpoint)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .classifier import MlpClassifierTrainer, eval_classifier
from .config import ExperimentConfig, apply_overrides, load_config
from .data import (PairedDataset, load_mnist_split, split_halves, subset_indices,
                   synth_correlated)
from .database import RunRecord, RunRegistry, RunStatus
from .errors import CompatibilityError, ConfigError
from .fae import FaeTrainer, disentanglement_eval, fae_from_checkpoint, style_sheet
from .fetch import DEFAULT_BASE_URL, fetch_mnist
from .file_manager import ensure_dir, write_csv, write_pgm
from .gradcheck import run_suite, summarize
from .training import TrainingLoop, TrainStatus, checkpoint_config, trained_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INTERRUPTED = 130
CHECKPOINT_FILE = 'checkpoint.ckpt'
METRICS_FILE = 'metrics.csv'


@dataclass
class Invocation:
    """Everything a command needs: parsed flags, resolved config, optional resume checkpoint."""
    args: argparse.Namespace
    config: ExperimentConfig
    registry: RunRegistry
    resume: Optional[Checkpoint] = None

    @property
    def out_dir(self) -> str:
        return self.config.output.dir

    def out_path(self, name: str) -> str:
        return os.path.join(ensure_dir(self.out_dir), name)


def resolve_config(args: argparse.Namespace) -> Tuple[ExperimentConfig, Optional[Checkpoint]]:
    """Config from --resume's snapshot, else --config, else defaults; then --seed/--out."""
    ckpt = None
    if getattr(args, 'resume', None):
        ckpt, config = checkpoint_config(args.resume)
        if args.seed is not None and args.seed != config.training.seed:
            logger.warning("--seed ignored when resuming; the checkpoint fixes the seed")
        return apply_overrides(config, out_dir=args.out), ckpt
    config = load_config(args.config) if getattr(args, 'config', None) else ExperimentConfig()
    return apply_overrides(config, seed=args.seed, out_dir=args.out), ckpt


# ── Run lifecycle ──────────────────────────────────────────────────────

@contextmanager
def tracked_run(inv: Invocation, command: str) -> Iterator[RunRecord]:
    """Register the run as Running; any exception marks it Error and propagates."""
    record = RunRecord.new(command, inv.config.to_dict(), os.path.abspath(inv.out_dir))
    record.status = RunStatus.RUNNING
    inv.registry.add_run(record)
    logger.info(f"Run {record.id}: {command} -> {record.out_dir}")
    try:
        yield record
    except BaseException as e:
        status = RunStatus.STOPPED if isinstance(e, KeyboardInterrupt) else RunStatus.ERROR
        inv.registry.update_run(record.id, status=status, error_msg=str(e) or type(e).__name__)
        raise


@contextmanager
def stop_on_sigint(trainer: TrainingLoop) -> Iterator[None]:
    """Turn Ctrl+C into a stop request so the loop checkpoints between steps."""
    def _handler(signum, frame):
        logger.warning("Interrupt received, stopping after the current step")
        trainer.request_stop()

    try:
        previous = signal.signal(signal.SIGINT, _handler)
    except ValueError:
        # not the main thread
        yield
        return
    try:
        yield
    finally:
        signal.signal(signal.SIGINT, previous)


def _run_trainer(inv: Invocation, record: RunRecord, trainer: TrainingLoop) -> int:
    if inv.resume is not None:
        trainer.restore(inv.resume)
    with stop_on_sigint(trainer):
        history = trainer.run(stop_at_step=getattr(inv.args, 'stop_at_step', None))
    write_csv(inv.out_path(METRICS_FILE), trainer.metric_columns, history)
    summary = dict(history[-1]) if history else {}
    summary['step'] = trainer.step
    if trainer.status == TrainStatus.STOPPED:
        inv.registry.update_run(record.id, status=RunStatus.STOPPED, summary=summary)
        logger.info(f"Run {record.id} stopped at step {trainer.step}; resume with "
                    f"--resume {trainer.checkpoint_path}")
        return EXIT_INTERRUPTED
    inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary=summary)
    return EXIT_OK


# ── Data ───────────────────────────────────────────────────────────────

def load_mnist_subset(config: ExperimentConfig) -> Tuple[np.ndarray, np.ndarray]:
    d = config.data
    if d.source != 'mnist':
        raise ConfigError("this command needs MNIST images", section='data', key='source')
    images, labels = load_mnist_split(d.mnist_dir, 'train')
    idx = subset_indices(images.shape[0], d.subset, d.subset_seed)
    return images[idx], labels[idx]


def load_mnist_test(config: ExperimentConfig) -> Tuple[np.ndarray, np.ndarray]:
    return load_mnist_split(config.data.mnist_dir, 'test')


def load_views(config: ExperimentConfig) -> Tuple[PairedDataset, PairedDataset]:
    """(train, held-out) paired views: MNIST halves of the training subset and of the test split,
    or a seeded split of the synthetic set."""
    d = config.data
    if d.source == 'synth':
        dataset, _ = synth_correlated(d.synth_n, d.synth_d1, d.synth_d2, len(d.synth_rho),
                                      d.synth_rho, d.synth_seed)
        return dataset.split(d.heldout_fraction, d.subset_seed)
    images, labels = load_mnist_subset(config)
    train = split_halves(images, labels)
    train.meta.update({'subset': len(train), 'subset_seed': d.subset_seed})
    return train, split_halves(*load_mnist_test(config))


# ── Soft CCA ───────────────────────────────────────────────────────────

def cmd_train_cca(inv: Invocation) -> int:
    config = inv.config
    train, heldout = load_views(config)
    with tracked_run(inv, 'train-cca') as record:
        if config.eval.oracle:
            oracle = linear_cca_fit(train.view1, train.view2, config.model.embed_dim,
                                    config.losses.ridge)
            report = correlation_strength(oracle.embed1(heldout.view1), oracle.embed2(heldout.view2))
            write_csv(inv.out_path('oracle.csv'), ['k', 'corr_strength_heldout'],
                      [{'k': config.model.embed_dim, 'corr_strength_heldout': report.total}])
            logger.info(f"Linear CCA oracle, held-out correlation strength {report.total:.4f}")
        trainer = SoftCcaTrainer(config, train, heldout=heldout,
                                 checkpoint_path=inv.out_path(CHECKPOINT_FILE))
        return _run_trainer(inv, record, trainer)


def cmd_train_linear_cca(inv: Invocation) -> int:
    config = inv.config
    train, heldout = load_views(config)
    with tracked_run(inv, 'train-linear-cca') as record:
        model = linear_cca_fit(train.view1, train.view2, config.model.embed_dim, config.losses.ridge)
        save_checkpoint(inv.out_path('linear_cca.ckpt'), model.to_checkpoint(config))
        report = correlation_strength(model.embed1(heldout.view1), model.embed2(heldout.view2))
        write_csv(inv.out_path('correlation.csv'), ['dim', 'corr'], report.rows())
        summary = {'corr_strength_heldout': report.total,
                   'canonical_correlations': model.canonical_correlations.tolist()}
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary=summary)
    return EXIT_OK


EVAL_MODES = ('correlation', 'crossview_l2r', 'crossview_r2l')


def _embedders(ckpt: Checkpoint, config: ExperimentConfig):
    if ckpt.kind == 'soft_cca':
        model = soft_cca_from_checkpoint(ckpt, trained_config(ckpt, config))
        return model.embed1, model.embed2, model.dims
    if ckpt.kind == 'linear_cca':
        model = LinearCcaModel.from_checkpoint(ckpt)
        return model.embed1, model.embed2, model.dims
    raise CompatibilityError(f"eval needs a soft_cca or linear_cca checkpoint, got {ckpt.kind!r}")


def cmd_eval(inv: Invocation) -> int:
    mode = inv.args.mode
    if mode not in EVAL_MODES:
        raise ConfigError(f"mode must be one of {', '.join(EVAL_MODES)}, got {mode!r}")
    ckpt = load_checkpoint(inv.args.checkpoint)
    config = inv.config
    embed1, embed2, dims = _embedders(ckpt, config)
    _, data = load_views(config)
    if tuple(dims) != data.dims:
        raise CompatibilityError(f"checkpoint expects views of {tuple(dims)}, data has {data.dims}")

    with tracked_run(inv, f'eval-{mode}') as record:
        if mode == 'correlation':
            report = correlation_strength(embed1(data.view1), embed2(data.view2))
            path = inv.out_path('eval_correlation.csv')
            write_csv(path, ['dim', 'corr'], report.rows())
            summary = {'total': report.total, 'upper_bound': report.upper_bound}
        else:
            direction = mode.split('_')[1]
            report = cross_view_eval(embed1, embed2, data, folds=config.eval.folds,
                                     direction=direction, seed=config.training.seed,
                                     classifier=partial(eval_classifier, config))
            path = inv.out_path(f'eval_crossview_{direction}.csv')
            write_csv(path, ['fold', 'accuracy'], report.rows())
            summary = {'mean': report.mean, 'std': report.std}
        logger.info(f"Wrote {path}")
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary=summary)
    return EXIT_OK


# ── FAE ────────────────────────────────────────────────────────────────

def cmd_train_fae(inv: Invocation) -> int:
    images, labels = load_mnist_subset(inv.config)
    with tracked_run(inv, 'train-fae') as record:
        trainer = FaeTrainer(inv.config, images, labels,
                             checkpoint_path=inv.out_path(CHECKPOINT_FILE))
        return _run_trainer(inv, record, trainer)


def _load_fae(inv: Invocation):
    ckpt = load_checkpoint(inv.args.checkpoint)
    if ckpt.kind != 'fae':
        raise CompatibilityError(f"expected an fae checkpoint, got {ckpt.kind!r}")
    return fae_from_checkpoint(ckpt, trained_config(ckpt, inv.config))


def cmd_fae_eval(inv: Invocation) -> int:
    model = _load_fae(inv)
    train = load_mnist_subset(inv.config)
    test = load_mnist_test(inv.config)
    if train[0].shape[1] != model.encoder.in_dim:
        raise CompatibilityError(f"model expects {model.encoder.in_dim} pixels, data has {train[0].shape[1]}")
    with tracked_run(inv, 'fae-eval') as record:
        report = disentanglement_eval(model, train, test,
                                      classifier=eval_classifier(inv.config, n_classes=model.p))
        write_csv(inv.out_path('fae_eval.csv'), ['acc_y', 'acc_z'], report.rows())
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED,
                                summary={'acc_y': report.acc_y, 'acc_z': report.acc_z})
    return EXIT_OK


def cmd_style_sheet(inv: Invocation) -> int:
    model = _load_fae(inv)
    images, _ = load_mnist_test(inv.config)
    n = min(inv.args.styles, images.shape[0])
    chosen = np.sort(np.random.default_rng(inv.config.training.seed).permutation(images.shape[0])[:n])
    with tracked_run(inv, 'style-sheet') as record:
        path = inv.out_path('style_sheet.pgm')
        write_pgm(path, style_sheet(model, images[chosen]))
        logger.info(f"Wrote {n}x{model.p} style sheet to {path}")
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary={'styles': n})
    return EXIT_OK


# ── MLP classifier ─────────────────────────────────────────────────────

def cmd_train_mlp(inv: Invocation) -> int:
    images, labels = load_mnist_subset(inv.config)
    test = load_mnist_test(inv.config)
    with tracked_run(inv, 'train-mlp') as record:
        trainer = MlpClassifierTrainer(inv.config, images, labels, test=test,
                                       checkpoint_path=inv.out_path(CHECKPOINT_FILE))
        return _run_trainer(inv, record, trainer)


# ── Tools ──────────────────────────────────────────────────────────────

def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def cmd_bench_decorr(inv: Invocation) -> int:
    a = inv.args
    with tracked_run(inv, 'bench-decorr') as record:
        rows, slopes = bench_decorr(_int_list(a.k), m=a.m, reps=a.reps, warmup=a.warmup,
                                    seed=inv.config.training.seed,
                                    threads=None if a.parallel else 1)
        write_csv(inv.out_path('bench_timing.csv'),
                  ['method', 'k', 'm', 'median_seconds', 'inner_reps'], [r.as_dict() for r in rows])
        write_csv(inv.out_path('bench_slopes.csv'), ['method', 'slope'],
                  [{'method': k, 'slope': v} for k, v in slopes.items()])
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary=slopes)
    return EXIT_OK


def cmd_gradcheck(inv: Invocation) -> int:
    with tracked_run(inv, 'gradcheck') as record:
        results = run_suite(seed=inv.config.training.seed)
        worst = summarize(results)
        for r in results:
            print(f"{r.name},{r.max_rel_error!r},{'ok' if r.passed else 'FAIL'}")
        failed = [r.name for r in results if not r.passed]
        status = RunStatus.COMPLETED if not failed else RunStatus.ERROR
        inv.registry.update_run(record.id, status=status, summary={'worst': worst},
                                error_msg=', '.join(failed))
    if failed:
        print(f"error: gradient check failed for {len(failed)} case(s)", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_fetch_mnist(inv: Invocation) -> int:
    dest = inv.args.dest or inv.config.data.mnist_dir
    with tracked_run(inv, 'fetch-mnist') as record:
        paths = fetch_mnist(dest, inv.args.base_url or DEFAULT_BASE_URL)
        inv.registry.update_run(record.id, status=RunStatus.COMPLETED, summary={'files': paths})
    return EXIT_OK


def cmd_runs(inv: Invocation) -> int:
    status = RunStatus(inv.args.status) if inv.args.status else None
    writer = csv.writer(sys.stdout, lineterminator='\n')
    writer.writerow(['id', 'command', 'status', 'out_dir', 'started_at', 'completed_at', 'error_msg'])
    for r in inv.registry.list_runs(status):
        writer.writerow([r.id, r.command, r.status.value, r.out_dir,
                         repr(r.started_at), repr(r.completed_at), r.error_msg])
    return EXIT_OK


COMMANDS: Dict[str, Any] = {
    'train-cca': cmd_train_cca,
    'train-linear-cca': cmd_train_linear_cca,
    'eval': cmd_eval,
    'train-fae': cmd_train_fae,
    'fae-eval': cmd_fae_eval,
    'style-sheet': cmd_style_sheet,
    'train-mlp': cmd_train_mlp,
    'bench-decorr': cmd_bench_decorr,
    'gradcheck': cmd_gradcheck,
    'fetch-mnist': cmd_fetch_mnist,
    'runs': cmd_runs,
}
