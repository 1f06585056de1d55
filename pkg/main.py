"""
Soft CCA Toolkit
Command-line entry point
"""
import argparse
import logging
import os
import sys
import warnings
from typing import List, Optional

warnings.filterwarnings('ignore', category=RuntimeWarning, module='threadpoolctl')

# Add project root to path
sys.path.insert(0, os.path.dirname(__file__))

from core.commands import COMMANDS, EVAL_MODES, EXIT_FAILED, EXIT_INTERRUPTED, Invocation, resolve_config
from core.database import REGISTRY_FILE, RunRegistry, RunStatus
from core.errors import SoftCcaError
from core.fetch import DEFAULT_BASE_URL
from core.file_manager import ensure_dir

LOG_FILE = 'softcca.log'
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'

logger = logging.getLogger('softcca')


def setup_logging(out_dir: str, verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(ensure_dir(out_dir), LOG_FILE), encoding='utf-8'),
            logging.StreamHandler(sys.stdout),
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help="INI experiment config")
    common.add_argument('--out', metavar='DIR', help="output directory (overrides [output] dir)")
    common.add_argument('--seed', type=int, help="overrides [training] seed")
    common.add_argument('--registry', metavar='PATH', default=REGISTRY_FILE, help="run registry database")
    common.add_argument('--verbose', action='store_true', help="per-step debug logging")

    trainable = argparse.ArgumentParser(add_help=False)
    trainable.add_argument('--resume', metavar='PATH', help="continue from a checkpoint")
    trainable.add_argument('--stop-at-step', type=int, metavar='N',
                           help="checkpoint and stop after N global steps")

    with_ckpt = argparse.ArgumentParser(add_help=False)
    with_ckpt.add_argument('--checkpoint', metavar='PATH', required=True)

    parser = argparse.ArgumentParser(prog='softcca', description="Soft CCA with stochastic decorrelation")
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('train-cca', parents=[common, trainable], help="train Soft CCA on paired views")
    sub.add_parser('train-linear-cca', parents=[common], help="fit the closed-form linear CCA baseline")
    p = sub.add_parser('eval', parents=[common, with_ckpt], help="correlation strength or cross-view recognition")
    p.add_argument('--mode', choices=EVAL_MODES, default='correlation')
    sub.add_parser('train-fae', parents=[common, trainable], help="train the factorisation autoencoder")
    sub.add_parser('fae-eval', parents=[common, with_ckpt], help="acc_y / acc_z disentanglement accuracies")
    p = sub.add_parser('style-sheet', parents=[common, with_ckpt], help="style-transfer image grid (PGM)")
    p.add_argument('--styles', type=int, default=10, help="number of source images (rows)")
    sub.add_parser('train-mlp', parents=[common, trainable], help="train the decorrelation-regularized MLP classifier")

    p = sub.add_parser('bench-decorr', parents=[common], help="time SDL against exact whitening over k")
    p.add_argument('--k', default='128,256,512,1024,2048', help="comma-separated embedding sizes")
    p.add_argument('--m', type=int, default=64, help="mini-batch size")
    p.add_argument('--reps', type=int, default=20)
    p.add_argument('--warmup', type=int, default=3)
    p.add_argument('--parallel', action='store_true', help="leave BLAS threading alone")

    sub.add_parser('gradcheck', parents=[common], help="finite-difference check of every gradient")
    p = sub.add_parser('fetch-mnist', parents=[common], help="download the MNIST IDX files")
    p.add_argument('--dest', metavar='DIR', help="defaults to [data] mnist_dir")
    p.add_argument('--base-url', default=DEFAULT_BASE_URL)
    p = sub.add_parser('runs', parents=[common], help="list registered runs as CSV")
    p.add_argument('--status', choices=[s.value for s in RunStatus])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    registry = None
    try:
        config, ckpt = resolve_config(args)
        setup_logging(config.output.dir, args.verbose)
        registry = RunRegistry(args.registry)
        inv = Invocation(args=args, config=config, registry=registry, resume=ckpt)
        return COMMANDS[args.command](inv)
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_INTERRUPTED
    except (SoftCcaError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    finally:
        if registry is not None:
            registry.close()


if __name__ == '__main__':
    sys.exit(main())
