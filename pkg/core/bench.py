"""
Decorrelation Benchmark - Per-iteration timing of SDL vs exact whitening across embedding sizes
"""
import logging
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .cca import exact_decorrelation_step
from .decorr import SdlState, sdl_gradient, sdl_update
from .errors import ConfigError
from .file_manager import format_duration
from .linalg import DEFAULT_RIDGE

logger = logging.getLogger(__name__)

METHODS = ('sdl', 'exact')
MIN_TIMED_SECONDS = 1e-3
MAX_INNER_REPS = 1 << 16


@dataclass
class TimingRow:
    method: str
    k: int
    m: int
    median_seconds: float
    inner_reps: int

    def as_dict(self) -> Dict[str, object]:
        return {'method': self.method, 'k': self.k, 'm': self.m,
                'median_seconds': self.median_seconds, 'inner_reps': self.inner_reps}


def sdl_iteration(state: SdlState, z: np.ndarray) -> SdlState:
    """One SDL update plus its gradient: O(m k²)."""
    _, c_appx, new_state = sdl_update(state, z)
    sdl_gradient(new_state, c_appx, z)
    return new_state


def calibrate_inner_reps(fn: Callable[[], object], min_seconds: float = MIN_TIMED_SECONDS) -> int:
    """Smallest power of two of calls that the clock resolves to at least ``min_seconds``."""
    inner = 1
    while inner < MAX_INNER_REPS:
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        if time.perf_counter() - start >= min_seconds:
            break
        inner *= 2
    return inner


def time_kernel(fn: Callable[[], object], reps: int, warmup: int) -> Tuple[float, int]:
    """Median seconds per call over ``reps`` timed blocks."""
    for _ in range(warmup):
        fn()
    inner = calibrate_inner_reps(fn)
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - start) / inner)
    return statistics.median(samples), inner


def loglog_slope(ks: Sequence[int], seconds: Sequence[float]) -> float:
    """Least-squares exponent b of seconds ~ a·k^b."""
    slope, _ = np.polyfit(np.log(np.asarray(ks, dtype=np.float64)),
                          np.log(np.asarray(seconds, dtype=np.float64)), 1)
    return float(slope)


def _validate(k_list: Sequence[int], m: int, reps: int, warmup: int):
    if len(k_list) < 2 or any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ConfigError(f"k_list must hold at least two ascending sizes, got {list(k_list)}")
    if m < 2:
        raise ConfigError(f"mini-batch size must be at least 2, got {m}")
    if reps < 1 or warmup < 0:
        raise ConfigError(f"need reps >= 1 and warmup >= 0, got reps={reps} warmup={warmup}")
    if len(k_list) < 4 or k_list[-1] < 8 * k_list[0]:
        logger.warning("fewer than 4 sizes or under an 8x range; slopes will be noisy")
    if reps < 20:
        logger.warning(f"only {reps} timed repetitions; medians will be noisy")


def bench_decorr(k_list: Sequence[int], m: int = 64, reps: int = 20, warmup: int = 3,
                 seed: int = 0, threads: Optional[int] = 1,
                 ridge: float = DEFAULT_RIDGE) -> Tuple[List[TimingRow], Dict[str, float]]:
    """
    Time one SDL iteration and one exact whitening step per k at fixed m.

    BLAS/LAPACK run on ``threads`` threads (one by default so the fitted
    exponents reflect operation counts); ``None`` leaves the pools alone.
    """
    _validate(k_list, m, reps, warmup)
    rng = np.random.default_rng(seed)
    rows: List[TimingRow] = []
    started = time.monotonic()
    with threadpool_limits(limits=threads):
        for k in k_list:
            z = rng.standard_normal((m, k))
            z -= z.mean(axis=0)
            # history is irrelevant to cost; keep a warmed state fixed across reps
            state = sdl_iteration(SdlState.zeros(k), z)

            kernels = {
                'sdl': lambda: sdl_iteration(state, z),
                'exact': lambda: exact_decorrelation_step(z, ridge=ridge),
            }
            for method in METHODS:
                median, inner = time_kernel(kernels[method], reps, warmup)
                rows.append(TimingRow(method, k, m, median, inner))
                logger.info(f"bench {method} k={k} m={m}: {median:.3e} s/iter ({inner} inner reps)")

    slopes = {}
    for method in METHODS:
        timed = [r for r in rows if r.method == method]
        slopes[method] = loglog_slope([r.k for r in timed], [r.median_seconds for r in timed])
        logger.info(f"bench {method}: log-log slope {slopes[method]:.3f}")
    logger.info(f"Benchmark finished in {format_duration(time.monotonic() - started)}")
    return rows, slopes
