"""
Decorrelation Losses - Stochastic decorrelation (accumulated covariance) plus DeCov, DeCovL1, DeCovGC, XCov
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError, StateError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.9


class Variant(Enum):
    SDL = "sdl"
    DECOV = "decov"
    DECOV_L1 = "decov_l1"
    DECOV_GC = "decov_gc"
    XCOV = "xcov"
    NONE = "none"


@dataclass
class SdlState:
    """
    Running covariance estimate.

    c_accu is the decayed sum of mini-batch covariances and norm_factor the
    matching decayed count, so c_accu / norm_factor approximates the
    full-batch covariance.
    """
    c_accu: np.ndarray
    norm_factor: float = 0.0
    alpha: float = DEFAULT_ALPHA
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"forgetting rate alpha must be in [0, 1), got {self.alpha}")

    @classmethod
    def zeros(cls, k: int, alpha: float = DEFAULT_ALPHA) -> "SdlState":
        return cls(c_accu=np.zeros((k, k)), norm_factor=0.0, alpha=alpha, step=0)

    @property
    def k(self) -> int:
        return self.c_accu.shape[0]

    @property
    def c_appx(self) -> np.ndarray:
        if self.step == 0:
            raise StateError("no mini-batch has been accumulated yet")
        return self.c_accu / self.norm_factor

    def reset(self) -> "SdlState":
        return SdlState.zeros(self.k, self.alpha)

    def scalars(self) -> Dict[str, float]:
        return {'norm_factor': self.norm_factor, 'alpha': self.alpha, 'step': self.step}

    @classmethod
    def restore(cls, c_accu: np.ndarray, scalars: Dict[str, float]) -> "SdlState":
        return cls(c_accu=np.array(c_accu, dtype=np.float64),
                   norm_factor=float(scalars['norm_factor']),
                   alpha=float(scalars['alpha']),
                   step=int(scalars['step']))


def _check_batch(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"activations must be 2-D, got shape {z.shape}")
    if z.shape[0] < 2:
        raise DegenerateInputError(f"covariance needs at least 2 rows, got {z.shape[0]}")
    return z


def off_diagonal(c: np.ndarray) -> np.ndarray:
    out = c.copy()
    np.fill_diagonal(out, 0.0)
    return out


def mean_abs_off_diagonal(c: np.ndarray) -> float:
    k = c.shape[0]
    if k < 2:
        return 0.0
    return float(np.abs(off_diagonal(c)).sum() / (k * (k - 1)))


def sign_matrix(c: np.ndarray) -> np.ndarray:
    """Entries in {-1, 0, +1}: sign of each off-diagonal element, zero diagonal."""
    return off_diagonal(np.sign(c))


def minibatch_cov(z: np.ndarray) -> np.ndarray:
    """Z^T Z / (m - 1) for already-centered activations."""
    z = _check_batch(z)
    c = z.T @ z / (z.shape[0] - 1)
    return 0.5 * (c + c.T)


def centered_cov(z: np.ndarray) -> np.ndarray:
    z = _check_batch(z)
    return minibatch_cov(z - z.mean(axis=0))


# ── Stochastic decorrelation ───────────────────────────────────────────

def sdl_update(state: SdlState, z: np.ndarray) -> Tuple[float, np.ndarray, SdlState]:
    """
    Fold one mini-batch into the running covariance.

    Returns (loss, c_appx, new_state); the input state is left untouched.
    The loss is the L1 norm of the off-diagonal part of c_appx.
    """
    z = _check_batch(z)
    if z.shape[1] != state.k:
        raise ShapeError(f"batch has {z.shape[1]} columns, state tracks {state.k}")
    c_accu = state.alpha * state.c_accu + minibatch_cov(z)
    norm_factor = state.alpha * state.norm_factor + 1.0
    c_appx = c_accu / norm_factor
    loss = float(np.abs(off_diagonal(c_appx)).sum())
    return loss, c_appx, SdlState(c_accu, norm_factor, state.alpha, state.step + 1)


def _check_update_pair(state: SdlState, c_appx: np.ndarray, z: np.ndarray):
    if state.step == 0:
        raise StateError("gradient requested before any sdl_update")
    if c_appx.shape != (state.k, state.k) or z.shape[1] != state.k:
        raise StateError(f"state tracks k={state.k}, got c_appx {c_appx.shape} and batch {z.shape}")
    if not np.allclose(c_appx, state.c_accu / state.norm_factor, rtol=1e-12, atol=1e-12,
                       equal_nan=True):
        raise StateError("c_appx does not belong to this state")


def sdl_gradient(state: SdlState, c_appx: np.ndarray, z: np.ndarray) -> np.ndarray:
    """
    dL/dZ for the loss returned by the matching sdl_update call.

    Only the current batch's covariance carries gradient; the decayed history
    is a constant. The off-diagonal sum counts each pair twice, hence the 2.
    """
    z = _check_batch(z)
    _check_update_pair(state, c_appx, z)
    m = z.shape[0]
    return (2.0 / (state.norm_factor * (m - 1))) * (z @ sign_matrix(c_appx))


# ── Mini-batch competitors ─────────────────────────────────────────────

def decov_loss_grad(z: np.ndarray, variant: Variant,
                    state: Optional[SdlState] = None) -> Tuple[float, np.ndarray, Optional[SdlState]]:
    """
    DeCov family on the mini-batch covariance of ``z``.

    decov:    1/2 * sum_{i!=j} C[i,j]^2
    decov_l1: sum_{i!=j} |C[i,j]|
    decov_gc: decov on the accumulated estimate, history held constant

    Returns (loss, grad, state); state is the advanced accumulator for
    decov_gc and the untouched input otherwise.
    """
    z = _check_batch(z)
    m = z.shape[0]
    if variant == Variant.DECOV:
        c_off = off_diagonal(minibatch_cov(z))
        return 0.5 * float(np.sum(c_off ** 2)), (2.0 / (m - 1)) * (z @ c_off), state
    if variant == Variant.DECOV_L1:
        c = minibatch_cov(z)
        return float(np.abs(off_diagonal(c)).sum()), (2.0 / (m - 1)) * (z @ sign_matrix(c)), state
    if variant == Variant.DECOV_GC:
        if state is None:
            raise ConfigError("decov_gc needs an accumulator state")
        _, c_appx, new_state = sdl_update(state, z)
        c_off = off_diagonal(c_appx)
        loss = 0.5 * float(np.sum(c_off ** 2))
        grad = (2.0 / (new_state.norm_factor * (m - 1))) * (z @ c_off)
        return loss, grad, new_state
    raise ConfigError(f"decov_loss_grad does not handle variant {variant.value!r}")


def xcov_loss_grad(y_code: np.ndarray, z_code: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """1/2 * sum of squared cross-covariances between two code blocks."""
    y_code = np.asarray(y_code, dtype=np.float64)
    z_code = np.asarray(z_code, dtype=np.float64)
    if y_code.ndim != 2 or z_code.ndim != 2 or y_code.shape[0] != z_code.shape[0]:
        raise ShapeError(f"code blocks must share rows: {y_code.shape} vs {z_code.shape}")
    m = y_code.shape[0]
    if m < 2:
        raise DegenerateInputError(f"cross-covariance needs at least 2 rows, got {m}")
    yc = y_code - y_code.mean(axis=0)
    zc = z_code - z_code.mean(axis=0)
    cross = yc.T @ zc / (m - 1)
    loss = 0.5 * float(np.sum(cross ** 2))
    return loss, zc @ cross.T / (m - 1), yc @ cross / (m - 1)


def decorrelation_loss_grad(z: np.ndarray, variant: Variant, state: SdlState,
                            split: Optional[int] = None) -> Tuple[float, np.ndarray, SdlState]:
    """
    Loss and dL/dz of any variant, given the accumulator before this batch.

    Pure: the advanced accumulator is returned, never written back. Variants
    that ignore the history still advance it so the running off-diagonal
    level can be monitored.
    """
    if variant == Variant.SDL:
        loss, c_appx, new_state = sdl_update(state, z)
        return loss, sdl_gradient(new_state, c_appx, z), new_state
    if variant == Variant.DECOV_GC:
        return decov_loss_grad(z, variant, state)

    _, _, new_state = sdl_update(state, z)
    if variant in (Variant.DECOV, Variant.DECOV_L1):
        loss, grad, _ = decov_loss_grad(z, variant)
        return loss, grad, new_state
    if variant == Variant.XCOV:
        if split is None or not 0 < split < z.shape[1]:
            raise ConfigError(f"xcov needs a split point inside (0, {z.shape[1]}), got {split}")
        loss, grad_y, grad_z = xcov_loss_grad(z[:, :split], z[:, split:])
        return loss, np.hstack([grad_y, grad_z]), new_state
    return 0.0, np.zeros_like(z), new_state


# ── Trainer-facing wrapper ─────────────────────────────────────────────

class Decorrelator:
    """
    One decorrelation term bound to its variant and accumulator.

    ``split`` is the y/z boundary used by XCov.
    """

    def __init__(self, variant: Variant, k: int, alpha: float = DEFAULT_ALPHA,
                 split: Optional[int] = None):
        if variant == Variant.XCOV and (split is None or not 0 < split < k):
            raise ConfigError(f"xcov needs a split point inside (0, {k}), got {split}")
        self.variant = variant
        self.split = split
        self.state = SdlState.zeros(k, alpha)

    def evaluate(self, z: np.ndarray) -> Tuple[float, np.ndarray, SdlState]:
        """Loss, gradient and advanced state for ``z``; the held state is not touched."""
        return decorrelation_loss_grad(z, self.variant, self.state, self.split)

    def step(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        loss, grad, self.state = self.evaluate(z)
        return loss, grad

    def offdiag_level(self) -> float:
        return mean_abs_off_diagonal(self.state.c_appx) if self.state.step else 0.0

    def reset(self):
        self.state = self.state.reset()
