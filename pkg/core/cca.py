"""
Soft CCA - L2 view alignment with soft decorrelation, closed-form linear CCA, exact whitening, evaluators
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import Checkpoint, prefixed, unprefixed
from .classifier import SoftmaxClassifier
from .config import ExperimentConfig
from .data import PairedDataset
from .decorr import Decorrelator, SdlState, Variant, decorrelation_loss_grad, minibatch_cov
from .errors import CompatibilityError, ConfigError, DegenerateInputError, ShapeError
from .linalg import DEFAULT_RIDGE, inv_sqrt_sym, pearson, sym_eig
from .nn import MlpModel, Mode, Optimizer, init_model, mlp_spec
from .training import TrainingLoop

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-10


def l2_dist_loss(z1: np.ndarray, z2: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """(1/2m)·||Z1 - Z2||² and its gradients; the 1/m keeps lambda independent of batch size."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"embeddings must share a 2-D shape: {z1.shape} vs {z2.shape}")
    m = z1.shape[0]
    diff = z1 - z2
    loss = float(np.sum(diff ** 2)) / (2.0 * m)
    grad = diff / m
    return loss, grad, -grad


# ── Evaluation metrics ─────────────────────────────────────────────────

@dataclass
class CorrelationReport:
    per_dim: List[float]
    total: float
    upper_bound: int

    def rows(self) -> List[Dict[str, Any]]:
        out: List[Dict[str, Any]] = [{'dim': i, 'corr': c} for i, c in enumerate(self.per_dim)]
        out.append({'dim': 'total', 'corr': self.total})
        out.append({'dim': 'upper_bound', 'corr': float(self.upper_bound)})
        return out


def correlation_strength(z1: np.ndarray, z2: np.ndarray) -> CorrelationReport:
    """Sum of per-dimension Pearson correlations between paired embeddings."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"embeddings must share a 2-D shape: {z1.shape} vs {z2.shape}")
    per_dim = []
    for d in range(z1.shape[1]):
        try:
            per_dim.append(pearson(z1[:, d], z2[:, d]))
        except DegenerateInputError:
            per_dim.append(0.0)
    return CorrelationReport(per_dim=per_dim, total=float(sum(per_dim)), upper_bound=z1.shape[1])


def exact_decorrelation_step(z: np.ndarray, ridge: float = 0.0, method: str = "auto") -> np.ndarray:
    """Hard whitening Z·(C_mini + ridge·I)^(-1/2); the eigendecomposition makes it O(k³)."""
    return z @ inv_sqrt_sym(minibatch_cov(z), ridge=ridge, method=method)


# ── Linear CCA oracle ──────────────────────────────────────────────────

@dataclass
class LinearCcaModel:
    w1: np.ndarray
    w2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray
    canonical_correlations: np.ndarray

    @property
    def embed_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.w1.shape[0], self.w2.shape[0]

    def embed1(self, x1: np.ndarray) -> np.ndarray:
        return (x1 - self.mean1) @ self.w1

    def embed2(self, x2: np.ndarray) -> np.ndarray:
        return (x2 - self.mean2) @ self.w2

    def to_checkpoint(self, config: ExperimentConfig) -> Checkpoint:
        return Checkpoint(kind='linear_cca',
                          header={'config': config.to_dict(), 'dims': list(self.dims),
                                  'embed_dim': self.embed_dim},
                          tensors={'w1': self.w1, 'w2': self.w2, 'mean1': self.mean1,
                                   'mean2': self.mean2, 'rho': self.canonical_correlations})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "LinearCcaModel":
        t = ckpt.tensors
        return cls(w1=t['w1'], w2=t['w2'], mean1=t['mean1'], mean2=t['mean2'],
                   canonical_correlations=t['rho'])


def linear_cca_fit(x1: np.ndarray, x2: np.ndarray, k: int,
                   ridge: float = DEFAULT_RIDGE) -> LinearCcaModel:
    """
    Top-k canonical pairs from the whitened cross-covariance
    T = S11^(-1/2) S12 S22^(-1/2).

    Left singular vectors come from the eigenvectors of T·Tᵀ; each right
    vector is Tᵀu/sigma, so the pair is sign-aligned by construction. When
    sigma vanishes the eigenvectors of TᵀT stand in.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[0] != x2.shape[0]:
        raise ShapeError(f"views must share rows: {x1.shape} vs {x2.shape}")
    n, d1 = x1.shape
    d2 = x2.shape[1]
    if n < 2:
        raise DegenerateInputError(f"linear CCA needs at least 2 samples, got {n}")
    if not 1 <= k <= min(d1, d2):
        raise ConfigError(f"k={k} must be in [1, min(d1, d2)={min(d1, d2)}]")

    mean1, mean2 = x1.mean(axis=0), x2.mean(axis=0)
    c1, c2 = x1 - mean1, x2 - mean2
    s11 = c1.T @ c1 / (n - 1)
    s22 = c2.T @ c2 / (n - 1)
    s12 = c1.T @ c2 / (n - 1)
    a = inv_sqrt_sym(s11, ridge=ridge)
    b = inv_sqrt_sym(s22, ridge=ridge)
    t = a @ s12 @ b

    evals, u = sym_eig(t @ t.T)
    sigma = np.sqrt(np.clip(evals[:k], 0.0, None))
    u_k = u[:, :k]
    v_k = np.empty((d2, k))
    weak = sigma <= SINGULAR_TOL
    v_k[:, ~weak] = (t.T @ u_k[:, ~weak]) / sigma[~weak]
    if np.any(weak):
        _, v_all = sym_eig(t.T @ t)
        v_k[:, weak] = v_all[:, :k][:, weak]

    rho = np.clip(sigma, 0.0, 1.0)
    logger.info(f"Linear CCA fit on {n} pairs, k={k}: top correlation {rho[0]:.4f}, sum {rho.sum():.4f}")
    return LinearCcaModel(w1=a @ u_k, w2=b @ v_k, mean1=mean1, mean2=mean2,
                          canonical_correlations=rho)


# ── Soft CCA model ─────────────────────────────────────────────────────

@dataclass
class SoftCcaModel:
    branch1: MlpModel
    branch2: MlpModel
    decorr1: Decorrelator
    decorr2: Decorrelator
    lam: float
    embed_dim: int

    def __post_init__(self):
        k = self.embed_dim
        if self.branch1.out_dim != k or self.branch2.out_dim != k:
            raise ShapeError(f"both branches must output {k} dims, got "
                             f"{self.branch1.out_dim} and {self.branch2.out_dim}")
        if self.decorr1.state.k != k or self.decorr2.state.k != k:
            raise ShapeError(f"decorrelation states must be {k}x{k}")

    @property
    def sdl1(self) -> SdlState:
        return self.decorr1.state

    @property
    def sdl2(self) -> SdlState:
        return self.decorr2.state

    @property
    def dims(self) -> Tuple[int, int]:
        return self.branch1.in_dim, self.branch2.in_dim

    def embed1(self, x1: np.ndarray) -> np.ndarray:
        return self.branch1.embed(x1)

    def embed2(self, x2: np.ndarray) -> np.ndarray:
        return self.branch2.embed(x2)


def branch_sizes(config: ExperimentConfig, in_dim: int) -> List[int]:
    k = config.model.embed_dim
    return [in_dim, k] if config.model.linear else [in_dim, *config.model.hidden, k]


def build_soft_cca_model(config: ExperimentConfig, d1: int, d2: int) -> SoftCcaModel:
    """Two branches ending in a fixed-scale batchnorm; branch 2 is seeded one past branch 1."""
    variant = config.variant
    if variant == Variant.XCOV:
        raise ConfigError("xcov decorrelates two code factors; Soft CCA embeddings have one",
                          section='losses', key='variant')
    k = config.model.embed_dim
    seed = config.training.seed
    alpha = config.losses.alpha
    return SoftCcaModel(
        branch1=init_model(mlp_spec(branch_sizes(config, d1), batchnorm_output=True), seed),
        branch2=init_model(mlp_spec(branch_sizes(config, d2), batchnorm_output=True), seed + 1),
        decorr1=Decorrelator(variant, k, alpha),
        decorr2=Decorrelator(variant, k, alpha),
        lam=config.losses.lam,
        embed_dim=k,
    )


def soft_cca_objective(model: SoftCcaModel, x1: np.ndarray, x2: np.ndarray,
                       update_running: bool = False
                       ) -> Tuple[Dict[str, float], Dict[str, Dict[str, np.ndarray]], Tuple[SdlState, SdlState]]:
    """
    One evaluation of L_dist + lam·(D(Z1) + D(Z2)) with parameter gradients.

    The decorrelation accumulators are read but not written; the advanced
    states come back as the third element for the caller to commit.
    """
    variant = model.decorr1.variant
    t1 = model.branch1.forward(x1, Mode.TRAIN, update_running)
    t2 = model.branch2.forward(x2, Mode.TRAIN, update_running)
    z1, z2 = t1.output, t2.output
    dist, g1, g2 = l2_dist_loss(z1, z2)
    s1, d1, state1 = decorrelation_loss_grad(z1, variant, model.decorr1.state)
    s2, d2, state2 = decorrelation_loss_grad(z2, variant, model.decorr2.state)
    total = dist + model.lam * (s1 + s2)
    grads1, _ = model.branch1.backward(t1, g1 + model.lam * d1)
    grads2, _ = model.branch2.backward(t2, g2 + model.lam * d2)
    metrics = {'dist_loss': dist, 'sdl1': s1, 'sdl2': s2, 'total': total}
    return metrics, {'branch1': grads1, 'branch2': grads2}, (state1, state2)


class SoftCcaTrainer(TrainingLoop):
    kind = 'soft_cca'
    columns = ('dist_loss', 'sdl1', 'sdl2', 'total')
    epoch_columns = ('corr_strength_heldout',)

    def __init__(self, config: ExperimentConfig, data: PairedDataset,
                 heldout: Optional[PairedDataset] = None,
                 model: Optional[SoftCcaModel] = None, **kwargs):
        super().__init__(config, **kwargs)
        self.data = data
        self.heldout = heldout
        self.model = model or build_soft_cca_model(config, *data.dims)
        if self.model.dims != data.dims:
            raise CompatibilityError(f"model expects views of {self.model.dims}, data has {data.dims}")
        t = config.training
        self.opt1 = Optimizer(lr=t.lr, momentum=t.momentum)
        self.opt2 = Optimizer(lr=t.lr, momentum=t.momentum)

    def _n_rows(self) -> int:
        return len(self.data)

    def _train_step(self, idx: np.ndarray) -> Dict[str, float]:
        model = self.model
        metrics, grads, (state1, state2) = soft_cca_objective(
            model, self.data.view1[idx], self.data.view2[idx], update_running=True)
        self._guard(metrics['total'])
        model.decorr1.state = state1
        model.decorr2.state = state2
        self.opt1.step(model.branch1, grads['branch1'])
        self.opt2.step(model.branch2, grads['branch2'])
        return metrics

    def _epoch_metrics(self) -> Dict[str, Any]:
        if self.heldout is None:
            return {'corr_strength_heldout': None}
        report = correlation_strength(self.model.embed1(self.heldout.view1),
                                      self.model.embed2(self.heldout.view2))
        return {'corr_strength_heldout': report.total}

    def _reset_accumulators(self):
        self.model.decorr1.reset()
        self.model.decorr2.reset()

    def _model_arrays(self) -> Dict[str, np.ndarray]:
        m = self.model
        return {
            **prefixed(m.branch1.state_arrays(), 'branch1.'),
            **prefixed(m.branch2.state_arrays(), 'branch2.'),
            **self.opt1.state_arrays('opt1.'),
            **self.opt2.state_arrays('opt2.'),
            'sdl1.c_accu': m.sdl1.c_accu,
            'sdl2.c_accu': m.sdl2.c_accu,
        }

    def _load_model(self, arrays: Dict[str, np.ndarray], header: Dict[str, Any]):
        m = self.model
        m.branch1.load_arrays(unprefixed(arrays, 'branch1.'))
        m.branch2.load_arrays(unprefixed(arrays, 'branch2.'))
        self.opt1.load_arrays(arrays, 'opt1.')
        self.opt2.load_arrays(arrays, 'opt2.')
        m.decorr1.state = SdlState.restore(arrays['sdl1.c_accu'], header['sdl1'])
        m.decorr2.state = SdlState.restore(arrays['sdl2.c_accu'], header['sdl2'])

    def _header_state(self) -> Dict[str, Any]:
        return {'sdl1': self.model.sdl1.scalars(), 'sdl2': self.model.sdl2.scalars(),
                'dims': list(self.model.dims), 'embed_dim': self.model.embed_dim}


def soft_cca_train(config: ExperimentConfig, data: PairedDataset,
                   heldout: Optional[PairedDataset] = None,
                   **kwargs) -> Tuple[SoftCcaModel, List[Dict[str, Any]]]:
    trainer = SoftCcaTrainer(config, data, heldout=heldout, **kwargs)
    history = trainer.run()
    return trainer.model, history


def soft_cca_from_checkpoint(ckpt: Checkpoint, config: ExperimentConfig) -> SoftCcaModel:
    d1, d2 = ckpt.header['dims']
    model = build_soft_cca_model(config, d1, d2)
    model.branch1.load_arrays(unprefixed(ckpt.tensors, 'branch1.'))
    model.branch2.load_arrays(unprefixed(ckpt.tensors, 'branch2.'))
    model.decorr1.state = SdlState.restore(ckpt.tensors['sdl1.c_accu'], ckpt.header['sdl1'])
    model.decorr2.state = SdlState.restore(ckpt.tensors['sdl2.c_accu'], ckpt.header['sdl2'])
    return model


# ── Cross-view recognition ─────────────────────────────────────────────

EmbedFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class CrossViewReport:
    direction: str
    accuracies: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def rows(self) -> List[Dict[str, Any]]:
        out: List[Dict[str, Any]] = [{'fold': i, 'accuracy': a} for i, a in enumerate(self.accuracies)]
        out.append({'fold': 'mean', 'accuracy': self.mean})
        out.append({'fold': 'std', 'accuracy': self.std})
        return out


def fold_indices(n: int, folds: int, seed: int) -> List[np.ndarray]:
    if not 2 <= folds <= n:
        raise ConfigError(f"need 2 <= folds <= {n}, got {folds}")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(order, folds)]


def cross_view_eval(embed1: EmbedFn, embed2: EmbedFn, data: PairedDataset, folds: int = 5,
                    direction: str = 'l2r', seed: int = 0,
                    classifier: Optional[Callable[[], SoftmaxClassifier]] = None) -> CrossViewReport:
    """
    Train a linear classifier on one view's embeddings and test it on the other's.

    ``l2r`` fits on view 1 and scores on view 2, ``r2l`` the reverse. Each
    fold is held out once; the classifier fits on the remaining folds.
    """
    if data.labels is None:
        raise DegenerateInputError("cross-view recognition needs labelled data")
    if direction == 'l2r':
        source, target = embed1(data.view1), embed2(data.view2)
    elif direction == 'r2l':
        source, target = embed2(data.view2), embed1(data.view1)
    else:
        raise ConfigError(f"direction must be 'l2r' or 'r2l', got {direction!r}")

    make = classifier or SoftmaxClassifier
    report = CrossViewReport(direction=direction)
    parts = fold_indices(len(data), folds, seed)
    for i, test_idx in enumerate(parts):
        train_idx = np.concatenate([p for j, p in enumerate(parts) if j != i])
        clf = make().fit(source[train_idx], data.labels[train_idx])
        acc = clf.score(target[test_idx], data.labels[test_idx])
        report.accuracies.append(acc)
        logger.debug(f"cross-view {direction} fold {i}: {acc:.2f}%")
    logger.info(f"Cross-view {direction}: {report.mean:.2f}% +/- {report.std:.2f} over {folds} folds")
    return report
