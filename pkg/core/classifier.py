"""
Classifiers - Linear softmax classifier for embeddings and codes, SDL-regularized MLP classifier
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import prefixed, unprefixed
from .config import ExperimentConfig
from .data import BatchPlan, batch_indices
from .decorr import Decorrelator, SdlState, Variant
from .errors import ConfigError, DegenerateInputError, ShapeError
from .nn import (LayerKind, LayerSpec, MlpModel, Mode, Optimizer, init_model, mlp_spec,
                 softmax_cross_entropy)
from .training import TrainingLoop

logger = logging.getLogger(__name__)

N_CLASSES = 10


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of matching entries."""
    if predicted.shape != labels.shape:
        raise ShapeError(f"{predicted.shape} predictions for {labels.shape} labels")
    if labels.size == 0:
        return 0.0
    return 100.0 * float(np.mean(predicted == labels))


class SoftmaxClassifier:
    """
    Multinomial logistic regression on standardized features.

    Trained with mini-batch SGD plus momentum and an L2 weight penalty; the
    weights start at zero so a fit is a deterministic function of the data
    and ``seed``.
    """

    def __init__(self, n_classes: Optional[int] = None, epochs: int = 30, lr: float = 0.1,
                 l2: float = 1e-4, batch_size: int = 100, momentum: float = 0.9, seed: int = 0):
        self.n_classes = n_classes
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2
        self.batch_size = batch_size
        self.momentum = momentum
        self.seed = seed
        self.model: Optional[MlpModel] = None
        self.mean: Optional[np.ndarray] = None
        self.scale: Optional[np.ndarray] = None

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def fit(self, x: np.ndarray, labels: np.ndarray) -> "SoftmaxClassifier":
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] != labels.shape[0]:
            raise ShapeError(f"features {x.shape} do not match {labels.shape[0]} labels")
        if np.unique(labels).size < 2:
            raise DegenerateInputError("classifier training data holds a single class")
        n_classes = self.n_classes or int(labels.max()) + 1

        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        xs = self._standardize(x)

        self.model = MlpModel(mlp_spec([x.shape[1], n_classes]))
        opt = Optimizer(lr=self.lr, momentum=self.momentum)
        n = x.shape[0]
        plan = BatchPlan(batch_size=max(2, min(self.batch_size, n)), seed=self.seed, drop_last=False)
        for epoch in range(self.epochs):
            for idx in batch_indices(n, plan, epoch):
                trace = self.model.forward(xs[idx], Mode.TRAIN)
                _, grad = softmax_cross_entropy(trace.output, labels[idx])
                grads, _ = self.model.backward(trace, grad)
                grads['0.weight'] = grads['0.weight'] + self.l2 * self.model.layers[0].weight
                opt.step(self.model, grads)
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise ConfigError("classifier used before fit")
        return self.model.embed(self._standardize(np.asarray(x, dtype=np.float64)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_function(x), axis=1)

    def score(self, x: np.ndarray, labels: np.ndarray) -> float:
        return accuracy(self.predict(x), np.asarray(labels, dtype=np.int64))


def eval_classifier(config: ExperimentConfig, n_classes: Optional[int] = None) -> SoftmaxClassifier:
    """An unfitted linear classifier with the [eval] section's settings."""
    e = config.eval
    return SoftmaxClassifier(n_classes=n_classes, epochs=e.classifier_epochs, lr=e.classifier_lr,
                             l2=e.classifier_l2, seed=config.training.seed)


# ── SDL-regularized MLP classifier ─────────────────────────────────────

@dataclass
class MlpClassifierModel:
    """Trunk ending in batchnorm (the decorrelated layer) and a ReLU + affine head."""
    trunk: MlpModel
    head: MlpModel
    decorrelator: Decorrelator
    lam: float

    def logits(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        chunks = [self.head.forward(self.trunk.forward(x[i:i + batch_size], Mode.EVAL).output,
                                    Mode.EVAL).output
                  for i in range(0, x.shape[0], batch_size)]
        return np.vstack(chunks)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def build_mlp_classifier(config: ExperimentConfig, in_dim: int,
                         n_classes: int = N_CLASSES) -> MlpClassifierModel:
    variant = config.variant
    if variant == Variant.XCOV:
        raise ConfigError("xcov needs a factorised code; the MLP classifier has none",
                          section='losses', key='variant')
    hidden = list(config.model.mlp_hidden)
    if not hidden:
        raise ConfigError("the MLP classifier needs at least one hidden layer",
                          section='model', key='mlp_hidden')
    width = hidden[-1]
    seed = config.training.seed
    trunk = init_model(mlp_spec([in_dim, *hidden], batchnorm_output=True), seed)
    head = init_model([LayerSpec(LayerKind.RELU, width, width),
                       LayerSpec(LayerKind.AFFINE, width, n_classes)], seed + 1)
    return MlpClassifierModel(trunk=trunk, head=head,
                              decorrelator=Decorrelator(variant, width, config.losses.alpha),
                              lam=config.losses.lam)


class MlpClassifierTrainer(TrainingLoop):
    kind = 'mlp_classifier'
    columns = ('cla_loss', 'decorr_loss', 'total')
    epoch_columns = ('test_acc',)

    def __init__(self, config: ExperimentConfig, images: np.ndarray, labels: np.ndarray,
                 test: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 model: Optional[MlpClassifierModel] = None, **kwargs):
        super().__init__(config, **kwargs)
        self.images = images
        self.labels = labels
        self.test = test
        self.model = model or build_mlp_classifier(config, images.shape[1])
        t = config.training
        self.opt_trunk = Optimizer(lr=t.lr, momentum=t.momentum)
        self.opt_head = Optimizer(lr=t.lr, momentum=t.momentum)

    def _n_rows(self) -> int:
        return self.images.shape[0]

    def _train_step(self, idx: np.ndarray) -> Dict[str, float]:
        model = self.model
        t_trunk = model.trunk.forward(self.images[idx], Mode.TRAIN)
        t_head = model.head.forward(t_trunk.output, Mode.TRAIN)
        cla, g_logits = softmax_cross_entropy(t_head.output, self.labels[idx])
        dec, g_dec, new_state = model.decorrelator.evaluate(t_trunk.output)
        total = cla + model.lam * dec
        self._guard(total)
        model.decorrelator.state = new_state

        grads_head, g_feat = model.head.backward(t_head, g_logits)
        grads_trunk, _ = model.trunk.backward(t_trunk, g_feat + model.lam * g_dec)
        self.opt_head.step(model.head, grads_head)
        self.opt_trunk.step(model.trunk, grads_trunk)
        return {'cla_loss': cla, 'decorr_loss': dec, 'total': total}

    def _epoch_metrics(self) -> Dict[str, Any]:
        if self.test is None:
            return {'test_acc': None}
        return {'test_acc': mlp_classifier_eval(self.model, *self.test)}

    def _reset_accumulators(self):
        self.model.decorrelator.reset()

    def _model_arrays(self) -> Dict[str, np.ndarray]:
        m = self.model
        return {
            **prefixed(m.trunk.state_arrays(), 'trunk.'),
            **prefixed(m.head.state_arrays(), 'head.'),
            **self.opt_trunk.state_arrays('opt_trunk.'),
            **self.opt_head.state_arrays('opt_head.'),
            'decorr.c_accu': m.decorrelator.state.c_accu,
        }

    def _load_model(self, arrays: Dict[str, np.ndarray], header: Dict[str, Any]):
        self.model.trunk.load_arrays(unprefixed(arrays, 'trunk.'))
        self.model.head.load_arrays(unprefixed(arrays, 'head.'))
        self.opt_trunk.load_arrays(arrays, 'opt_trunk.')
        self.opt_head.load_arrays(arrays, 'opt_head.')
        self.model.decorrelator.state = SdlState.restore(arrays['decorr.c_accu'], header['decorr'])

    def _header_state(self) -> Dict[str, Any]:
        return {'decorr': self.model.decorrelator.state.scalars(), 'in_dim': self.model.trunk.in_dim}


def mlp_classifier_train(config: ExperimentConfig, images: np.ndarray, labels: np.ndarray,
                         test: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                         **kwargs) -> Tuple[MlpClassifierModel, List[Dict[str, Any]]]:
    trainer = MlpClassifierTrainer(config, images, labels, test=test, **kwargs)
    history = trainer.run()
    return trainer.model, history


def mlp_classifier_eval(model: MlpClassifierModel, images: np.ndarray, labels: np.ndarray) -> float:
    return accuracy(model.predict(images), np.asarray(labels, dtype=np.int64))
