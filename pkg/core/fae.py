"""
Factorisation Autoencoder - Class code y and style code z, decorrelated on the batch-normalized code
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import Checkpoint, prefixed, unprefixed
from .classifier import N_CLASSES, SoftmaxClassifier, accuracy
from .config import ExperimentConfig
from .data import IMAGE_SIDE
from .decorr import Decorrelator, SdlState, Variant, decorrelation_loss_grad
from .errors import ConfigError, ShapeError
from .file_manager import tile_images
from .nn import (LayerKind, LayerSpec, MlpModel, Mode, Optimizer, init_model, mlp_spec,
                 softmax_cross_entropy)
from .training import TrainingLoop

logger = logging.getLogger(__name__)


@dataclass
class FaeModel:
    """
    Encoder to the code [y, z], decoder back to pixels, and a fixed-scale
    batchnorm on the code that feeds only the decorrelation term. The decoder
    and the classifier see the raw code.
    """
    encoder: MlpModel
    decoder: MlpModel
    code_norm: MlpModel
    decorrelator: Decorrelator
    p: int
    q: int
    lambda1: float
    lambda2: float
    y_scale: float = 1.0

    def __post_init__(self):
        k = self.p + self.q
        if self.encoder.out_dim != k or self.decoder.in_dim != k:
            raise ShapeError(f"encoder output {self.encoder.out_dim} and decoder input "
                             f"{self.decoder.in_dim} must both equal p+q={k}")

    @property
    def code_dim(self) -> int:
        return self.p + self.q

    @property
    def variant(self) -> Variant:
        return self.decorrelator.variant

    def encode(self, images: np.ndarray) -> np.ndarray:
        return self.encoder.embed(images)

    def decode(self, code: np.ndarray) -> np.ndarray:
        return self.decoder.embed(code)

    def split_code(self, code: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return code[:, :self.p], code[:, self.p:]

    def predict(self, images: np.ndarray) -> np.ndarray:
        y, _ = self.split_code(self.encode(images))
        return np.argmax(y, axis=1)

    def calibrate_y_scale(self, images: np.ndarray) -> float:
        """Mean magnitude of the winning class logit over ``images``."""
        y, _ = self.split_code(self.encode(images))
        self.y_scale = float(np.mean(np.abs(y.max(axis=1))))
        return self.y_scale


def build_fae_model(config: ExperimentConfig, in_dim: int) -> FaeModel:
    m = config.model
    k = m.p + m.q
    seed = config.training.seed
    return FaeModel(
        encoder=init_model(mlp_spec([in_dim, *m.fae_hidden, k]), seed),
        decoder=init_model(mlp_spec([k, *reversed(m.fae_hidden), in_dim]), seed + 1),
        code_norm=MlpModel([LayerSpec(LayerKind.BATCHNORM, k, k, affine=False)]),
        decorrelator=Decorrelator(config.variant, k, config.losses.alpha, split=m.p),
        p=m.p,
        q=m.q,
        lambda1=config.losses.lambda1,
        lambda2=config.losses.lambda2,
    )


def fae_objective(model: FaeModel, images: np.ndarray, labels: np.ndarray,
                  update_running: bool = False
                  ) -> Tuple[Dict[str, float], Dict[str, Dict[str, np.ndarray]], SdlState]:
    """
    L_rec + lambda1·L_cla(y) + lambda2·D(BN([y, z])) with parameter gradients.

    L_rec is the mean per-pixel squared error. The accumulator is read, not
    written; the advanced state is returned.
    """
    m, d = images.shape
    t_enc = model.encoder.forward(images, Mode.TRAIN, update_running)
    code = t_enc.output
    t_dec = model.decoder.forward(code, Mode.TRAIN, update_running)
    residual = t_dec.output - images
    rec = float(np.sum(residual ** 2)) / (m * d)
    g_recon = 2.0 * residual / (m * d)

    cla, g_y = softmax_cross_entropy(code[:, :model.p], labels)

    t_bn = model.code_norm.forward(code, Mode.TRAIN, update_running)
    dec, g_norm, new_state = decorrelation_loss_grad(t_bn.output, model.variant,
                                                     model.decorrelator.state, model.p)
    total = rec + model.lambda1 * cla + model.lambda2 * dec

    grads_dec, g_code = model.decoder.backward(t_dec, g_recon)
    _, g_code_bn = model.code_norm.backward(t_bn, model.lambda2 * g_norm)
    g_code = g_code + g_code_bn
    g_code[:, :model.p] += model.lambda1 * g_y
    grads_enc, _ = model.encoder.backward(t_enc, g_code)

    metrics = {'rec_loss': rec, 'cla_loss': cla, 'decorr_loss': dec, 'total': total}
    grads = {'encoder': grads_enc, 'decoder': grads_dec}
    return metrics, grads, new_state


class FaeTrainer(TrainingLoop):
    kind = 'fae'
    columns = ('rec_loss', 'cla_loss', 'decorr_loss', 'total')
    epoch_columns = ('code_offdiag',)

    def __init__(self, config: ExperimentConfig, images: np.ndarray, labels: np.ndarray,
                 model: Optional[FaeModel] = None, **kwargs):
        super().__init__(config, **kwargs)
        if images.shape[0] != labels.shape[0]:
            raise ShapeError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= config.model.p):
            raise ConfigError(f"labels must lie in [0, {config.model.p})", section='model', key='p')
        self.images = images
        self.labels = labels
        self.model = model or build_fae_model(config, images.shape[1])
        t = config.training
        self.optimizers = {name: Optimizer(lr=t.lr, momentum=t.momentum)
                           for name in ('encoder', 'decoder')}

    def _n_rows(self) -> int:
        return self.images.shape[0]

    def _train_step(self, idx: np.ndarray) -> Dict[str, float]:
        model = self.model
        metrics, grads, new_state = fae_objective(model, self.images[idx], self.labels[idx],
                                                  update_running=True)
        self._guard(metrics['total'])
        model.decorrelator.state = new_state
        for name, opt in self.optimizers.items():
            opt.step(getattr(model, name), grads[name])
        return metrics

    def _epoch_metrics(self) -> Dict[str, Any]:
        return {'code_offdiag': self.model.decorrelator.offdiag_level()}

    def _reset_accumulators(self):
        self.model.decorrelator.reset()

    def _model_arrays(self) -> Dict[str, np.ndarray]:
        arrays = fae_arrays(self.model)
        for name, opt in self.optimizers.items():
            arrays.update(opt.state_arrays(f"opt_{name}."))
        return arrays

    def _load_model(self, arrays: Dict[str, np.ndarray], header: Dict[str, Any]):
        load_fae_arrays(self.model, arrays, header)
        for name, opt in self.optimizers.items():
            opt.load_arrays(arrays, f"opt_{name}.")

    def _header_state(self) -> Dict[str, Any]:
        return fae_header(self.model)

    def run(self, stop_at_step: Optional[int] = None) -> List[Dict[str, Any]]:
        history = super().run(stop_at_step)
        if self.epoch >= self.config.training.epochs:
            scale = self.model.calibrate_y_scale(self.images)
            logger.info(f"Style-transfer y scale calibrated to {scale:.4f}")
            self.save_checkpoint()
        return history


def fae_arrays(model: FaeModel) -> Dict[str, np.ndarray]:
    return {
        **prefixed(model.encoder.state_arrays(), 'encoder.'),
        **prefixed(model.decoder.state_arrays(), 'decoder.'),
        **prefixed(model.code_norm.state_arrays(), 'code_norm.'),
        'decorr.c_accu': model.decorrelator.state.c_accu,
    }


def fae_header(model: FaeModel) -> Dict[str, Any]:
    return {'decorr': model.decorrelator.state.scalars(), 'in_dim': model.encoder.in_dim,
            'y_scale': model.y_scale}


def load_fae_arrays(model: FaeModel, arrays: Dict[str, np.ndarray], header: Dict[str, Any]):
    model.encoder.load_arrays(unprefixed(arrays, 'encoder.'))
    model.decoder.load_arrays(unprefixed(arrays, 'decoder.'))
    model.code_norm.load_arrays(unprefixed(arrays, 'code_norm.'))
    model.decorrelator.state = SdlState.restore(arrays['decorr.c_accu'], header['decorr'])
    model.y_scale = float(header.get('y_scale', 1.0))


def fae_from_checkpoint(ckpt: Checkpoint, config: ExperimentConfig) -> FaeModel:
    model = build_fae_model(config, int(ckpt.header['in_dim']))
    load_fae_arrays(model, ckpt.tensors, ckpt.header)
    return model


def fae_train(config: ExperimentConfig, images: np.ndarray, labels: np.ndarray,
              **kwargs) -> Tuple[FaeModel, List[Dict[str, Any]]]:
    trainer = FaeTrainer(config, images, labels, **kwargs)
    history = trainer.run()
    return trainer.model, history


# ── Evaluation ─────────────────────────────────────────────────────────

@dataclass
class DisentanglementReport:
    acc_y: float
    acc_z: float

    def rows(self) -> List[Dict[str, Any]]:
        return [{'acc_y': self.acc_y, 'acc_z': self.acc_z}]


def disentanglement_eval(model: FaeModel, train: Tuple[np.ndarray, np.ndarray],
                         test: Tuple[np.ndarray, np.ndarray],
                         classifier: Optional[SoftmaxClassifier] = None) -> DisentanglementReport:
    """
    acc_y: the y code read as logits on the test images.
    acc_z: a linear classifier fit on training z codes, scored on test z codes.
    """
    train_images, train_labels = train
    test_images, test_labels = test
    _, z_train = model.split_code(model.encode(train_images))
    y_test, z_test = model.split_code(model.encode(test_images))
    acc_y = accuracy(np.argmax(y_test, axis=1), np.asarray(test_labels, dtype=np.int64))
    z_classifier = (classifier or SoftmaxClassifier(n_classes=N_CLASSES)).fit(z_train, train_labels)
    acc_z = z_classifier.score(z_test, test_labels)
    logger.info(f"Disentanglement: acc_y={acc_y:.2f}% acc_z={acc_z:.2f}%")
    return DisentanglementReport(acc_y=acc_y, acc_z=acc_z)


# ── Style transfer ─────────────────────────────────────────────────────

def style_transfer(model: FaeModel, image: np.ndarray, target_class: int) -> np.ndarray:
    """Keep the inferred z, set y to a scaled one-hot of ``target_class``, decode, clamp to [0, 1]."""
    if not 0 <= int(target_class) < model.p:
        raise ConfigError(f"target class must be in [0, {model.p}), got {target_class}")
    code = model.encode(np.asarray(image, dtype=np.float64).reshape(1, -1))
    code[:, :model.p] = 0.0
    code[0, int(target_class)] = model.y_scale
    return np.clip(model.decode(code)[0], 0.0, 1.0)


def style_sheet(model: FaeModel, images: np.ndarray, side: int = IMAGE_SIDE) -> np.ndarray:
    """One row per source image (its style), one column per target class."""
    rows = [style_transfer(model, img, c) for img in images for c in range(model.p)]
    return tile_images(np.array(rows), rows=len(images), cols=model.p, side=side)
