"""
Gradient Check - Central finite differences against every analytic gradient in the toolkit
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Sequence

import numpy as np

from .cca import build_soft_cca_model, l2_dist_loss, soft_cca_objective
from .config import ExperimentConfig, LossSection, ModelSection
from .decorr import SdlState, Variant, decorrelation_loss_grad, xcov_loss_grad
from .fae import build_fae_model, fae_objective
from .nn import LayerKind, LayerSpec, MlpModel, Mode, init_model, mlp_spec

logger = logging.getLogger(__name__)

H = 1e-5
REL_FLOOR = 1e-6
TOLERANCE = 1e-4
BATCH_SIZES = (2, 8)

# XCov needs a two-factor code, so Soft CCA never uses it
SOFT_CCA_VARIANTS = (Variant.SDL, Variant.DECOV, Variant.DECOV_L1, Variant.DECOV_GC, Variant.NONE)
FAE_VARIANTS = (Variant.SDL, Variant.XCOV, Variant.DECOV, Variant.NONE)


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a| + |n|, 1e-6) over elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place and restoring it."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        f_plus = f()
        x[idx] = old - h
        f_minus = f()
        x[idx] = old
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def check_gradients(name: str, f: Callable[[], float], inputs: Dict[str, np.ndarray],
                    analytic: Dict[str, np.ndarray]) -> GradcheckResult:
    errors = [relative_error(analytic[key], numeric_gradient(f, arr)) for key, arr in inputs.items()]
    result = GradcheckResult(name, max(errors) if errors else 0.0)
    logger.debug(f"gradcheck {name}: max relative error {result.max_rel_error:.3e}")
    return result


# ── Cases ──────────────────────────────────────────────────────────────

def _warm_state(rng: np.random.Generator, k: int, steps: int = 3, alpha: float = 0.9) -> SdlState:
    state = SdlState.zeros(k, alpha)
    for _ in range(steps):
        _, _, state = decorrelation_loss_grad(rng.standard_normal((8, k)), Variant.SDL, state)
    return state


def decorrelation_cases(rng: np.random.Generator, m: int, k: int = 4) -> List[GradcheckResult]:
    results = []
    for variant in (Variant.SDL, Variant.DECOV, Variant.DECOV_L1, Variant.DECOV_GC):
        z = rng.standard_normal((m, k))
        state = _warm_state(rng, k)
        _, grad, _ = decorrelation_loss_grad(z, variant, state)
        results.append(check_gradients(
            f"{variant.value} m={m}", lambda: decorrelation_loss_grad(z, variant, state)[0],
            {'z': z}, {'z': grad}))

    y, zc = rng.standard_normal((m, 2)), rng.standard_normal((m, 3))
    _, grad_y, grad_z = xcov_loss_grad(y, zc)
    results.append(check_gradients(f"xcov m={m}", lambda: xcov_loss_grad(y, zc)[0],
                                   {'y': y, 'z': zc}, {'y': grad_y, 'z': grad_z}))

    z1, z2 = rng.standard_normal((m, k)), rng.standard_normal((m, k))
    _, g1, g2 = l2_dist_loss(z1, z2)
    results.append(check_gradients(f"l2_dist m={m}", lambda: l2_dist_loss(z1, z2)[0],
                                   {'z1': z1, 'z2': z2}, {'z1': g1, 'z2': g2}))
    return results


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def check_model(name: str, model: MlpModel, x: np.ndarray,
                rng: np.random.Generator) -> GradcheckResult:
    """Check parameter and input gradients of sum(output * R) for a fixed random R."""
    # R scaled by 1/(m·k) so roundoff on exactly-zero gradients stays under REL_FLOOR
    weights = rng.standard_normal((x.shape[0], model.out_dim)) / (x.shape[0] * model.out_dim)

    def loss() -> float:
        return float(np.sum(model.forward(x, Mode.TRAIN, update_running=False).output * weights))

    trace = model.forward(x, Mode.TRAIN, update_running=False)
    grads, grad_in = model.backward(trace, weights)
    inputs = {**model.named_parameters(), 'input': x}
    return check_gradients(name, loss, inputs, {**grads, 'input': grad_in})


def layer_cases(rng: np.random.Generator, m: int) -> List[GradcheckResult]:
    results = []
    layers = {
        'affine': [LayerSpec(LayerKind.AFFINE, 5, 4)],
        'relu': [LayerSpec(LayerKind.RELU, 4, 4)],
        'batchnorm': [LayerSpec(LayerKind.BATCHNORM, 4, 4)],
    }
    for name, specs in layers.items():
        model = init_model(specs, seed=int(rng.integers(1 << 31)))
        for param in model.named_parameters().values():
            param[...] = rng.standard_normal(param.shape)
        x = _away_from_zero(rng, (m, specs[0].in_dim))
        results.append(check_model(f"{name} m={m}", model, x, rng))

    mlp = init_model(mlp_spec([6, 8, 6, 3], batchnorm_output=True), seed=int(rng.integers(1 << 31)))
    results.append(check_model(f"mlp m={m}", mlp, _away_from_zero(rng, (m, 6)), rng))
    return results


def _param_inputs(groups: Dict[str, MlpModel]) -> Dict[str, np.ndarray]:
    return {f"{g}.{name}": arr for g, model in groups.items()
            for name, arr in model.named_parameters().items()}


def _flat_grads(grads: Dict[str, Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    return {f"{g}.{name}": arr for g, group in grads.items() for name, arr in group.items()}


def tiny_config(variant: Variant = Variant.SDL, seed: int = 0) -> ExperimentConfig:
    config = ExperimentConfig()
    return replace(
        config,
        model=ModelSection(embed_dim=3, hidden=(5,), p=2, q=2, fae_hidden=(6,)),
        losses=LossSection(lam=0.7, lambda1=0.8, lambda2=0.6, variant=variant.value),
        training=replace(config.training, seed=seed),
    )


def soft_cca_case(rng: np.random.Generator, m: int, variant: Variant = Variant.SDL) -> GradcheckResult:
    model = build_soft_cca_model(tiny_config(variant, seed=int(rng.integers(1 << 31))), 6, 6)
    for _ in range(3):
        model.decorr1.step(rng.standard_normal((8, 3)))
        model.decorr2.step(rng.standard_normal((8, 3)))
    x1, x2 = rng.standard_normal((m, 6)), rng.standard_normal((m, 6))
    _, grads, _ = soft_cca_objective(model, x1, x2)
    return check_gradients(
        f"soft_cca[{variant.value}] m={m}",
        lambda: soft_cca_objective(model, x1, x2)[0]['total'],
        _param_inputs({'branch1': model.branch1, 'branch2': model.branch2}),
        _flat_grads(grads))


def fae_case(rng: np.random.Generator, m: int, variant: Variant = Variant.SDL) -> GradcheckResult:
    model = build_fae_model(tiny_config(variant, seed=int(rng.integers(1 << 31))), 16)
    for _ in range(3):
        model.decorrelator.step(rng.standard_normal((8, 4)))
    images = rng.uniform(0.0, 1.0, size=(m, 16))
    labels = np.arange(m) % 2
    _, grads, _ = fae_objective(model, images, labels)
    return check_gradients(
        f"fae[{variant.value}] m={m}",
        lambda: fae_objective(model, images, labels)[0]['total'],
        _param_inputs({'encoder': model.encoder, 'decoder': model.decoder}),
        _flat_grads(grads))


def run_suite(seed: int = 0, batch_sizes: Sequence[int] = BATCH_SIZES) -> List[GradcheckResult]:
    rng = np.random.default_rng(seed)
    results: List[GradcheckResult] = []
    for m in batch_sizes:
        results.extend(decorrelation_cases(rng, m))
        results.extend(layer_cases(rng, m))
        for variant in SOFT_CCA_VARIANTS:
            results.append(soft_cca_case(rng, m, variant))
        for variant in FAE_VARIANTS:
            results.append(fae_case(rng, m, variant))
    return results


def summarize(results: Iterable[GradcheckResult]) -> float:
    results = list(results)
    worst = max(r.max_rel_error for r in results)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"gradcheck failed for: {', '.join(failed)}")
    logger.info(f"gradcheck: {len(results)} cases, worst relative error {worst:.3e}")
    return worst
