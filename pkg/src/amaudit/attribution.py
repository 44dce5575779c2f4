"""The six attribution methods, each returning a normalized AttributionMap.

Method ids (stable, used in configs, reports and map sidecars):
``gradients``, ``smoothgrad``, ``gradcam``, ``gradcam++``,
``smooth-gradcam++``, ``scorecam``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backend import TorchClassifier
from .core import AttributionMap, ImageArray, bilinear_resize, normalize_map
from .errors import ValidationError

GRADIENTS = "gradients"
SMOOTHGRAD = "smoothgrad"
GRADCAM = "gradcam"
GRADCAM_PP = "gradcam++"
SMOOTH_GRADCAM_PP = "smooth-gradcam++"
SCORECAM = "scorecam"


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian input noise shared by SmoothGrad and Smooth GradCAM++.

    The noise std is ``sigma_fraction * (max(image) - min(image))``.
    """

    num_samples: int = 25
    sigma_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValidationError("num_samples must be >= 1")
        if not self.sigma_fraction >= 0:
            raise ValidationError("sigma_fraction must be >= 0")


@dataclass(frozen=True)
class ScoreCamConfig:
    batch_size: int = 32
    use_softmax_weights: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


def _pixels(image) -> np.ndarray:
    if isinstance(image, ImageArray):
        return image.pixels
    px = np.asarray(image, dtype=np.float64)
    if px.ndim != 3:
        raise ValidationError(f"expected a CxHxW image, got shape {px.shape}")
    return px


def noise_stream(noise: NoiseConfig, stream_id: int, class_index: int) -> np.random.Generator:
    """Per-call RNG derived from (seed, image id, class) so order of calls is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([noise.seed, stream_id, class_index]))


def _noisy_copies(px: np.ndarray, noise: NoiseConfig, stream_id: int, class_index: int) -> np.ndarray:
    sigma = noise.sigma_fraction * float(px.max() - px.min())
    copies = np.repeat(px[None], noise.num_samples, axis=0)
    if sigma > 0:
        rng = noise_stream(noise, stream_id, class_index)
        # not clamped: noisy inputs may leave [0, 1]
        copies = copies + rng.normal(0.0, sigma, copies.shape)
    return copies


def _gradient_saliency(grad: np.ndarray) -> np.ndarray:
    # max |gradient| over channels
    return np.abs(grad).max(axis=-3)


def gradients(model: TorchClassifier, image, class_index: int) -> AttributionMap:
    px = _pixels(image)
    raw = _gradient_saliency(model.input_gradient(px, class_index))
    return normalize_map(raw, GRADIENTS, class_index)


def smoothgrad(model: TorchClassifier, image, class_index: int,
               noise: NoiseConfig | None = None, stream_id: int = 0) -> AttributionMap:
    noise = noise or NoiseConfig()
    px = _pixels(image)
    batch = _noisy_copies(px, noise, stream_id, class_index)
    raw = _gradient_saliency(model.input_gradient(batch, class_index)).mean(axis=0)
    return normalize_map(raw, SMOOTHGRAD, class_index)


def _finish_cam(cam: np.ndarray, size: tuple[int, int], method_id: str, class_index: int) -> AttributionMap:
    cam = np.maximum(cam, 0.0)
    cam = bilinear_resize(cam, *size)
    return normalize_map(cam, method_id, class_index)


def gradcam(model: TorchClassifier, image, class_index: int, layer_id: str | None = None) -> AttributionMap:
    px = _pixels(image)
    cap = model.layer_capture(px, class_index, layer_id)
    alpha = cap.gradients.mean(axis=(1, 2))
    cam = np.tensordot(alpha, cap.activations, axes=1)
    return _finish_cam(cam, px.shape[1:], GRADCAM, class_index)


def _gradcam_pp_weights(acts: np.ndarray, g1: np.ndarray, g2: np.ndarray, g3: np.ndarray) -> np.ndarray:
    """Per-channel weights from first/second/third-order logit derivatives.

    Uses the exponential-score closed form: alpha = g^2 / (2 g^2 + sum(A) g^3),
    weight_k = sum_ij alpha_ij * relu(g_ij). Zero denominators are replaced by 1,
    which leaves alpha = 0 there since the numerator vanishes too.
    """
    denom = 2.0 * g2 + acts.sum(axis=(1, 2), keepdims=True) * g3
    denom = np.where(denom != 0.0, denom, 1.0)
    alpha = g2 / denom
    return (alpha * np.maximum(g1, 0.0)).sum(axis=(1, 2))


def gradcam_pp(model: TorchClassifier, image, class_index: int, layer_id: str | None = None) -> AttributionMap:
    px = _pixels(image)
    cap = model.layer_capture(px, class_index, layer_id)
    g = cap.gradients
    w = _gradcam_pp_weights(cap.activations, g, g ** 2, g ** 3)
    cam = np.tensordot(w, cap.activations, axes=1)
    return _finish_cam(cam, px.shape[1:], GRADCAM_PP, class_index)


def smooth_gradcam_pp(model: TorchClassifier, image, class_index: int, layer_id: str | None = None,
                      noise: NoiseConfig | None = None, stream_id: int = 0) -> AttributionMap:
    """GradCAM++ with gradient moments averaged over noisy copies of the input.

    Activations come from the clean image; g, g^2 and g^3 are each averaged
    across the noisy samples before entering the GradCAM++ weighting.
    """
    noise = noise or NoiseConfig()
    px = _pixels(image)
    clean = model.layer_capture(px, class_index, layer_id)
    batch = _noisy_copies(px, noise, stream_id, class_index)
    g = model.layer_capture(batch, class_index, clean.layer_id).gradients
    w = _gradcam_pp_weights(clean.activations, g.mean(axis=0), (g ** 2).mean(axis=0), (g ** 3).mean(axis=0))
    cam = np.tensordot(w, clean.activations, axes=1)
    return _finish_cam(cam, px.shape[1:], SMOOTH_GRADCAM_PP, class_index)


def scorecam(model: TorchClassifier, image, class_index: int, layer_id: str | None = None,
             cfg: ScoreCamConfig | None = None) -> AttributionMap:
    """Gradient-free CAM: channels weighted by the class confidence of the input
    masked with each (min-max normalized, upsampled) activation channel.
    """
    cfg = cfg or ScoreCamConfig()
    px = _pixels(image)
    c = model._check_class(class_index)
    acts = model.layer_activations(px, layer_id)
    # upsample first, then min-max each channel at image resolution
    up = bilinear_resize(acts, *px.shape[1:])
    lo = up.min(axis=(1, 2), keepdims=True)
    span = up.max(axis=(1, 2), keepdims=True) - lo
    masks = np.where(span > 0, (up - lo) / np.where(span > 0, span, 1.0), 0.0)
    scores = np.empty(len(masks))
    for start in range(0, len(masks), cfg.batch_size):
        chunk = masks[start:start + cfg.batch_size]
        scores[start:start + len(chunk)] = model.predict(px[None] * chunk[:, None])[:, c]
    if cfg.use_softmax_weights:
        e = np.exp(scores - scores.max())
        weights = e / e.sum()
    else:
        weights = scores
    cam = np.tensordot(weights, acts, axes=1)
    return _finish_cam(cam, px.shape[1:], SCORECAM, c)


METHODS: dict[str, Callable[..., AttributionMap]] = {
    GRADIENTS: gradients,
    SMOOTHGRAD: smoothgrad,
    GRADCAM: gradcam,
    GRADCAM_PP: gradcam_pp,
    SMOOTH_GRADCAM_PP: smooth_gradcam_pp,
    SCORECAM: scorecam,
}
METHOD_IDS = tuple(METHODS)


def compute_map(method_id: str, model: TorchClassifier, image, class_index: int, *,
                layer_id: str | None = None, noise: NoiseConfig | None = None,
                scorecam_cfg: ScoreCamConfig | None = None, stream_id: int = 0) -> AttributionMap:
    """Dispatch by method id, passing only the options each method takes."""
    if method_id == GRADIENTS:
        return gradients(model, image, class_index)
    if method_id == SMOOTHGRAD:
        return smoothgrad(model, image, class_index, noise, stream_id)
    if method_id == GRADCAM:
        return gradcam(model, image, class_index, layer_id)
    if method_id == GRADCAM_PP:
        return gradcam_pp(model, image, class_index, layer_id)
    if method_id == SMOOTH_GRADCAM_PP:
        return smooth_gradcam_pp(model, image, class_index, layer_id, noise, stream_id)
    if method_id == SCORECAM:
        return scorecam(model, image, class_index, layer_id, scorecam_cfg)
    raise ValidationError(f"unknown attribution method {method_id!r}; known: {list(METHODS)}")
