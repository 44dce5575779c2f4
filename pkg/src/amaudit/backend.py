"""Classifier contract consumed by every attribution method.

Scores are differentiated at the logit (pre-softmax) level. All computation
runs in float64 so gradients can be checked against finite differences.
"""

from __future__ import annotations

import copy
import hashlib
import io
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import ImageArray
from .errors import InvalidClassError, UnknownLayerError, ValidationError


@dataclass(frozen=True)
class LayerCapture:
    """Activations at a named layer and the target logit's gradient w.r.t. them.

    Arrays are K x h x w for a single image, or N x K x h x w for a batch.
    """

    activations: np.ndarray
    gradients: np.ndarray
    layer_id: str
    class_index: int


def _as_batch(images) -> tuple[np.ndarray, bool]:
    if isinstance(images, ImageArray):
        return images.pixels[None], True
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise ValidationError(f"expected CxHxW image or NxCxHxW batch, got shape {arr.shape}")


def _tensor(arr: np.ndarray) -> torch.Tensor:
    # copy: inputs may be read-only views, which torch refuses to wrap
    return torch.from_numpy(np.array(arr, dtype=np.float64))


class TorchClassifier:
    """Wrap an ``nn.Module`` that maps N x C x H x W images to N x K logits.

    ``layers`` maps layer ids to submodules whose forward outputs are eligible
    CAM targets; the last entry is the default CAM layer. A handle is not
    thread-safe (captures go through module hooks); use :meth:`clone` per worker.
    """

    def __init__(self, module: nn.Module, input_shape: Sequence[int], num_classes: int,
                 layers: Mapping[str, nn.Module], batch_size: int = 128):
        if num_classes < 2:
            raise ValidationError("a classifier needs at least two classes")
        if not layers:
            raise ValidationError("at least one named layer is required")
        self.module = module.double().eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self._layers = dict(layers)
        self.batch_size = batch_size

    @property
    def named_layers(self) -> list[str]:
        return list(self._layers)

    @property
    def default_layer(self) -> str:
        return self.named_layers[-1]

    def clone(self) -> "TorchClassifier":
        return copy.deepcopy(self)

    def fingerprint(self) -> str:
        buf = io.BytesIO()
        for name, t in sorted(self.module.state_dict().items()):
            buf.write(name.encode())
            buf.write(t.detach().cpu().numpy().tobytes())
        return hashlib.sha256(buf.getvalue()).hexdigest()

    # -- validation -------------------------------------------------------

    def _check_batch(self, batch: np.ndarray) -> None:
        if tuple(batch.shape[1:]) != self.input_shape:
            raise ValidationError(
                f"image shape {tuple(batch.shape[1:])} does not match model input {self.input_shape}")

    def _check_class(self, class_index: int) -> int:
        if not 0 <= int(class_index) < self.num_classes:
            raise InvalidClassError(
                f"class index {class_index} outside [0, {self.num_classes})")
        return int(class_index)

    def _layer(self, layer_id: str | None) -> tuple[str, nn.Module]:
        layer_id = self.default_layer if layer_id is None else layer_id
        if layer_id not in self._layers:
            raise UnknownLayerError(f"unknown layer {layer_id!r}; known: {self.named_layers}")
        return layer_id, self._layers[layer_id]

    # -- forward passes ---------------------------------------------------

    def logits(self, images) -> np.ndarray:
        batch, single = _as_batch(images)
        self._check_batch(batch)
        outs = []
        with torch.no_grad():
            for start in range(0, len(batch), self.batch_size):
                x = _tensor(batch[start:start + self.batch_size])
                outs.append(self.module(x).numpy())
        out = np.concatenate(outs, axis=0) if outs else np.zeros((0, self.num_classes))
        return out[0] if single else out

    def predict(self, images) -> np.ndarray:
        """Class-probability vector(s); batch order is preserved."""
        z = self.logits(images)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def input_gradient(self, images, class_index: int) -> np.ndarray:
        """d logit[class_index] / d input, same shape as ``images``."""
        c = self._check_class(class_index)
        batch, single = _as_batch(images)
        self._check_batch(batch)
        grads = []
        for start in range(0, len(batch), self.batch_size):
            x = _tensor(batch[start:start + self.batch_size])
            x.requires_grad_(True)
            out = self.module(x)
            (g,) = torch.autograd.grad(out[:, c].sum(), x)
            grads.append(g.numpy())
        g = np.concatenate(grads, axis=0)
        return g[0] if single else g

    def layer_capture(self, images, class_index: int, layer_id: str | None = None) -> LayerCapture:
        c = self._check_class(class_index)
        layer_id, layer = self._layer(layer_id)
        batch, single = _as_batch(images)
        self._check_batch(batch)
        acts, grads = [], []
        for start in range(0, len(batch), self.batch_size):
            x = _tensor(batch[start:start + self.batch_size])
            with self._capture(layer) as store:
                out = self.module(x)
            a = store["out"]
            (g,) = torch.autograd.grad(out[:, c].sum(), a)
            acts.append(a.detach().numpy())
            grads.append(g.numpy())
        a, g = np.concatenate(acts), np.concatenate(grads)
        if single:
            a, g = a[0], g[0]
        return LayerCapture(a, g, layer_id, c)

    def layer_activations(self, images, layer_id: str | None = None) -> np.ndarray:
        layer_id, layer = self._layer(layer_id)
        batch, single = _as_batch(images)
        self._check_batch(batch)
        store: dict[str, torch.Tensor] = {}
        handle = layer.register_forward_hook(lambda _m, _i, out: store.__setitem__("out", out))
        acts = []
        try:
            with torch.no_grad():
                for start in range(0, len(batch), self.batch_size):
                    self.module(_tensor(batch[start:start + self.batch_size]))
                    acts.append(store["out"].numpy())
        finally:
            handle.remove()
        a = np.concatenate(acts)
        return a[0] if single else a

    def logits_with_activation(self, image, layer_id: str, activation: np.ndarray) -> np.ndarray:
        """Logits when the named layer's output is replaced by ``activation``.

        Exists so layer gradients can be checked by perturbing activations.
        """
        layer_id, layer = self._layer(layer_id)
        batch, single = _as_batch(image)
        self._check_batch(batch)
        act = _tensor(activation)
        if single:
            act = act[None]

        def inject(_mod, _inp, out):
            if out.shape != act.shape:
                raise ValidationError(f"activation shape {tuple(act.shape)} != layer output {tuple(out.shape)}")
            return act

        handle = layer.register_forward_hook(inject)
        try:
            with torch.no_grad():
                out = self.module(_tensor(batch)).numpy()
        finally:
            handle.remove()
        return out[0] if single else out

    @contextmanager
    def _capture(self, layer: nn.Module):
        store: dict[str, torch.Tensor] = {}

        def hook(_mod, _inp, out):
            # Gradients are taken w.r.t. this tensor, so it must be a graph leaf
            # for autograd.grad; re-enter the graph through a requires_grad copy.
            leaf = out.detach().requires_grad_(True)
            store["out"] = leaf
            return leaf

        handle = layer.register_forward_hook(hook)
        try:
            with torch.enable_grad():
                yield store
        finally:
            handle.remove()
