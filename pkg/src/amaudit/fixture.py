"""Deterministic synthetic dataset and CNN standing in for a real classifier.

Each 64x64 RGB image holds one square patch per quadrant. The class is the
quadrant whose patch is bright; the three other patches are dimmer
distractors. The ground-truth mask marks the bright patch only.

The CNN is three conv stages, global average pooling and a linear head. Its
last stage adds a learned per-position bias before the activation, which lets
channels specialize to a quadrant. Training regresses toward soft targets
``softmax(T * patch_brightness)`` with a non-negative head in which channel k
feeds class ``k % 4`` only, so each class logit accumulates graded evidence
from its own quadrant only. After training the
head is folded into a plain ``nn.Linear`` scaled by ``LOGIT_SCALE``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backend import TorchClassifier
from .core import AnnotationMask, load_annotation, load_image, save_annotation, save_image
from .errors import DatasetError, FixtureError

log = logging.getLogger(__name__)

IMAGE_SIZE = 64
NUM_CLASSES = 4
PATCH = 10
# patches stay this far from quadrant borders, beyond the last stage's receptive field
MARGIN = 8
BACKGROUND = (0.35, 0.08)
BRIGHT = (0.85, 1.0)
DIM = (0.6, 0.8)
# initial per-position bias of a last-stage channel inside / outside its quadrant
GATE_INSIDE = 3.0
GATE_OUTSIDE = -8.0
TARGET_TEMPERATURE = 10.0
LOGIT_SCALE = 3.0
ACCURACY_FLOOR = 0.95
FORMAT_VERSION = 1


def quadrant_slices(q: int, size: int = IMAGE_SIZE) -> tuple[slice, slice]:
    half = size // 2
    r, c = divmod(q, 2)
    return slice(r * half, (r + 1) * half), slice(c * half, (c + 1) * half)


def quadrant_of(row: int, col: int, size: int = IMAGE_SIZE) -> int:
    half = size // 2
    return int(row >= half) * 2 + int(col >= half)


def make_dataset(seed: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return uint8 images (N,3,64,64), labels, uint8 masks (N,64,64), patch brightness (N,4).

    Images are generated directly on the 8-bit grid so PNG round-trips are exact.
    """
    rng = np.random.default_rng(seed)
    half = IMAGE_SIZE // 2
    images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), np.uint8)
    labels = rng.integers(0, NUM_CLASSES, n)
    masks = np.zeros((n, IMAGE_SIZE, IMAGE_SIZE), np.uint8)
    brightness = np.zeros((n, NUM_CLASSES))
    for i in range(n):
        img = rng.normal(BACKGROUND[0], BACKGROUND[1], (3, IMAGE_SIZE, IMAGE_SIZE))
        for q in range(NUM_CLASSES):
            r0, c0 = divmod(q, 2)
            r = r0 * half + rng.integers(MARGIN, half - PATCH - MARGIN + 1)
            c = c0 * half + rng.integers(MARGIN, half - PATCH - MARGIN + 1)
            lo, hi = BRIGHT if q == labels[i] else DIM
            color = rng.uniform(lo, hi, (3, 1, 1))
            img[:, r:r + PATCH, c:c + PATCH] = color
            brightness[i, q] = color.mean()
            if q == labels[i]:
                masks[i, r:r + PATCH, c:c + PATCH] = 1
        images[i] = np.clip(np.rint(img * 255.0), 0, 255)
    return images, labels, masks, brightness


class PositionBias(nn.Module):
    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        self.bias = nn.Parameter(torch.zeros(1, channels, height, width))

    def forward(self, x):
        return x + self.bias


class FixtureCNN(nn.Module):
    def __init__(self, width: int = 32):
        super().__init__()
        self.stage1 = nn.Sequential(nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.GELU())
        self.stage2 = nn.Sequential(nn.Conv2d(16, width, 3, padding=1), nn.GELU(), nn.AvgPool2d(2))
        grid = IMAGE_SIZE // 4
        self.stage3 = nn.Sequential(nn.Conv2d(width, width, 3, padding=1),
                                    PositionBias(width, grid, grid), nn.GELU())
        self.head = nn.Linear(width, NUM_CLASSES)

    def features(self, x):
        return self.stage3(self.stage2(self.stage1(x - 0.5)))

    def forward(self, x):
        return self.head(self.features(x).mean(dim=(2, 3)))


def wrap(module: FixtureCNN) -> TorchClassifier:
    return TorchClassifier(
        module, (3, IMAGE_SIZE, IMAGE_SIZE), NUM_CLASSES,
        {"stage1": module.stage1, "stage2": module.stage2, "stage3": module.stage3})


@contextmanager
def _deterministic_torch():
    threads = torch.get_num_threads()
    was_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(was_det)


def _init_quadrant_structure(model: FixtureCNN, head_raw: torch.Tensor) -> None:
    # channel k starts gated to quadrant k % 4 and wired to that class; without
    # this symmetry break training sits on a long plateau for most seeds
    bias = model.stage3[1].bias
    grid = bias.shape[-1]
    with torch.no_grad():
        for k in range(bias.shape[1]):
            q = k % NUM_CLASSES
            gate = torch.full((grid, grid), GATE_OUTSIDE)
            rows, cols = quadrant_slices(q, grid)
            gate[rows, cols] = GATE_INSIDE
            bias[0, k] = gate
            head_raw[q, k] = 0.5


def _head_mask(num_channels: int) -> torch.Tensor:
    # channel k is wired to class k % 4 and to nothing else
    mask = torch.zeros(NUM_CLASSES, num_channels)
    mask[torch.arange(num_channels) % NUM_CLASSES, torch.arange(num_channels)] = 1.0
    return mask


def train_fixture_model(images: np.ndarray, brightness: np.ndarray, seed: int,
                        epochs: int = 15, batch_size: int = 50, lr: float = 1e-2) -> FixtureCNN:
    torch.manual_seed(seed)
    model = FixtureCNN()
    head_raw = nn.Parameter(torch.randn(NUM_CLASSES, model.head.in_features) * 0.1 - 1.0)
    head_bias = nn.Parameter(torch.zeros(NUM_CLASSES))
    _init_quadrant_structure(model, head_raw)
    head_mask = _head_mask(model.head.in_features)

    x_all = torch.from_numpy(images).float() / 255.0
    soft = torch.softmax(torch.from_numpy(brightness).float() * TARGET_TEMPERATURE, dim=1)
    params = [p for n, p in model.named_parameters() if not n.startswith("head.")]
    opt = torch.optim.Adam(params + [head_raw, head_bias], lr=lr)
    steps = epochs * ((len(x_all) + batch_size - 1) // batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        perm = torch.randperm(len(x_all), generator=gen)
        total = 0.0
        for start in range(0, len(x_all), batch_size):
            idx = perm[start:start + batch_size]
            feats = model.features(x_all[idx]).mean(dim=(2, 3))
            out = feats @ (head_mask * F.softplus(head_raw)).T + head_bias
            # keep the shared (class-independent) logit component near zero
            loss = F.cross_entropy(out, soft[idx]) + 0.1 * out.mean(dim=1).pow(2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        log.debug("fixture epoch %d loss %.4f", epoch, total / len(x_all))

    with torch.no_grad():
        model.head.weight.copy_(LOGIT_SCALE * head_mask * F.softplus(head_raw))
        model.head.bias.copy_(LOGIT_SCALE * head_bias)
    return model.double().eval()


@dataclass(eq=False)
class SyntheticFixture:
    model: TorchClassifier
    images: np.ndarray      # uint8, N x 3 x 64 x 64
    labels: np.ndarray
    masks: np.ndarray       # uint8 {0,1}, N x 64 x 64
    splits: np.ndarray      # "train" / "test"
    seed: int
    test_accuracy: float
    build_seconds: float = 0.0

    def image(self, i: int) -> np.ndarray:
        return self.images[i].astype(np.float64) / 255.0

    def mask(self, i: int) -> AnnotationMask:
        return AnnotationMask(self.masks[i], source="synthetic")

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def file_name(self, i: int) -> str:
        return f"{self.splits[i]}_{i:04d}.png"

    @property
    def ground_truth_masks(self) -> list[AnnotationMask]:
        return [self.mask(i) for i in range(len(self.masks))]


def build_synthetic_fixture(seed: int = 0, n_train: int = 2000, n_test: int = 400,
                            epochs: int = 15, accuracy_floor: float = ACCURACY_FLOOR) -> SyntheticFixture:
    """Generate the dataset and train the fixture CNN.

    Raises FixtureError when held-out accuracy misses ``accuracy_floor``.
    """
    t0 = time.perf_counter()
    n = n_train + n_test
    images, labels, masks, brightness = make_dataset(seed, n)
    splits = np.array(["train"] * n_train + ["test"] * n_test)
    with _deterministic_torch():
        module = train_fixture_model(images[:n_train], brightness[:n_train], seed, epochs=epochs)
    model = wrap(module)
    test = slice(n_train, n)
    pred = model.predict(images[test].astype(np.float64) / 255.0).argmax(axis=1)
    acc = float((pred == labels[test]).mean()) if n_test else float("nan")
    if not acc >= accuracy_floor:
        raise FixtureError(f"fixture test accuracy {acc:.4f} below floor {accuracy_floor}")
    elapsed = time.perf_counter() - t0
    log.info("fixture seed=%d built in %.1fs, test accuracy %.4f", seed, elapsed, acc)
    return SyntheticFixture(model, images, labels, masks, splits, seed, acc, elapsed)


# -- persistence ----------------------------------------------------------

LABELS_FILE = "labels.csv"
WEIGHTS_FILE = "weights.pt"
META_FILE = "fixture.json"


def save_fixture(fx: SyntheticFixture, out_dir) -> Path:
    """Write images/, masks/, labels.csv, weights.pt and fixture.json."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(fx.images)):
        name = fx.file_name(i)
        save_image(fx.images[i].astype(np.float64) / 255.0, out / "images" / name)
        save_annotation(fx.mask(i), out / "masks" / name)
        rows.append((name, int(fx.labels[i]), fx.splits[i]))
    with open(out / LABELS_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "label", "split"])
        w.writerows(rows)
    torch.save(fx.model.module.state_dict(), out / WEIGHTS_FILE)
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": fx.seed,
        "test_accuracy": fx.test_accuracy,
        "num_classes": NUM_CLASSES,
        "image_size": IMAGE_SIZE,
        "n_train": int((fx.splits == "train").sum()),
        "n_test": int((fx.splits == "test").sum()),
        "model_fingerprint": fx.model.fingerprint(),
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    return out


def load_fixture_model(weights_path) -> TorchClassifier:
    module = FixtureCNN().double()
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        module.load_state_dict(state)
    except (OSError, RuntimeError, KeyError) as exc:
        raise DatasetError(f"cannot load fixture weights {weights_path}: {exc}") from exc
    return wrap(module)


def load_fixture(path) -> SyntheticFixture:
    path = Path(path)
    meta_file = path / META_FILE
    if not meta_file.is_file():
        raise DatasetError(f"{path} is not a fixture directory (no {META_FILE})")
    meta = json.loads(meta_file.read_text())
    model = load_fixture_model(path / WEIGHTS_FILE)
    with open(path / LABELS_FILE, newline="") as fh:
        rows = list(csv.DictReader(fh))
    images = np.stack([
        np.rint(load_image(path / "images" / r["file"]).pixels * 255).astype(np.uint8) for r in rows])
    masks = np.stack([load_annotation(path / "masks" / r["file"]).values for r in rows])
    return SyntheticFixture(
        model, images, np.array([int(r["label"]) for r in rows]), masks,
        np.array([r["split"] for r in rows]), int(meta["seed"]), float(meta["test_accuracy"]))
