"""End-to-end evaluation: dataset -> maps -> metrics -> report.

Per-image records and maps are written under the output directory before any
aggregation, and every aggregate is recomputed from those records.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..alignment import annotation_alignment, feature_sharing_score
from ..attribution import compute_map
from ..backend import TorchClassifier
from ..consistency import METRIC_KINDS, PEARSON, PairwiseScore, consistency_score, image_pair_scores, \
    matrix_from_scores
from ..core import AnnotationMask, AttributionMap, load_annotation, load_image, save_map
from ..errors import AnnotationError, ConfigError, DatasetError, OutputError, ValidationError
from ..faithfulness import DELETION, INSERTION, perturbation_curve
from ..fixture import LABELS_FILE, META_FILE, WEIGHTS_FILE, build_synthetic_fixture, load_fixture_model, \
    save_fixture
from .config import ALIGNMENT, CONSISTENCY, SHARING, RunConfig

log = logging.getLogger(__name__)

REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"
RECORDS_DIR = "records"
MAPS_DIR = "maps"
REPORT_VERSION = 1


@dataclass(frozen=True)
class Sample:
    index: int
    file: str
    label: int
    image_path: Path
    mask_path: Path | None

    @property
    def stem(self) -> str:
        return Path(self.file).stem


@dataclass(eq=False)
class EvaluationReport:
    """Per-image records, aggregates derived from them, and provenance.

    Wall time is kept out of the report (see ``timing``) so reruns compare equal.
    """

    records: list[dict]
    aggregates: dict
    provenance: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"report_version": REPORT_VERSION, "provenance": self.provenance,
                "aggregates": self.aggregates, "records": self.records}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(d["records"], d["aggregates"], d["provenance"])

    def __eq__(self, other):
        if not isinstance(other, EvaluationReport):
            return NotImplemented
        return to_json(self) == to_json(other)

    @property
    def method_ids(self) -> list[str]:
        return list(self.provenance["config"]["methods"])

    @property
    def metrics(self) -> list[str]:
        return list(self.provenance["config"]["metrics"])


def to_json(report: EvaluationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- dataset --------------------------------------------------------------

def ensure_dataset(cfg: RunConfig) -> None:
    """Build and save the synthetic fixture into ``dataset_path`` when it is absent."""
    root = cfg.dataset_path
    if (root / LABELS_FILE).is_file():
        return
    if cfg.model_weights is not None:
        raise DatasetError(f"{root} has no {LABELS_FILE}")
    if root.exists() and any(root.iterdir()):
        raise DatasetError(f"{root} has no {LABELS_FILE} and is not empty; refusing to build a fixture there")
    seed = cfg.seed if cfg.fixture_seed is None else cfg.fixture_seed
    log.info("building synthetic fixture (seed %d) into %s", seed, root)
    save_fixture(build_synthetic_fixture(seed), root)


def load_model(cfg: RunConfig) -> TorchClassifier:
    weights = cfg.model_weights if cfg.model_weights is not None else cfg.dataset_path / WEIGHTS_FILE
    if not weights.is_file():
        raise DatasetError(f"model weights {weights} not found")
    if cfg.model_weights is None and cfg.fixture_seed is not None:
        meta = json.loads((cfg.dataset_path / META_FILE).read_text())
        if int(meta["seed"]) != cfg.fixture_seed:
            raise ConfigError(f"dataset fixture was built with seed {meta['seed']}, config asks for "
                              f"{cfg.fixture_seed}")
    return load_fixture_model(weights)


def select_samples(cfg: RunConfig) -> list[Sample]:
    """Rows of labels.csv in the configured split; a seeded subset when limited."""
    labels = cfg.dataset_path / LABELS_FILE
    try:
        with open(labels, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DatasetError(f"cannot read {labels}: {exc}") from exc
    if rows and not {"file", "label"} <= set(rows[0]):
        raise DatasetError(f"{labels} needs 'file' and 'label' columns")
    if cfg.split is not None and rows and "split" in rows[0]:
        rows = [r for r in rows if r["split"] == cfg.split]
    if not rows:
        raise DatasetError(f"no images in {labels} for split {cfg.split!r}")
    picked = range(len(rows))
    if cfg.sample_limit is not None and cfg.sample_limit < len(rows):
        rng = np.random.default_rng(cfg.seed)
        picked = sorted(rng.choice(len(rows), size=cfg.sample_limit, replace=False).tolist())
    mask_dir = cfg.mask_dir
    samples = []
    for k in picked:
        r = rows[k]
        try:
            label = int(r["label"])
        except ValueError as exc:
            raise DatasetError(f"bad label {r['label']!r} for {r['file']}") from exc
        mask = mask_dir / r["file"]
        samples.append(Sample(k, r["file"], label, cfg.dataset_path / "images" / r["file"],
                              mask if mask_dir.is_dir() else None))
    return samples


# -- per-image work -------------------------------------------------------

def _map_ref(stem: str, method_id: str, class_index: int | None = None) -> str:
    suffix = "" if class_index is None else f".c{class_index}"
    return f"{MAPS_DIR}/{stem}/{method_id}{suffix}.png"


def _score_list(scores: dict[tuple[int, int], PairwiseScore]) -> list[list]:
    return [[i, j, s.value, s.degenerate] for (i, j), s in sorted(scores.items())]


def evaluate_image(model: TorchClassifier, cfg: RunConfig, sample: Sample, out_dir: Path) -> dict:
    image = load_image(sample.image_path)
    model._check_class(sample.label)
    metrics = set(cfg.metrics)
    mask: AnnotationMask | None = None
    if ALIGNMENT in metrics:
        mask = load_annotation(sample.mask_path, image.shape[1:], source="dataset")

    kw = dict(layer_id=cfg.layer_id, noise=cfg.noise, scorecam_cfg=cfg.scorecam, stream_id=sample.index)
    maps: dict[str, AttributionMap] = {}
    record: dict[str, Any] = {"index": sample.index, "file": sample.file, "label": sample.label,
                              "maps": {}, "degenerate_maps": []}
    for m in cfg.methods:
        amap = compute_map(m, model, image, sample.label, **kw)
        maps[m] = amap
        record["maps"][m] = _map_ref(sample.stem, m)
        save_map(amap, out_dir / record["maps"][m], {"image": sample.file})
        if amap.degenerate:
            record["degenerate_maps"].append(m)

    if CONSISTENCY in metrics:
        record["pairwise"] = {kind: _score_list(image_pair_scores([maps[m] for m in cfg.methods], kind, cfg.clamp))
                              for kind in METRIC_KINDS}
    for mode in (INSERTION, DELETION):
        if mode in metrics:
            pc = cfg.perturbation.config(mode)
            record[mode] = {m: perturbation_curve(model, image, maps[m], sample.label, pc).to_dict()
                            for m in cfg.methods}
    if mask is not None:
        record["alignment"] = {m: annotation_alignment(maps[m], mask, cfg.clamp).to_dict() for m in cfg.methods}
    if SHARING in metrics:
        classes = list(range(model.num_classes))
        record["class_maps"] = {}
        record["sharing"] = {}
        for m in cfg.methods:
            class_maps = [maps[m] if c == sample.label else compute_map(m, model, image, c, **kw) for c in classes]
            refs = []
            for c, cm in zip(classes, class_maps):
                refs.append(_map_ref(sample.stem, m, c))
                save_map(cm, out_dir / refs[-1], {"image": sample.file})
            record["class_maps"][m] = refs
            record["sharing"][m] = feature_sharing_score(class_maps, m, classes).to_dict()
    return record


def _record_path(out_dir: Path, sample: Sample) -> Path:
    return out_dir / RECORDS_DIR / f"{sample.stem}.json"


def _process(model: TorchClassifier, cfg: RunConfig, sample: Sample, out_dir: Path,
             config_echo: dict) -> dict | None:
    path = _record_path(out_dir, sample)
    if path.is_file():
        try:
            saved = json.loads(path.read_text())
            if saved.get("config") == config_echo:
                return saved["record"]
        except (OSError, ValueError, KeyError):
            pass
    try:
        record = evaluate_image(model, cfg, sample, out_dir)
    except (DatasetError, AnnotationError, ValidationError) as exc:
        # bad inputs are isolated to the one image
        log.warning("skipping %s: %s", sample.file, exc)
        return None
    payload = {"config": config_echo, "record": record}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return record


# -- aggregation ----------------------------------------------------------

def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def _nan_to_none(v: float) -> float | None:
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def aggregate(records: list[dict], methods: list[str], metrics: list[str]) -> dict:
    """Report aggregates, computed only from per-image records in record order."""
    agg: dict[str, Any] = {"num_images": len(records)}
    if CONSISTENCY in metrics:
        agg["consistency"] = {}
        for kind in METRIC_KINDS:
            per_image = [{(i, j): PairwiseScore(kind, v, d) for i, j, v, d in r["pairwise"][kind]} for r in records]
            if not per_image:
                continue
            matrix = matrix_from_scores(methods, kind, per_image)
            name = "Consistency_Corr" if kind == PEARSON else "Consistency_JSD"
            agg["consistency"][kind] = matrix.to_dict()
            agg[name] = _nan_to_none(consistency_score(matrix))
    for mode in (INSERTION, DELETION):
        if mode in metrics:
            agg[f"{mode}_auc"] = {m: _mean([r[mode][m]["auc"] for r in records]) for m in methods}
    if ALIGNMENT in metrics:
        al = {}
        for m in methods:
            ok = [r["alignment"][m] for r in records if not r["alignment"][m]["degenerate"]]
            al[m] = {"pearson": _mean([a["pearson"] for a in ok]), "jsd": _mean([a["jsd"] for a in ok]),
                     "count": len(ok), "excluded": len(records) - len(ok)}
        agg["alignment"] = al
    if SHARING in metrics:
        sh = {}
        for m in methods:
            vals = [r["sharing"][m]["mean_pairwise_pearson"] for r in records]
            ok = [v for v in vals if v is not None]
            sh[m] = {"mean_pairwise_pearson": _mean(ok), "count": len(ok), "excluded": len(vals) - len(ok)}
        agg["sharing"] = sh
    return agg


# -- entry point ----------------------------------------------------------

def run_evaluation(cfg: RunConfig, model: TorchClassifier | None = None) -> EvaluationReport:
    """Evaluate every selected image and write ``report.json`` and ``timing.json``.

    ``model`` overrides the configured model source (any TorchClassifier
    whose input shape matches the dataset images).
    """
    t0 = time.perf_counter()
    out_dir = Path(cfg.output_dir)
    if model is None:
        ensure_dataset(cfg)
        model = load_model(cfg)
    samples = select_samples(cfg)
    if ALIGNMENT in cfg.metrics and not cfg.mask_dir.is_dir():
        raise ConfigError(f"the alignment metric needs annotations; {cfg.mask_dir} does not exist")
    try:
        (out_dir / RECORDS_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out_dir}: {exc}") from exc

    echo = cfg.to_dict()
    if cfg.workers == 1:
        results = [_process(model, cfg, s, out_dir, echo) for s in samples]
    else:
        # one model handle per chunk, since hooks make a handle single-threaded
        chunks = [samples[w::cfg.workers] for w in range(cfg.workers)]
        clones = [model.clone() for _ in chunks]
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(lambda wc: [_process(wc[0], cfg, s, out_dir, echo) for s in wc[1]],
                                  zip(clones, chunks)))
        by_index = {s.index: r for chunk, part in zip(chunks, parts) for s, r in zip(chunk, part)}
        results = [by_index[s.index] for s in samples]

    records = [r for r in results if r is not None]
    skipped = [s.file for s, r in zip(samples, results) if r is None]
    if not records:
        raise DatasetError("every selected image failed; nothing to aggregate")
    provenance = {
        "config": echo,
        "seed": cfg.seed,
        "model_fingerprint": model.fingerprint(),
        "package_version": __version__,
        "num_selected": len(samples),
        "num_evaluated": len(records),
        "skipped": skipped,
    }
    report = EvaluationReport(records, aggregate(records, list(cfg.methods), list(cfg.metrics)), provenance)
    report.timing = {"wall_seconds": time.perf_counter() - t0}
    write_report(report, out_dir)
    return report


def write_report(report: EvaluationReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / REPORT_FILE
        path.write_text(to_json(report))
        if report.timing:
            (out_dir / TIMING_FILE).write_text(json.dumps(report.timing, indent=2) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write report to {out_dir}: {exc}") from exc
    return path


def load_report(path) -> EvaluationReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"no report at {path}") from exc
    except ValueError as exc:
        raise DatasetError(f"{path} is not a valid report: {exc}") from exc
    report = EvaluationReport.from_dict(data)
    timing = path.parent / TIMING_FILE
    if timing.is_file():
        report.timing = json.loads(timing.read_text())
    return report

