"""Figures for a finished run: consistency heatmaps, perturbation curves, overlays.

Anything the report lacks is skipped with a log line; rendering never raises
for missing data.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colormaps  # noqa: E402
from PIL import Image  # noqa: E402

from ..consistency import METRIC_KINDS, ConsistencyMatrix  # noqa: E402
from ..core import load_annotation, load_image, load_map  # noqa: E402
from ..errors import AmauditError, OutputError  # noqa: E402
from ..faithfulness import DELETION, INSERTION  # noqa: E402
from .runner import EvaluationReport  # noqa: E402

log = logging.getLogger(__name__)

PLOTS_DIR = "plots"


def heatmap_figure(matrix: ConsistencyMatrix):
    fig, ax = plt.subplots(figsize=(6, 5))
    vmin, vmax = (-1.0, 1.0) if matrix.metric_kind == "pearson" else (0.0, 1.0)
    im = ax.imshow(matrix.entries, cmap="viridis", vmin=vmin, vmax=vmax)
    ticks = range(len(matrix.method_ids))
    ax.set_xticks(ticks, matrix.method_ids, rotation=45, ha="right")
    ax.set_yticks(ticks, matrix.method_ids)
    for i in ticks:
        for j in ticks:
            v = matrix.entries[i, j]
            ax.text(j, i, "nan" if np.isnan(v) else f"{v:.2f}", ha="center", va="center", color="w", fontsize=8)
    ax.set_title(f"consistency ({matrix.metric_kind})")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return fig


def curve_figure(curves: dict[str, tuple[np.ndarray, np.ndarray]], title: str):
    """One labeled line per method; ``curves`` maps method id to (fractions, probabilities)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method_id, (x, y) in curves.items():
        ax.plot(x, y, label=f"{method_id} (AUC {np.trapezoid(y, x):.3f})")
    ax.set_xlabel("fraction of pixels perturbed")
    ax.set_ylabel("target class probability")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _mean_curve(entries: list[dict]) -> tuple[np.ndarray, np.ndarray]:
    # curves of differently sized images have different step grids; use the first grid
    x = np.asarray(entries[0]["fractions"])
    ys = [np.interp(x, e["fractions"], e["probabilities"]) for e in entries]
    return x, np.mean(ys, axis=0)


def overlay_image(pixels: np.ndarray, values: np.ndarray, mask: np.ndarray | None = None,
                  alpha: float = 0.5) -> Image.Image:
    """Blend a jet-colored map over the image at the image's own resolution.

    The mask boundary, when given, is drawn in white.
    """
    rgb = pixels if pixels.shape[0] == 3 else np.repeat(pixels[:1], 3, axis=0)
    rgb = rgb.transpose(1, 2, 0)
    heat = colormaps["jet"](values)[..., :3]
    out = (1 - alpha) * rgb + alpha * heat
    if mask is not None:
        m = mask.astype(bool)
        inner = m.copy()
        inner[1:, :] &= m[:-1, :]
        inner[:-1, :] &= m[1:, :]
        inner[:, 1:] &= m[:, :-1]
        inner[:, :-1] &= m[:, 1:]
        out[m & ~inner] = 1.0
    return Image.fromarray(np.clip(np.rint(out * 255), 0, 255).astype(np.uint8))


def render_plots(report: EvaluationReport, run_dir, out_dir=None, overlays: bool = True) -> list[Path]:
    """Write all figures the report supports; returns the written paths."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / PLOTS_DIR
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create plot directory {out}: {exc}") from exc
    agg = report.aggregates
    methods = report.method_ids

    consistency = agg.get("consistency") or {}
    for kind in METRIC_KINDS:
        if kind in consistency:
            written.append(_save(heatmap_figure(ConsistencyMatrix.from_dict(consistency[kind])),
                                 out / f"consistency_{kind}.png"))
    if not consistency:
        log.info("no consistency data; heatmaps skipped")

    for mode in (INSERTION, DELETION):
        recs = [r for r in report.records if mode in r]
        if not recs:
            log.info("no %s curves; curve plots skipped", mode)
            continue
        mean = {m: _mean_curve([r[mode][m] for r in recs]) for m in methods}
        written.append(_save(curve_figure(mean, f"{mode}, mean over {len(recs)} images"), out / f"{mode}_mean.png"))
        for r in recs:
            per = {m: (np.asarray(r[mode][m]["fractions"]), np.asarray(r[mode][m]["probabilities"])) for m in methods}
            stem = Path(r["file"]).stem
            written.append(_save(curve_figure(per, f"{mode}, {r['file']}"), out / "curves" / f"{stem}_{mode}.png"))

    if overlays:
        written.extend(_render_overlays(report, run_dir, out))
    return written


def _render_overlays(report: EvaluationReport, run_dir: Path, out: Path) -> list[Path]:
    cfg = report.provenance["config"]
    dataset = Path(cfg["dataset_path"])
    mask_dir = Path(cfg["annotation_path"]) if cfg.get("annotation_path") else dataset / "masks"
    written = []
    for r in report.records:
        try:
            pixels = load_image(dataset / "images" / r["file"]).pixels
        except AmauditError as exc:
            log.info("overlay skipped for %s: %s", r["file"], exc)
            continue
        mask = None
        if (mask_dir / r["file"]).is_file():
            try:
                mask = load_annotation(mask_dir / r["file"], pixels.shape[1:]).values
            except AmauditError:
                mask = None
        class_maps = r.get("class_maps", {})
        refs = [x for m, ref in r["maps"].items() for x in class_maps.get(m, [ref])]
        for ref in refs:
            try:
                amap, _ = load_map(run_dir / ref)
            except (OSError, ValueError, KeyError) as exc:
                log.info("overlay skipped for %s: %s", ref, exc)
                continue
            path = out / "overlays" / Path(r["file"]).stem / f"{amap.method_id}.c{amap.target_class}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            overlay_image(pixels, amap.values, mask).save(path)
            written.append(path)
    return written
