"""Rendering of similarity maps and reports as images and charts.

The heatmap uses a fixed 256-entry color table interpolated between five
anchor colors (deep red at 0.0 through yellow to green at 1.0), so that
identical maps always produce byte-identical PNGs.  Invalid blocks are
fully transparent.
"""

import numpy as np
from PIL import Image

from .util import atomic_write_bytes

# anchor stops: (similarity, RGB)
_ANCHORS = [
    (0.00, (165, 0, 38)),
    (0.25, (215, 48, 39)),
    (0.50, (254, 224, 144)),
    (0.75, (145, 207, 96)),
    (1.00, (26, 152, 80)),
]


def _build_color_table():
    table = np.zeros((256, 3), dtype=np.uint8)
    values = np.arange(256) / 255.0
    for (v0, c0), (v1, c1) in zip(_ANCHORS, _ANCHORS[1:]):
        sel = (values >= v0) & (values <= v1)
        t = (values[sel] - v0) / (v1 - v0)
        for channel in range(3):
            table[sel, channel] = np.rint(
                c0[channel] + t * (c1[channel] - c0[channel])
            ).astype(np.uint8)
    return table


COLOR_TABLE = _build_color_table()


def heatmap_rgba(smap, upscale=8):
    """Similarity map as an RGBA array; invalid entries transparent."""
    values = np.clip(np.asarray(smap.values, dtype=float), 0.0, 1.0)
    idx = np.rint(values * 255.0).astype(int)
    rgba = np.zeros(values.shape + (4,), dtype=np.uint8)
    rgba[..., :3] = COLOR_TABLE[idx]
    rgba[..., 3] = np.where(np.asarray(smap.valid, dtype=bool), 255, 0)
    if upscale > 1:
        rgba = np.repeat(np.repeat(rgba, upscale, axis=0), upscale, axis=1)
    return rgba


def heatmap_png_bytes(smap, upscale=8):
    import io

    buf = io.BytesIO()
    Image.fromarray(heatmap_rgba(smap, upscale), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def save_heatmap_png(smap, path, upscale=8):
    atomic_write_bytes(path, heatmap_png_bytes(smap, upscale))


def overlay_rgba(img, report, tint=(220, 30, 30), alpha=0.45):
    """Captured image with anomalous blocks tinted and regions outlined."""
    base = np.stack([img.pixels] * 3, axis=-1).astype(float)
    smap = report.map
    frame = smap.frame
    block_px = frame.block_px if frame is not None else 1
    stride_px = frame.stride_px if frame is not None else 1

    anomalous = np.asarray(smap.valid, dtype=bool) & (smap.values <= report.threshold)
    height, width = img.pixels.shape
    for row, col in zip(*np.nonzero(anomalous)):
        y0 = row * stride_px
        x0 = col * stride_px
        y1 = min(y0 + block_px, height)
        x1 = min(x0 + block_px, width)
        patch = base[y0:y1, x0:x1]
        for channel in range(3):
            patch[..., channel] = (1 - alpha) * patch[..., channel] + alpha * tint[channel]

    out = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    rgba = np.concatenate([out, np.full((height, width, 1), 255, np.uint8)], axis=-1)

    # 1-px rectangle around each region bbox, in pixel coordinates
    for region in report.regions:
        rows = [r for r, _ in region.blocks]
        cols = [c for _, c in region.blocks]
        y0 = min(rows) * stride_px
        x0 = min(cols) * stride_px
        y1 = min(max(rows) * stride_px + block_px, height) - 1
        x1 = min(max(cols) * stride_px + block_px, width) - 1
        rgba[y0, x0:x1 + 1, :3] = tint
        rgba[y1, x0:x1 + 1, :3] = tint
        rgba[y0:y1 + 1, x0, :3] = tint
        rgba[y0:y1 + 1, x1, :3] = tint
    return rgba


def save_overlay_png(img, report, path):
    import io

    buf = io.BytesIO()
    Image.fromarray(overlay_rgba(img, report), mode="RGBA").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_power_chart(rows, path):
    """Grouped bar chart of discriminative power per case and metric.

    rows: iterables of (case, metric, regular_pct, failed_pct, power).
    """
    import matplotlib

    matplotlib.use("Agg")
    import io

    import matplotlib.pyplot as plt

    rows = list(rows)
    cases = sorted({row[0] for row in rows})
    metrics = sorted({row[1] for row in rows})
    power = {(row[0], row[1]): float(row[4]) for row in rows}

    fig, ax = plt.subplots(figsize=(max(8, 1.2 * len(metrics)), 4.5))
    width = 0.8 / max(len(cases), 1)
    xs = np.arange(len(metrics))
    for i, case in enumerate(cases):
        heights = [power.get((case, metric), 0.0) for metric in metrics]
        ax.bar(xs + i * width, heights, width=width, label=case)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(metrics, rotation=45, ha="right")
    ax.set_ylabel("failed minus regular anomaly ratio (pp)")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
