"""Thresholding of similarity maps into anomaly statistics and regions.

A block is anomalous when its similarity is at or below the failure
threshold.  The anomalous-area ratio is the share of such blocks among
all valid (printed-region) blocks; contiguous anomalous blocks are
segmented into 8-connected defect regions with world-frame bboxes.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .hog import compute_hog
from .rasterref import apply_mask
from .similarity import BlockFrame, Metric, SimilarityMap, similarity_map

DEFAULT_THRESHOLD = 0.70

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class DetectError(ValueError):
    pass


class EmptyRegionError(DetectError):
    """No valid blocks to take statistics over."""


class ReportMismatchError(DetectError):
    """Reports being compared were produced under different settings."""


@dataclass(frozen=True)
class DefectRegion:
    blocks: frozenset          # of (row, col) grid indices
    bbox_mm: tuple             # (x0, y0, x1, y1) world frame
    mean_similarity: float

    @property
    def block_count(self):
        return len(self.blocks)


@dataclass
class AnomalyReport:
    layer_index: int
    metric: Metric
    threshold: float
    anomaly_ratio_pct: float
    printed_area_blocks: int
    regions: list
    map: SimilarityMap


def _check_threshold(threshold):
    if not 0.0 < threshold < 1.0:
        raise DetectError("threshold must lie strictly between 0 and 1")


def anomaly_ratio(smap, threshold=DEFAULT_THRESHOLD):
    """Percentage of valid blocks at or below the threshold."""
    _check_threshold(threshold)
    valid = np.asarray(smap.valid, dtype=bool)
    total = int(valid.sum())
    if total == 0:
        raise EmptyRegionError("similarity map has no valid blocks")
    below = int((valid & (smap.values <= threshold)).sum())
    return 100.0 * below / total


def segment_regions(smap, threshold=DEFAULT_THRESHOLD, min_blocks=1):
    """8-connected components of anomalous blocks, largest first."""
    _check_threshold(threshold)
    if min_blocks < 1:
        raise DetectError("min_blocks must be >= 1")
    anomalous = np.asarray(smap.valid, dtype=bool) & (smap.values <= threshold)
    labels, count = ndimage.label(anomalous, structure=_EIGHT_CONNECTED)
    frame = smap.frame or BlockFrame(scale=1.0, origin=(0.0, 0.0),
                                     block_px=1, stride_px=1)
    regions = []
    for label in range(1, count + 1):
        rows, cols = np.nonzero(labels == label)
        if len(rows) < min_blocks:
            continue
        bbox = frame.block_bbox_mm(int(rows.min()), int(cols.min()),
                                   int(rows.max()), int(cols.max()))
        regions.append(DefectRegion(
            blocks=frozenset(zip(map(int, rows), map(int, cols))),
            bbox_mm=bbox,
            mean_similarity=float(smap.values[rows, cols].mean()),
        ))
    regions.sort(key=lambda r: (-r.block_count, min(r.blocks)))
    return regions


def discriminative_power(regular, failed):
    """failed a% minus regular a%; negative values are reported as-is."""
    if regular.metric.kind != failed.metric.kind:
        raise ReportMismatchError(
            f"metric mismatch: {regular.metric.kind} vs {failed.metric.kind}")
    if abs(regular.threshold - failed.threshold) > 1e-12:
        raise ReportMismatchError("threshold mismatch between reports")
    return failed.anomaly_ratio_pct - regular.anomaly_ratio_pct


def analyze_layer(real_img, ref_img, mask, cfg, m, threshold=DEFAULT_THRESHOLD,
                  min_blocks=1, layer_index=0):
    """Full per-layer comparison in a shared top-view frame."""
    if real_img.pixels.shape != ref_img.pixels.shape:
        raise DetectError("captured and reference images differ in dims")
    if real_img.scale != ref_img.scale:
        raise DetectError("captured and reference images differ in scale")
    real_masked = apply_mask(real_img, mask)
    ref_masked = apply_mask(ref_img, mask)
    frame = BlockFrame(scale=real_img.scale, origin=real_img.origin,
                       block_px=cfg.block_px, stride_px=cfg.stride_px)
    smap = similarity_map(compute_hog(real_masked, cfg),
                          compute_hog(ref_masked, cfg), m, frame=frame)
    ratio = anomaly_ratio(smap, threshold)
    regions = segment_regions(smap, threshold, min_blocks)
    return AnomalyReport(
        layer_index=layer_index,
        metric=m,
        threshold=threshold,
        anomaly_ratio_pct=ratio,
        printed_area_blocks=int(np.asarray(smap.valid).sum()),
        regions=regions,
        map=smap,
    )


def report_to_dict(report, map_png=None):
    """JSON-shaped view of an AnomalyReport."""
    payload = {
        "layer": report.layer_index,
        "metric": report.metric.kind,
        "threshold": report.threshold,
        "anomaly_ratio_pct": report.anomaly_ratio_pct,
        "printed_area_blocks": report.printed_area_blocks,
        "regions": [
            {
                "blocks": sorted([r, c] for r, c in region.blocks),
                "bbox_mm": list(region.bbox_mm),
                "mean_similarity": region.mean_similarity,
            }
            for region in report.regions
        ],
    }
    if map_png is not None:
        payload["map_png"] = str(map_png)
    return payload
