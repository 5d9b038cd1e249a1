"""Registration-quality measurements and their CSV serialization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffeo
from . import kernels
from .errors import ShapeError

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    pair_id: str
    pct_folding: float
    jac_std: float
    seconds: float
    dsc_per_structure: dict[int, float] = field(default_factory=dict)
    dsc_mean: float | None = None
    tc: float | None = None

    CSV_PREFIX = ("pair_id", "dsc_mean", "pct_folding", "jac_std", "tc", "seconds")

    def csv_header(self) -> list[str]:
        labels = sorted(self.dsc_per_structure)
        return list(self.CSV_PREFIX) + [f"dsc_{label}" for label in labels]

    def csv_row(self) -> list[str]:
        def fmt(x):
            return "" if x is None else repr(float(x))

        row = [
            self.pair_id,
            fmt(self.dsc_mean),
            fmt(self.pct_folding),
            fmt(self.jac_std),
            fmt(self.tc),
            fmt(self.seconds),
        ]
        return row + [fmt(self.dsc_per_structure[label]) for label in sorted(self.dsc_per_structure)]


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(reports[0].csv_header())
        for r in reports:
            writer.writerow(r.csv_row())


def _label_volume(seg: np.ndarray) -> np.ndarray:
    if seg.ndim in (3, 4) and seg.shape[0] == 1:
        return seg[0]
    return seg


def dice(seg_a: np.ndarray, seg_b: np.ndarray, labels=None) -> dict[int, float]:
    """Per-label overlap 2|A∩B| / (|A| + |B|).

    Labels absent from both maps score 1.0 by convention (nothing to
    disagree about).
    """
    a = _label_volume(seg_a)
    b = _label_volume(seg_b)
    if a.shape != b.shape:
        raise ShapeError(f"dice: extents differ, {a.shape} vs {b.shape}")
    if labels is None:
        labels = sorted(set(np.unique(a)) | set(np.unique(b)))
    out = {}
    for label in labels:
        in_a = a == label
        in_b = b == label
        na = int(in_a.sum())
        nb = int(in_b.sum())
        if na + nb == 0:
            out[int(label)] = 1.0
        else:
            out[int(label)] = 2.0 * int((in_a & in_b).sum()) / (na + nb)
    return out


def warp_labels(seg: np.ndarray, t: diffeo.Transform) -> np.ndarray:
    """Resample a label map through phi = x + u with nearest-neighbor lookup."""
    squeeze = False
    if seg.ndim in (2, 3) and seg.shape[0] != 1:
        seg = seg[np.newaxis]
        squeeze = True
    disp = t.disp_array
    if disp.shape[1:] != seg.shape[1:]:
        raise ShapeError(
            f"warp_labels: displacement extents {disp.shape[1:]} do not match labels {seg.shape[1:]}"
        )
    out = kernels.warp_nearest(np.ascontiguousarray(seg), disp)
    return out[0] if squeeze else out


def topology_change(seg_moving: np.ndarray, seg_warped: np.ndarray, labels=None) -> float:
    """Mean over labels of warped volume / moving volume (1 is ideal).

    Labels with zero moving volume are excluded (and logged); at least one
    label must survive.
    """
    mov = _label_volume(seg_moving)
    wrp = _label_volume(seg_warped)
    if labels is None:
        labels = sorted(l for l in np.unique(mov) if l != 0)
    ratios = []
    for label in labels:
        n_mov = int((mov == label).sum())
        if n_mov == 0:
            log.warning("topology_change: label %s has zero moving volume, excluded", label)
            continue
        ratios.append(int((wrp == label).sum()) / n_mov)
    if not ratios:
        raise ShapeError("topology_change: no labels with nonzero moving volume")
    return float(np.mean(ratios))


def evaluate_transform(
    t: diffeo.Transform,
    seconds: float,
    pair_id: str = "pair",
    seg_fixed: np.ndarray | None = None,
    seg_moving: np.ndarray | None = None,
) -> MetricsReport:
    """Full report for one registration: fold stats always, Dice/TC with segs."""
    detj = diffeo.jacobian_det(t)
    pct, std = diffeo.folding_stats(detj)
    report = MetricsReport(pair_id=pair_id, pct_folding=pct, jac_std=std, seconds=seconds)
    if seg_fixed is not None and seg_moving is not None:
        warped = warp_labels(seg_moving, t)
        labels = sorted(l for l in np.unique(_label_volume(seg_fixed)) if l != 0)
        report.dsc_per_structure = dice(seg_fixed, warped, labels)
        report.dsc_mean = float(np.mean(list(report.dsc_per_structure.values())))
        report.tc = topology_change(seg_moving, warped, labels)
    return report
