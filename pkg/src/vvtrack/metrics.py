"""Detection and tracking quality metrics against ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class MetricsError(Exception):
    pass


def box_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x0 = max(ax, bx)
    y0 = max(ay, by)
    x1 = min(ax + aw, bx + bw)
    y1 = min(ay + ah, by + bh)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    return inter / (aw * ah + bw * bh - inter)


def mask_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, bool)
    truth = np.asarray(truth, bool)
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def blob_precision_recall(pred_boxes, truth_boxes, iou_thr: float = 0.5):
    """Greedy IoU matching of detection boxes to truth boxes."""
    matches = _greedy_match(pred_boxes, truth_boxes, iou_thr)
    tp = len(matches)
    precision = tp / len(pred_boxes) if pred_boxes else 1.0
    recall = tp / len(truth_boxes) if truth_boxes else 1.0
    return precision, recall


def _greedy_match(boxes_a, boxes_b, iou_thr):
    """Greedy descending-IoU matching; ties by higher IoU then lower index."""
    pairs = []
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            iou = box_iou(a, b)
            if iou > iou_thr:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_a: set = set()
    used_b: set = set()
    matches = []
    for iou, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((i, j, iou))
    return matches


@dataclass
class TrackingReport:
    success_rate: float
    mean_center_error: float
    fp_per_frame: float
    id_switches: int
    n_frames: int
    n_matches: int
    per_frame: list = field(default_factory=list)


def evaluate_tracks(tracks, truth, iou_thr: float = 0.5) -> TrackingReport:
    """Per-frame greedy IoU matching of track boxes to truth boxes.

    tracks: records with frame/id/box (objects with attributes or dicts).
    truth: per-frame records with "frame" and "objects" [{id, box}].
    Success rate counts truth boxes matched above the threshold; an
    identity switch is a change in the track id matched to a truth object.
    """
    def rec_get(r, key):
        return r[key] if isinstance(r, dict) else getattr(r, key)

    tracks_by_frame: dict[int, list] = {}
    for r in tracks:
        frame = int(rec_get(r, "frame"))
        cx, cy = rec_get(r, "cx"), rec_get(r, "cy")
        w, h = rec_get(r, "w"), rec_get(r, "h")
        box = (cx - w / 2.0, cy - h / 2.0, w, h)
        tracks_by_frame.setdefault(frame, []).append((int(rec_get(r, "id")), box))

    truth_by_frame = {int(t["frame"]): t["objects"] for t in truth}
    common = sorted(set(tracks_by_frame) & set(truth_by_frame))
    if not common:
        raise MetricsError("tracks and truth share no frame range")

    n_truth = 0
    n_matched = 0
    center_errors = []
    fp_total = 0
    switches = 0
    last_id: dict[int, int] = {}
    per_frame = []
    for f in common:
        trk = tracks_by_frame[f]
        tru = truth_by_frame[f]
        tboxes = [tuple(o["box"]) for o in tru]
        matches = _greedy_match([b for _, b in trk], tboxes, iou_thr)
        n_truth += len(tboxes)
        n_matched += len(matches)
        fp_total += len(trk) - len(matches)
        for i, j, _ in matches:
            tid = trk[i][0]
            obj = tru[j]["id"]
            bx, by, bw, bh = trk[i][1]
            ox, oy, ow, oh = tboxes[j]
            center_errors.append(np.hypot((bx + bw / 2) - (ox + ow / 2),
                                          (by + bh / 2) - (oy + oh / 2)))
            if obj in last_id and last_id[obj] != tid:
                switches += 1
            last_id[obj] = tid
        per_frame.append((f, len(matches), len(tboxes), len(trk) - len(matches)))

    return TrackingReport(
        success_rate=n_matched / n_truth if n_truth else 1.0,
        mean_center_error=float(np.mean(center_errors)) if center_errors else 0.0,
        fp_per_frame=fp_total / len(common),
        id_switches=switches,
        n_frames=len(common),
        n_matches=n_matched,
        per_frame=per_frame,
    )


def write_report_csv(path, report: TrackingReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["success_rate", report.success_rate])
        writer.writerow(["mean_center_error", report.mean_center_error])
        writer.writerow(["fp_per_frame", report.fp_per_frame])
        writer.writerow(["id_switches", report.id_switches])
        writer.writerow(["n_frames", report.n_frames])
        writer.writerow(["n_matches", report.n_matches])
