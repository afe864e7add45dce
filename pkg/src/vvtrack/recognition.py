"""Object localization and recognition: probabilistic occurrence voting,
scale-adaptive mean-shift mode finding, and exact star-shaped part-model
matching via generalized distance transforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vocab
from .vocab import Codebook, extract_descriptors


class RecognitionError(Exception):
    pass


@dataclass
class Occurrence:
    dx: float  # object center minus feature location
    dy: float
    scale_ratio: float  # object scale / descriptor scale
    desc_scale: float
    weight: float


@dataclass
class OccurrenceTable:
    """Per (class, word) lists of center offsets learned from training data."""

    entries: dict = field(default_factory=dict)  # (class, word) -> [Occurrence]
    box_templates: dict = field(default_factory=dict)  # class -> (w, h) at s=1
    classes: list = field(default_factory=list)


@dataclass
class ObjectHypothesis:
    label: object
    x: float
    y: float
    s: float
    score: float


def learn_occurrences(examples, codebook: Codebook, grid_stride: int = 8,
                      patch: int = 16) -> OccurrenceTable:
    """Record soft-weighted (offset, scale) occurrences per (class, word).

    examples: iterable of (gray frame, class, (cx, cy), scale); scale is
    the object box side in px.  Weights per (class, word) sum to 1.
    """
    table = OccurrenceTable()
    seen_desc = False
    sizes: dict = {}
    for frame, cls, center, scale in examples:
        cx, cy = center
        descs = extract_descriptors(frame, grid_stride=grid_stride, patch=patch)
        descs = [d for d in descs if np.any(d.vector)]
        if descs:
            seen_desc = True
        for d in descs:
            _, soft = vocab.quantize(d.vector, codebook)
            for word in np.nonzero(soft)[0]:
                occ = Occurrence(dx=cx - d.x, dy=cy - d.y,
                                 scale_ratio=scale / d.scale,
                                 desc_scale=d.scale, weight=float(soft[word]))
                table.entries.setdefault((cls, int(word)), []).append(occ)
        sizes.setdefault(cls, []).append(scale)
        if cls not in table.classes:
            table.classes.append(cls)
    if not seen_desc:
        raise RecognitionError("no descriptors in any training example")
    for key, occs in table.entries.items():
        total = sum(o.weight for o in occs)
        if total > 0:
            for o in occs:
                o.weight /= total
    for cls, ss in sizes.items():
        side = float(np.mean(ss))
        table.box_templates[cls] = (side, side)
    return table


def cast_votes(descriptors, codebook: Codebook, table: OccurrenceTable,
               cls) -> np.ndarray:
    """Weighted (x, y, s, w) votes for object centers of one class.

    Each feature spreads its soft word probability over that word's
    stored occurrences; offsets scale with the feature/training scale
    ratio.
    """
    votes = []
    for d in descriptors:
        if not np.any(d.vector):
            continue
        _, soft = vocab.quantize(d.vector, codebook)
        for word in np.nonzero(soft)[0]:
            occs = table.entries.get((cls, int(word)))
            if not occs:
                continue
            p_word = float(soft[word])
            for o in occs:
                rel = d.scale / o.desc_scale
                votes.append((d.x + o.dx * rel, d.y + o.dy * rel,
                              o.scale_ratio * d.scale, o.weight * p_word))
    return np.asarray(votes, dtype=np.float64).reshape(-1, 4)


# ---------------------------------------------------------------------------
# Scale-adaptive mean-shift
# ---------------------------------------------------------------------------

def _ball_volume(b: float) -> float:
    return (4.0 / 3.0) * np.pi * b ** 3


def balloon_density(point, votes: np.ndarray, b0: float) -> float:
    """Epanechnikov balloon estimate at (x, y, s), bandwidth b0 * s."""
    x = np.asarray(point, dtype=np.float64)
    b = b0 * x[2]
    if b <= 0:
        return 0.0
    d2 = ((votes[:, :3] - x) ** 2).sum(axis=1) / (b * b)
    inside = d2 < 1.0
    return float((votes[inside, 3] * (1.0 - d2[inside])).sum()) / _ball_volume(b)


def meanshift_modes(votes: np.ndarray, b0: float = 0.1, max_iter: int = 100,
                    shift_tol: float = 1e-3) -> list[ObjectHypothesis]:
    """Mean-shift from every vote; modes within b/2 merged keeping the best."""
    if b0 <= 0:
        raise RecognitionError("bandwidth factor must be > 0")
    votes = np.asarray(votes, dtype=np.float64).reshape(-1, 4)
    if votes.shape[0] == 0:
        return []
    modes = []
    for seed in votes[:, :3]:
        x = seed.copy()
        for _ in range(max_iter):
            b = b0 * x[2]
            if b <= 0:
                break
            d2 = ((votes[:, :3] - x) ** 2).sum(axis=1)
            inside = d2 < b * b
            w = votes[inside, 3]
            if w.sum() <= 0:
                break
            new_x = (votes[inside, :3] * w[:, None]).sum(axis=0) / w.sum()
            if np.linalg.norm(new_x - x) < shift_tol:
                x = new_x
                break
            x = new_x
        score = balloon_density(x, votes, b0)
        if score > 0:
            modes.append((x, score))
    merged: list[tuple[np.ndarray, float]] = []
    for x, score in sorted(modes, key=lambda m: -m[1]):
        radius = 0.5 * b0 * x[2]
        if all(np.linalg.norm(x - mx) > radius for mx, _ in merged):
            merged.append((x, score))
    return [ObjectHypothesis(label=None, x=float(m[0]), y=float(m[1]),
                             s=float(m[2]), score=sc) for m, sc in merged]


# ---------------------------------------------------------------------------
# Pictorial structures
# ---------------------------------------------------------------------------

@dataclass
class PartEdge:
    anchor: tuple[int, int]  # child offset (dx, dy) from the root
    cov: tuple[float, float]  # diagonal deformation covariance (Mx, My)

    def __post_init__(self):
        if self.cov[0] <= 0 or self.cov[1] <= 0:
            raise RecognitionError("deformation covariance entries must be > 0")


@dataclass
class PartModel:
    """Star graph: part 0 is the root, edges connect root to each child."""

    n_parts: int
    edges: list[PartEdge]  # one per child, in part order 1..n-1

    def __post_init__(self):
        if len(self.edges) != self.n_parts - 1:
            raise RecognitionError("star model needs one edge per child part")


def distance_transform_1d(cost: np.ndarray, a: float):
    """min_q cost[q] + a (p - q)^2 per position, with argmins.

    Direct O(n^2) evaluation; ties resolve to the lowest q.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[-1]
    grid = np.arange(n, dtype=np.float64)
    # (..., p, q) table of candidate values
    table = cost[..., None, :] + a * (grid[:, None] - grid[None, :]) ** 2
    arg = table.argmin(axis=-1)
    val = np.take_along_axis(table, arg[..., None], axis=-1)[..., 0]
    return val, arg


def distance_transform_2d(cost: np.ndarray, ax: float, ay: float):
    """Separable generalized distance transform under diagonal weights.

    Returns (values, argy, argx) so that for each p the minimizing q is
    (argy[p], argx[p]) and values[p] = cost[q] + ay dy^2 + ax dx^2.
    """
    cost = np.asarray(cost, dtype=np.float64)
    # Pass 1 along y (per column), pass 2 along x (per row).
    v1, qy1 = distance_transform_1d(cost.T, ay)  # rows of cost.T are columns
    v1 = v1.T
    qy1 = qy1.T
    val, qx = distance_transform_1d(v1, ax)
    rows = np.arange(cost.shape[0])[:, None]
    qy = qy1[rows, qx]
    return val, qy, qx


def match_parts(model: PartModel, costmaps: list[np.ndarray]):
    """Exact star-model energy minimization via distance transforms.

    costmaps[i] is the appearance cost of part i over the pixel grid.
    Returns (locations, energy) with locations[i] = (y, x); ties in the
    root argmin resolve to the lowest scan-order location.
    """
    if len(costmaps) != model.n_parts:
        raise RecognitionError("one cost map per part required")
    maps = [np.asarray(m, dtype=np.float64) for m in costmaps]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps) or 0 in shape:
        raise RecognitionError("cost maps must share a non-empty grid")
    h, w = shape
    energy = maps[0].copy()
    transforms = []
    for edge, child_map in zip(model.edges, maps[1:]):
        ax = 1.0 / edge.cov[0]
        ay = 1.0 / edge.cov[1]
        val, qy, qx = distance_transform_2d(child_map, ax, ay)
        dx, dy = edge.anchor
        shifted = np.full(shape, np.inf)
        ys, xs = np.mgrid[0:h, 0:w]
        ty = ys + dy
        tx = xs + dx
        ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        shifted[ok] = val[ty[ok], tx[ok]]
        energy = energy + shifted
        transforms.append((qy, qx, dy, dx))
    root_flat = int(energy.argmin())  # row-major = lowest scan order on ties
    ry, rx = divmod(root_flat, w)
    locations = [(ry, rx)]
    for qy, qx, dy, dx in transforms:
        ty, tx = ry + dy, rx + dx
        locations.append((int(qy[ty, tx]), int(qx[ty, tx])))
    return locations, float(energy[ry, rx])


# ---------------------------------------------------------------------------
# Frame-level recognition
# ---------------------------------------------------------------------------

def recognize_frame(frame: np.ndarray, codebook: Codebook,
                    table: OccurrenceTable, svm_model=None, part_models=None,
                    b0: float = 0.1, score_fraction: float = 0.25,
                    grid_stride: int = 8, patch: int = 16,
                    part_energy_max: float | None = None):
    """Vote, find modes, and verify hypotheses by BoW classification.

    Returns a list of (ObjectHypothesis, verified label); the SVM check
    and part-model refinement run only when the models are supplied.
    """
    from . import svm as svm_mod

    descs = extract_descriptors(frame, grid_stride=grid_stride, patch=patch)
    descs = [d for d in descs if np.any(d.vector)]
    hypotheses = []
    for cls in table.classes:
        votes = cast_votes(descs, codebook, table, cls)
        for mode in meanshift_modes(votes, b0=b0):
            mode.label = cls
            hypotheses.append(mode)
    if not hypotheses:
        return []
    top = max(h.score for h in hypotheses)
    accepted = []
    for hyp in sorted(hypotheses, key=lambda h: (-h.score, str(h.label))):
        if hyp.score < score_fraction * top:
            continue
        label = hyp.label
        if svm_model is not None:
            w0, h0 = table.box_templates.get(hyp.label, (hyp.s, hyp.s))
            scale = hyp.s / max(w0, 1e-9)
            bw, bh = w0 * scale, h0 * scale
            x0 = int(max(0, hyp.x - bw / 2))
            y0 = int(max(0, hyp.y - bh / 2))
            x1 = int(min(frame.shape[1], hyp.x + bw / 2))
            y1 = int(min(frame.shape[0], hyp.y + bh / 2))
            box_descs = [d for d in descs if x0 <= d.x < x1 and y0 <= d.y < y1]
            hist = vocab.bow_histogram(box_descs, codebook)
            if np.any(hist):
                label, _ = svm_mod.predict(svm_model, hist)
        if part_models and hyp.label in part_models:
            model, costmaps = part_models[hyp.label]
            _, energy = match_parts(model, costmaps)
            if part_energy_max is not None and energy > part_energy_max:
                continue
        accepted.append((hyp, label))
    return accepted


def recognize_domain(frame: np.ndarray, codebook: Codebook, domain_svm,
                     grid_stride: int = 8, patch: int = 16):
    """Whole-frame BoW classified by the domain SVM.

    Returns (label, distribution over domains, sums to 1); featureless
    frames yield the 'unknown' label with a uniform distribution.
    """
    from . import svm as svm_mod

    descs = extract_descriptors(frame, grid_stride=grid_stride, patch=patch)
    hist = vocab.bow_histogram(descs, codebook)
    n = len(domain_svm.classes)
    if not np.any(hist):
        return "unknown", np.full(n, 1.0 / n)
    label, votes = svm_mod.predict(domain_svm, hist)
    total = votes.sum()
    dist = votes / total if total > 0 else np.full(n, 1.0 / n)
    return label, dist
