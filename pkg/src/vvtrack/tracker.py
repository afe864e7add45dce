"""Per-object particle-swarm tracking with annealed Gaussian disturbance,
subspace appearance models, and competition over occluded regions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PATCH = 32
PATCH_DIM = PATCH * PATCH


class TrackerError(Exception):
    pass


@dataclass
class TrackerConfig:
    n_particles: int = 50
    n_iters: int = 20
    c_anneal: float = 0.3
    sigma0: tuple[float, float, float] = (8.0, 8.0, 0.05)  # disturbance std devs
    q: int = 8  # appearance subspace rank
    window: int = 16  # appearance window capacity
    update_every: int = 5  # frames between subspace recomputes
    tau: float = 0.1  # selective-update pixel acceptance threshold
    eta: float = 4.0  # repulsion magnitude, px
    sigma_obs_sq: float = 51.2  # residual-norm scale (0.05 * 1024)
    fit_floor: float = 1e-12
    lost_patience: int = 10
    track_scale: bool = True
    stall_iters: int = 3  # early stop after this many unchanged gbest iters


@dataclass
class Species:
    """One tracked object: particle population plus appearance subspace."""

    id: int
    template: tuple[float, float]  # (w, h) at s = 1
    gbest: np.ndarray  # (cx, cy, s)
    gbest_fit: float
    mean_patch: np.ndarray
    particles: np.ndarray = None  # (N, 3)
    velocities: np.ndarray = None
    pbest: np.ndarray = None
    pbest_fit: np.ndarray = None
    U: np.ndarray | None = None  # (PATCH_DIM, q) orthonormal basis
    window: list = field(default_factory=list)
    masked_rects: list = field(default_factory=list)
    occluded_with: set = field(default_factory=set)
    lost_count: int = 0
    frames_tracked: int = 0
    label: object = None


@dataclass
class CompetitionArena:
    pair: tuple[int, int]
    rect: tuple[float, float, float, float]  # overlap x, y, w, h
    powers: dict = field(default_factory=dict)
    interactive: dict = field(default_factory=dict)
    winner: int | None = None


def state_box(sp: Species, state) -> tuple[float, float, float, float]:
    cx, cy, s = state
    w = sp.template[0] * s
    h = sp.template[1] * s
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def sample_patch(frame: np.ndarray, box) -> np.ndarray:
    """Bilinear resample of a box region to PATCH x PATCH (edge clamp)."""
    x, y, w, h = box
    us = np.linspace(0, 1, PATCH)
    ys = y + us * max(h - 1, 1e-9)
    xs = x + us * max(w - 1, 1e-9)
    coords = np.stack(np.meshgrid(ys, xs, indexing="ij"))
    return ndimage.map_coordinates(frame, coords, order=1, mode="nearest")


def _patch_pixel_centers(box):
    x, y, w, h = box
    us = np.linspace(0, 1, PATCH)
    ys = y + us * max(h - 1, 1e-9)
    xs = x + us * max(w - 1, 1e-9)
    return np.meshgrid(xs, ys)  # (X, Y) grids, each PATCH x PATCH


def _rect_mask(box, rects) -> np.ndarray:
    """Boolean PATCH x PATCH mask of pixels whose centers fall in any rect."""
    if not rects:
        return np.zeros((PATCH, PATCH), dtype=bool)
    gx, gy = _patch_pixel_centers(box)
    mask = np.zeros((PATCH, PATCH), dtype=bool)
    for rx, ry, rw, rh in rects:
        mask |= (gx >= rx) & (gx <= rx + rw) & (gy >= ry) & (gy <= ry + rh)
    return mask


def _project_residual(o: np.ndarray, U: np.ndarray | None) -> np.ndarray:
    if U is None or U.size == 0:
        return o
    return o - U @ (U.T @ o)


def observe(frame: np.ndarray, sp: Species, state,
            config: TrackerConfig) -> float:
    """Subspace reconstruction likelihood exp(-||o - UU^T o||^2 / sigma^2).

    Boxes fully outside the frame floor at config.fit_floor; pixels under
    the species' masked competition rects are excluded from the residual.
    """
    box = state_box(sp, state)
    h, w = frame.shape
    if (box[0] + box[2] <= 0 or box[1] + box[3] <= 0
            or box[0] >= w or box[1] >= h or box[2] <= 0 or box[3] <= 0):
        return config.fit_floor
    patch = sample_patch(frame, box)
    o = patch.ravel() - sp.mean_patch
    res = _project_residual(o, sp.U)
    if sp.masked_rects:
        res = res.copy()
        res[_rect_mask(box, sp.masked_rects).ravel()] = 0.0
    fit = float(np.exp(-(res @ res) / config.sigma_obs_sq))
    return max(fit, config.fit_floor)


def init_species(frame: np.ndarray, sp_id: int, box, config: TrackerConfig,
                 label=None) -> Species:
    """Start a species at a detection box; the first patch seeds the model."""
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise TrackerError("detection box must have positive size")
    state = np.array([x + w / 2.0, y + h / 2.0, 1.0])
    patch = sample_patch(frame, box).ravel()
    n = config.n_particles
    sp = Species(id=sp_id, template=(float(w), float(h)), gbest=state.copy(),
                 gbest_fit=1.0, mean_patch=patch.copy(), label=label)
    sp.window = [patch.copy()]
    sp.particles = np.tile(state, (n, 1))
    sp.velocities = np.zeros((n, 3))
    sp.pbest = sp.particles.copy()
    sp.pbest_fit = np.full(n, 1.0)
    return sp


def step_particles(sp: Species, frame: np.ndarray, n_iter: int,
                   rng: np.random.Generator, config: TrackerConfig,
                   force=None) -> Species:
    """One swarm iteration: Gaussian attraction plus annealed disturbance.

    v <- |r1|(p - x) + |r2|(g - x) [+ |r3| F] + eps with eps covariance
    sigma0^2 * exp(-c * n_iter).
    """
    n = config.n_particles
    r1 = np.abs(rng.standard_normal((n, 3)))
    r2 = np.abs(rng.standard_normal((n, 3)))
    std = np.asarray(config.sigma0) * np.exp(-config.c_anneal * n_iter / 2.0)
    eps = rng.standard_normal((n, 3)) * std
    v = (r1 * (sp.pbest - sp.particles) + r2 * (sp.gbest - sp.particles) + eps)
    if force is not None:
        r3 = np.abs(rng.standard_normal(n))
        v = v + r3[:, None] * np.asarray(force)
    if not config.track_scale:
        v[:, 2] = 0.0
    sp.velocities = v
    sp.particles = sp.particles + v
    sp.particles[:, 2] = np.maximum(sp.particles[:, 2], 1e-3)
    for i in range(n):
        fit = observe(frame, sp, sp.particles[i], config)
        if fit > sp.pbest_fit[i]:
            sp.pbest_fit[i] = fit
            sp.pbest[i] = sp.particles[i].copy()
        if fit > sp.gbest_fit:
            sp.gbest_fit = fit
            sp.gbest = sp.particles[i].copy()
    return sp


def detect_occlusion(species: list[Species]) -> list[CompetitionArena]:
    """An arena per species pair whose current gbest boxes intersect."""
    arenas = []
    for i, a in enumerate(species):
        for b in species[i + 1:]:
            ba = state_box(a, a.gbest)
            bb = state_box(b, b.gbest)
            x0 = max(ba[0], bb[0])
            y0 = max(ba[1], bb[1])
            x1 = min(ba[0] + ba[2], bb[0] + bb[2])
            y1 = min(ba[1] + ba[3], bb[1] + bb[3])
            if x1 > x0 and y1 > y0:
                arenas.append(CompetitionArena(pair=(a.id, b.id),
                                               rect=(x0, y0, x1 - x0, y1 - y0)))
    return arenas


def compete(arena: CompetitionArena, frame: np.ndarray,
            species: dict[int, Species], config: TrackerConfig) -> CompetitionArena:
    """Subspace power of each species on the overlap; loser masks it out.

    interactive_k = power_k / sum powers (sums to 1); the winner is the
    argmax, ties to the lower species id.
    """
    x, y, w, h = arena.rect
    if w <= 0 or h <= 0:
        raise TrackerError("competition arena has empty overlap")
    patch = sample_patch(frame, arena.rect).ravel()
    for k in arena.pair:
        sp = species[k]
        o = patch - sp.mean_patch
        res = _project_residual(o, sp.U)
        arena.powers[k] = float(np.exp(-(res @ res) / config.sigma_obs_sq))
    total = sum(arena.powers.values())
    if total <= 0:
        arena.interactive = {k: 0.5 for k in arena.pair}
    else:
        arena.interactive = {k: p / total for k, p in arena.powers.items()}
    arena.winner = min(arena.pair,
                       key=lambda k: (-arena.interactive[k], k))
    loser = arena.pair[0] if arena.winner == arena.pair[1] else arena.pair[1]
    species[loser].masked_rects.append(arena.rect)
    species[arena.winner].occluded_with.add(loser)
    species[loser].occluded_with.add(arena.winner)
    return arena


def repulsion_force(sp: Species, other: Species, arena: CompetitionArena,
                    config: TrackerConfig, rng: np.random.Generator) -> np.ndarray:
    """eta * overlap ratio * unit vector from the other species toward sp."""
    _, _, ow, oh = arena.rect
    box = state_box(sp, sp.gbest)
    area = box[2] * box[3]
    ratio = (ow * oh) / area if area > 0 else 0.0
    if ratio <= 0:
        return np.zeros(3)
    d = sp.gbest[:2] - other.gbest[:2]
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        d = np.array([np.cos(angle), np.sin(angle)])
        norm = 1.0
    unit = d / norm
    return np.array([config.eta * ratio * unit[0],
                     config.eta * ratio * unit[1], 0.0])


def selective_update(sp: Species, frame: np.ndarray,
                     arenas: list[CompetitionArena],
                     config: TrackerConfig) -> Species:
    """Append the gbest patch to the appearance window, gating occluded pixels.

    Overlap pixels enter only when their reconstruction error is below
    tau; rejected pixels are filled from the reconstruction.  Every
    update_every frames the subspace is recomputed from the window by SVD.
    """
    box = state_box(sp, sp.gbest)
    patch = sample_patch(frame, box).ravel()
    rec = sp.mean_patch + (patch - sp.mean_patch
                           - _project_residual(patch - sp.mean_patch, sp.U))
    overlap = np.zeros(PATCH_DIM, dtype=bool)
    for arena in arenas:
        if sp.id in arena.pair:
            overlap |= _rect_mask(box, [arena.rect]).ravel()
    reject = overlap & (np.abs(patch - rec) >= config.tau)
    merged = np.where(reject, rec, patch)
    sp.window.append(merged)
    if len(sp.window) > config.window:
        sp.window.pop(0)
    sp.frames_tracked += 1
    if sp.frames_tracked % config.update_every == 0 and len(sp.window) >= 2:
        data = np.stack(sp.window, axis=1)  # (PATCH_DIM, W)
        sp.mean_patch = data.mean(axis=1)
        centered = data - sp.mean_patch[:, None]
        u, svals, _ = np.linalg.svd(centered, full_matrices=False)
        rank = int((svals > 1e-10).sum())
        q = min(config.q, rank)
        sp.U = u[:, :q] if q > 0 else None
    return sp


@dataclass
class TrackRecord:
    frame: int
    id: int
    cx: float
    cy: float
    s: float
    w: float
    h: float
    fit: float


def track_sequence(frames, detections, config: TrackerConfig | None = None,
                   seed: int = 0) -> list[TrackRecord]:
    """Track initial detections through a grayscale frame sequence.

    detections: list of (x, y, w, h) boxes (optionally (box, label)
    pairs) on the first frame.  Per frame: arenas are resolved first,
    then each species runs the annealed swarm with early stopping, then
    its appearance model updates selectively.  Deterministic for a seed.
    """
    if config is None:
        config = TrackerConfig()
    if not detections:
        raise TrackerError("need at least one initial detection")
    frames = list(frames)
    rng = np.random.default_rng(seed)
    species = []
    for k, det in enumerate(detections):
        box, label = det if isinstance(det, tuple) and len(det) == 2 else (det, None)
        species.append(init_species(frames[0], k, box, config, label=label))

    records = []
    for sp in species:
        records.append(TrackRecord(0, sp.id, float(sp.gbest[0]), float(sp.gbest[1]),
                                   float(sp.gbest[2]), sp.template[0] * sp.gbest[2],
                                   sp.template[1] * sp.gbest[2], sp.gbest_fit))

    active = {sp.id: sp for sp in species}
    for t in range(1, len(frames)):
        frame = frames[t]
        live = [active[k] for k in sorted(active)]
        for sp in live:
            sp.masked_rects = []
            sp.occluded_with = set()
        arenas = detect_occlusion(live)
        sp_map = {sp.id: sp for sp in live}
        for arena in arenas:
            compete(arena, frame, sp_map, config)
        for sp in live:
            # Re-seed the swarm around the carried-over best state.
            n = config.n_particles
            sp.particles = sp.gbest + rng.standard_normal((n, 3)) * np.asarray(
                config.sigma0)
            if not config.track_scale:
                sp.particles[:, 2] = sp.gbest[2]
            sp.particles[:, 2] = np.maximum(sp.particles[:, 2], 1e-3)
            sp.velocities = np.zeros((n, 3))
            sp.pbest = sp.particles.copy()
            sp.pbest_fit = np.array([observe(frame, sp, p, config)
                                     for p in sp.particles])
            best = int(sp.pbest_fit.argmax())
            base_fit = observe(frame, sp, sp.gbest, config)
            if sp.pbest_fit[best] > base_fit:
                sp.gbest = sp.pbest[best].copy()
                sp.gbest_fit = float(sp.pbest_fit[best])
            else:
                sp.gbest_fit = base_fit
            my_arenas = [a for a in arenas if sp.id in a.pair]
            stall = 0
            prev_best = sp.gbest.copy()
            for it in range(config.n_iters):
                force = None
                for arena in my_arenas:
                    other = sp_map[arena.pair[0] if arena.pair[1] == sp.id
                                   else arena.pair[1]]
                    f = repulsion_force(sp, other, arena, config, rng)
                    force = f if force is None else force + f
                step_particles(sp, frame, it, rng, config, force=force)
                if np.array_equal(sp.gbest, prev_best):
                    stall += 1
                    if stall >= config.stall_iters:
                        break
                else:
                    stall = 0
                    prev_best = sp.gbest.copy()
            selective_update(sp, frame, arenas, config)
            if sp.gbest_fit < config.fit_floor * (1.0 + 1e-9):
                sp.lost_count += 1
            else:
                sp.lost_count = 0
            records.append(TrackRecord(t, sp.id, float(sp.gbest[0]),
                                       float(sp.gbest[1]), float(sp.gbest[2]),
                                       sp.template[0] * sp.gbest[2],
                                       sp.template[1] * sp.gbest[2],
                                       sp.gbest_fit))
        for sp in list(active.values()):
            if sp.lost_count >= config.lost_patience:
                del active[sp.id]
        if not active:
            break
    return records
