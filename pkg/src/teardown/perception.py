"""Detection geometry and short-horizon tracking.

Turns 2D part detections (replayed from a log or drawn from a noise model)
into labelled 3D part instances in the shared world frame.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDepthError, NoDepthError

FRAME_SIZE = 640

DEFAULT_ASSOCIATION_GATE_PX = 15.0
DEFAULT_MERGE_GATE_PX = 5.0
DEFAULT_EMA_ALPHA = 0.3
DEFAULT_DEPTH_WINDOW = 5
DEFAULT_MAX_MISSES = 3

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class PixelDetection:
    category: str
    confidence: float
    centroid: tuple[float, float]
    frame_id: int = 0
    # Optional per-detection depth sample (m), as carried by replay logs.
    depth: float | None = None
    # Ground-truth provenance for evaluation only; None for false positives.
    truth_id: str | None = None

    def __post_init__(self):
        u, v = self.centroid
        if not (0 <= u < FRAME_SIZE and 0 <= v < FRAME_SIZE):
            raise ValueError(f"centroid {self.centroid} outside the {FRAME_SIZE}px frame")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} not in [0, 1]")


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def project(self, point) -> tuple[float, float]:
        """Forward pinhole projection of a camera-frame point to pixels."""
        x, y, z = point
        if not z > 0:
            raise InvalidDepthError(f"point {point} is not in front of the camera")
        return (self.fx * x / z + self.cx, self.fy * y / z + self.cy)


class RigidTransform:
    """Rotation plus translation (metres); ``apply`` maps p -> R p + t."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, translation) -> RigidTransform:
        return cls(None, translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __repr__(self):
        return f"RigidTransform(translation={self.translation.tolist()})"


@dataclass
class TrackedPart:
    id: str
    category: str
    position_world: tuple[float, float, float]
    smoothed_position: tuple[float, float, float]
    last_seen_frame: int
    miss_count: int = 0
    # image-space estimate used for gating, smoothed like the 3D position
    last_pixel: tuple[float, float] = (0.0, 0.0)
    hits: int = 1
    truth_id: str | None = None


@dataclass(frozen=True)
class NoiseModel:
    precision: float = 1.0
    recall: float = 1.0
    loc_error_px: float = 0.0
    depth_noise_m: float = 0.0

    def __post_init__(self):
        for name in ("precision", "recall"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} not in [0, 1]")
        if self.loc_error_px < 0 or self.depth_noise_m < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class GroundTruthPart:
    """A physical part as the camera would see it this frame."""

    part_id: str
    category: str
    pixel: tuple[float, float]
    depth: float
    visible: bool = True


@dataclass
class Association:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)


def back_project(pixel, depth: float, camera: CameraModel) -> np.ndarray:
    """Lift a pixel with known depth to a camera-frame point (m)."""
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepthError(f"invalid depth {depth!r}")
    u, v = pixel
    return np.array(
        [(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth]
    )


def depth_at(depth_map, pixel, window: int = DEFAULT_DEPTH_WINDOW) -> float:
    """Median of the finite depths in a ``window``-wide square around ``pixel``.

    The window is clipped at the image border.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    grid = np.asarray(depth_map, dtype=float)
    u, v = int(round(pixel[0])), int(round(pixel[1]))
    h, w = grid.shape
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel {pixel} outside depth map")
    r = window // 2
    patch = grid[max(v - r, 0):v + r + 1, max(u - r, 0):u + r + 1]
    finite = patch[np.isfinite(patch)]
    if finite.size == 0:
        raise NoDepthError(f"no finite depth around {pixel}")
    return float(np.median(finite))


def to_world(point_camera, hand_eye: RigidTransform, tcp_pose: RigidTransform) -> np.ndarray:
    return tcp_pose.apply(hand_eye.apply(point_camera))


def associate(
    tracks: Sequence[TrackedPart],
    detections: Sequence[PixelDetection],
    gate: float = DEFAULT_ASSOCIATION_GATE_PX,
) -> Association:
    """Greedy class-consistent nearest-neighbour matching in image space.

    Candidate pairs are taken in ascending pixel distance, ties broken by the
    lower track id. Pairs farther apart than ``gate`` are never matched.
    Returned indices refer to positions in ``tracks`` and ``detections``.
    """
    candidates = []
    for ti, track in enumerate(tracks):
        tu, tv = track.last_pixel
        for di, det in enumerate(detections):
            if det.category != track.category:
                continue
            d = math.hypot(det.centroid[0] - tu, det.centroid[1] - tv)
            if d <= gate:
                candidates.append((d, track.id, di, ti))
    candidates.sort()

    used_t: set[int] = set()
    used_d: set[int] = set()
    result = Association()
    for _, _, di, ti in candidates:
        if ti in used_t or di in used_d:
            continue
        used_t.add(ti)
        used_d.add(di)
        result.pairs.append((ti, di))
    result.unmatched_tracks = [i for i in range(len(tracks)) if i not in used_t]
    result.unmatched_detections = [i for i in range(len(detections)) if i not in used_d]
    return result


def merge_duplicates(
    detections: Sequence[PixelDetection], gate: float = DEFAULT_MERGE_GATE_PX
) -> list[PixelDetection]:
    """Collapse same-category detections within ``gate`` px of each other.

    Clusters are single-linkage and merging repeats until no two survivors
    are within the gate, so the result is a fixpoint. A merged detection sits
    at the mean centroid of all its members and keeps the max confidence.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    # each group: [member detections]; merged repeatedly on group centroids
    groups = [[d] for d in detections]
    changed = True
    while changed:
        changed = False
        centroids = [_mean_centroid(g) for g in groups]
        parent = list(range(len(groups)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if groups[i][0].category != groups[j][0].category:
                    continue
                if math.dist(centroids[i], centroids[j]) <= gate:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
                        changed = True
        if changed:
            merged: dict[int, list[PixelDetection]] = {}
            for i, g in enumerate(groups):
                merged.setdefault(find(i), []).extend(g)
            groups = [merged[k] for k in sorted(merged)]

    out = []
    for g in groups:
        if len(g) == 1:
            out.append(g[0])
            continue
        depths = [d.depth for d in g if d.depth is not None]
        out.append(
            replace(
                g[0],
                centroid=_mean_centroid(g),
                confidence=max(d.confidence for d in g),
                depth=sum(depths) / len(depths) if depths else None,
            )
        )
    return out


def _mean_centroid(group):
    n = len(group)
    return (sum(d.centroid[0] for d in group) / n, sum(d.centroid[1] for d in group) / n)


def smooth(prev, new, alpha: float = DEFAULT_EMA_ALPHA) -> tuple[float, ...]:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return tuple(alpha * n + (1.0 - alpha) * p for p, n in zip(prev, new))


def fine_alignment_offset(detected_center, optical_axis, mm_per_px: float) -> tuple[float, float]:
    """In-plane correction (mm) that centres the tool on the detected recess."""
    if mm_per_px <= 0:
        raise ValueError("mm_per_px must be positive")
    return (
        (detected_center[0] - optical_axis[0]) * mm_per_px,
        (detected_center[1] - optical_axis[1]) * mm_per_px,
    )


def synthetic_detect(
    ground_truth_parts: Iterable[GroundTruthPart],
    noise: NoiseModel,
    rng: np.random.Generator,
    categories: Sequence[str] | None = None,
    frame_id: int = 0,
) -> list[PixelDetection]:
    """Draw one frame of detections from a precision/recall/localisation model.

    Each visible part is detected with probability ``recall``; its centroid
    gets isotropic Gaussian noise scaled so the mean radial error equals
    ``loc_error_px``. False positives arrive as a Poisson count whose mean
    makes the expected precision equal ``noise.precision``; they are placed
    uniformly in the frame with a category drawn from ``categories``.
    """
    parts = [p for p in ground_truth_parts if p.visible]
    if categories is None:
        categories = sorted({p.category for p in parts})
    # Rayleigh mean = sigma * sqrt(pi/2)
    sigma = noise.loc_error_px / math.sqrt(math.pi / 2.0)
    hi = math.nextafter(FRAME_SIZE, 0)

    out: list[PixelDetection] = []
    for part in parts:
        hit = rng.random() < noise.recall
        du, dv = rng.normal(0.0, 1.0, size=2) * sigma
        conf = rng.uniform(0.5, 1.0)
        dz = rng.normal(0.0, 1.0) * noise.depth_noise_m
        if not hit:
            continue
        u = min(max(part.pixel[0] + du, 0.0), hi)
        v = min(max(part.pixel[1] + dv, 0.0), hi)
        out.append(
            PixelDetection(
                part.category, float(conf), (float(u), float(v)), frame_id,
                depth=max(part.depth + float(dz), 1e-3), truth_id=part.part_id,
            )
        )

    if categories and noise.recall > 0 and parts:
        if noise.precision <= 0:
            raise ValueError("precision must be positive to size the false-positive rate")
        lam = len(parts) * noise.recall * (1.0 - noise.precision) / noise.precision
        depths = [p.depth for p in parts]
        for _ in range(int(rng.poisson(lam))):
            u, v = rng.uniform(0.0, FRAME_SIZE, size=2)
            cat = categories[int(rng.integers(len(categories)))]
            out.append(
                PixelDetection(
                    cat, float(rng.uniform(0.25, 0.75)),
                    (min(float(u), hi), min(float(v), hi)), frame_id,
                    depth=float(rng.uniform(min(depths), max(depths))),
                )
            )
    return out


class PartTracker:
    """Frame-to-frame tracker producing world-frame part instances.

    A track is dropped once it goes ``max_misses`` consecutive frames without
    an associated detection; only tracks with at least ``min_hits`` hits are
    reported by :meth:`confirmed`.
    """

    def __init__(
        self,
        camera: CameraModel,
        hand_eye: RigidTransform,
        association_gate: float = DEFAULT_ASSOCIATION_GATE_PX,
        merge_gate: float = DEFAULT_MERGE_GATE_PX,
        alpha: float = DEFAULT_EMA_ALPHA,
        max_misses: int = DEFAULT_MAX_MISSES,
        min_hits: int = 1,
        depth_window: int = DEFAULT_DEPTH_WINDOW,
    ):
        self.camera = camera
        self.hand_eye = hand_eye
        self.association_gate = association_gate
        self.merge_gate = merge_gate
        self.alpha = alpha
        self.max_misses = max_misses
        self.min_hits = min_hits
        self.depth_window = depth_window
        self.tracks: list[TrackedPart] = []
        self._next_id = 0

    def update(self, detections, tcp_pose: RigidTransform, depth_map=None) -> list[TrackedPart]:
        merged = merge_duplicates(detections, self.merge_gate)
        match = associate(self.tracks, merged, self.association_gate)

        for ti, di in match.pairs:
            track, det = self.tracks[ti], merged[di]
            pos = self._world(det, tcp_pose, depth_map)
            track.position_world = pos
            track.smoothed_position = smooth(track.smoothed_position, pos, self.alpha)
            track.last_seen_frame = det.frame_id
            track.last_pixel = smooth(track.last_pixel, det.centroid, self.alpha)
            track.miss_count = 0
            track.hits += 1
        for ti in match.unmatched_tracks:
            self.tracks[ti].miss_count += 1
        survivors = [t for t in self.tracks if t.miss_count < self.max_misses]

        for di in match.unmatched_detections:
            det = merged[di]
            try:
                pos = self._world(det, tcp_pose, depth_map)
            except (InvalidDepthError, NoDepthError):
                continue
            self._next_id += 1
            survivors.append(
                TrackedPart(
                    id=f"{det.category}#{self._next_id:04d}",
                    category=det.category,
                    position_world=pos,
                    smoothed_position=pos,
                    last_seen_frame=det.frame_id,
                    last_pixel=det.centroid,
                    truth_id=det.truth_id,
                )
            )
        self.tracks = survivors
        return self.tracks

    def confirmed(self) -> list[TrackedPart]:
        return [t for t in self.tracks if t.hits >= self.min_hits]

    def _world(self, det: PixelDetection, tcp_pose, depth_map):
        if depth_map is not None:
            d = depth_at(depth_map, det.centroid, self.depth_window)
        elif det.depth is not None:
            d = det.depth
        else:
            raise NoDepthError("detection has no depth and no depth map was given")
        p = to_world(back_project(det.centroid, d, self.camera), self.hand_eye, tcp_pose)
        return tuple(float(x) for x in p)


LOG_FIELDS = ("frame_id", "category", "confidence", "u", "v", "depth")


def write_detection_log(path, detections: Iterable[PixelDetection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for d in detections:
            writer.writerow([
                d.frame_id, d.category, repr(d.confidence),
                repr(d.centroid[0]), repr(d.centroid[1]),
                "" if d.depth is None else repr(d.depth),
            ])


def read_detection_log(path) -> dict[int, list[PixelDetection]]:
    """Parse a replay log into detections grouped by frame id (ascending)."""
    frames: dict[int, list[PixelDetection]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LOG_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"detection log missing columns: {sorted(missing)}")
        for row in reader:
            fid = int(row["frame_id"])
            frames.setdefault(fid, []).append(
                PixelDetection(
                    category=row["category"],
                    confidence=float(row["confidence"]),
                    centroid=(float(row["u"]), float(row["v"])),
                    frame_id=fid,
                    depth=float(row["depth"]) if row["depth"] else None,
                )
            )
    return dict(sorted(frames.items()))
