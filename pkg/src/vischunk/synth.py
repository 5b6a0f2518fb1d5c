"""Deterministic synthetic scenes and the three non-learned baselines.

Scenes are street-like: a banded background, several same-class instances
that are often placed touching, Voronoi superpixels, a noisy per-superpixel
class distribution standing in for a scene parser, and jittered ground-truth
boxes standing in for a detector.

Every random draw comes from a Philox generator keyed by
``(master seed, scene index, purpose, attempt)``.  Purposes are named
streams (``"superpixels"``, ``"instances"``, ``"semantic"``, ``"color"``,
``"detector"``), so adding a stream never shifts the others.
"""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .scene import Chunk, GroundTruthInstance, PixelGrid, Scene, dumps_scene, loads_scene

log = logging.getLogger(__name__)

BACKGROUND = 0


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    width: int = 160
    height: int = 120
    n_superpixels: int = 300
    n_instances: tuple[int, int] = (2, 4)
    shape: str = "ellipse"
    #: semi-axis range as a fraction of image height
    instance_radius: tuple[float, float] = (0.10, 0.18)
    adjacency_pressure: float = 0.7
    n_classes: int = 2
    target_class: int = 1
    semantic_concentration: float = 10.0
    color_spread: float = 0.06
    box_jitter: float = 0.05
    drop_prob: float = 0.1
    duplicate_prob: float = 0.05
    max_retries: int = 50
    seed: int = 0

    def __post_init__(self):
        if min(self.width, self.height, self.n_superpixels, self.n_classes) <= 0:
            raise ValueError("sizes and counts must be positive")
        if self.n_superpixels > self.width * self.height:
            raise ValueError("more superpixels than pixels")
        lo, hi = self.n_instances
        if not 1 <= lo <= hi:
            raise ValueError(f"bad instance count range {self.n_instances}")
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown shape family {self.shape!r}")
        for name in ("adjacency_pressure", "drop_prob", "duplicate_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if not 1 <= self.target_class < self.n_classes:
            raise ValueError("target_class must be a foreground class")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def rng_stream(seed: int, scene_index: int, purpose: str, attempt: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one (scene, purpose) pair."""
    key = [seed, scene_index, zlib.crc32(purpose.encode()), attempt]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(eq=False)
class SemanticChannel:
    """Observations available without ground truth.

    Attributes:
        class_scores: (n_superpixels, n_classes) rows on the simplex.
        colors: (height, width, 3) uint8 pixel colors.
        boxes: synthetic detections ``(rmin, cmin, rmax, cmax)``, inclusive.
    """

    class_scores: np.ndarray
    colors: np.ndarray
    boxes: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def argmax_labels(self) -> np.ndarray:
        return np.argmax(self.class_scores, axis=1)


def voronoi_labels(width: int, height: int, n_sites: int, rng: np.random.Generator) -> np.ndarray:
    """Nearest-site labels for sites at distinct random pixels.

    Each site owns at least its own pixel, so the cell count is exact.
    Distance ties go to the lower site index.
    """
    flat = rng.choice(width * height, size=n_sites, replace=False)
    sr, sc = np.divmod(flat, width)
    labels = np.empty((height, width), dtype=np.int64)
    cols = np.arange(width)
    for r in range(height):
        d = (r - sr[:, None]) ** 2 + (cols[None, :] - sc[:, None]) ** 2
        labels[r] = np.argmin(d, axis=0)
    return labels


def _shape_mask(shape, cy, cx, ry, rx, height, width) -> np.ndarray:
    rows, cols = np.ogrid[:height, :width]
    if shape == "rectangle":
        return (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def touching(a: np.ndarray, b: np.ndarray) -> bool:
    """True if some pixel of ``a`` is 4-adjacent to some pixel of ``b``."""
    return bool((a[:, :-1] & b[:, 1:]).any() or (a[:, 1:] & b[:, :-1]).any()
                or (a[:-1, :] & b[1:, :]).any() or (a[1:, :] & b[:-1, :]).any())


def _place_instances(cfg: SynthConfig, rng: np.random.Generator):
    H, W = cfg.height, cfg.width
    m = int(rng.integers(cfg.n_instances[0], cfg.n_instances[1] + 1))
    owner = np.full((H, W), -1, dtype=np.int64)
    placed = []  # (cy, cx, ry, rx)
    classes = []
    for t in range(m):
        for _ in range(cfg.max_retries):
            ry = rng.uniform(*cfg.instance_radius) * H
            rx = ry * rng.uniform(1.0, 1.6)
            adjacent = t > 0 and rng.random() < cfg.adjacency_pressure
            if adjacent:
                p = int(rng.integers(len(placed)))
                pcy, pcx, pry, prx = placed[p]
                side = 1 if rng.random() < 0.5 else -1
                cx = pcx + side * 0.85 * (prx + rx)
                cy = pcy + rng.uniform(-0.3, 0.3) * pry
            else:
                cy = rng.uniform(0, H - 1)
                cx = rng.uniform(0, W - 1)
            nominal = _shape_mask(cfg.shape, cy, cx, ry, rx, H, W)
            mask = nominal & (owner < 0)  # later instance loses contested pixels
            full = np.pi * ry * rx if cfg.shape == "ellipse" else 4 * ry * rx
            if mask.sum() < 0.5 * full:
                continue
            if adjacent and not touching(mask, owner == p):
                continue
            owner[mask] = t
            placed.append((cy, cx, ry, rx))
            classes.append(cfg.target_class if cfg.n_classes == 2 else int(rng.integers(1, cfg.n_classes)))
            break
        else:
            return None
    return owner, classes


def _colors(cfg, owner, rng) -> np.ndarray:
    H, W = cfg.height, cfg.width
    band_colors = rng.uniform(0.1, 0.9, size=(3, 3))
    bands = np.minimum((np.arange(H) * 3) // H, 2)
    base = np.broadcast_to(band_colors[bands][:, None, :], (H, W, 3)).copy()
    m = int(owner.max()) + 1
    inst_colors = rng.uniform(0.1, 0.9, size=(max(m, 1), 3))
    inside = owner >= 0
    base[inside] = inst_colors[owner[inside]]
    noisy = base + rng.normal(0.0, cfg.color_spread, size=base.shape)
    return np.clip(np.rint(noisy * 255), 0, 255).astype(np.uint8)


def _semantic_scores(cfg, scene: Scene, rng) -> np.ndarray:
    n = scene.n_superpixels
    counts = np.zeros((n, cfg.n_classes), dtype=np.int64)
    counts[:, BACKGROUND] = scene.sp_area - scene.sp_inter.sum(axis=1)
    for g in scene.instances:
        counts[:, g.class_label] += scene.sp_inter[:, g.id]
    majority = np.argmax(counts, axis=1)
    alpha = np.ones((n, cfg.n_classes)) + cfg.semantic_concentration * np.eye(cfg.n_classes)[majority]
    return np.stack([rng.dirichlet(a) for a in alpha])


def _detections(cfg, scene: Scene, rng) -> list[tuple[int, int, int, int]]:
    H, W = cfg.height, cfg.width
    boxes = []
    for g in scene.instances:
        if rng.random() < cfg.drop_prob:
            continue
        copies = 2 if rng.random() < cfg.duplicate_prob else 1
        r0, c0, r1, c1 = scene.instance_bbox(g.id)
        for _ in range(copies):
            dr = int(round(rng.normal(0.0, cfg.box_jitter * H)))
            dc = int(round(rng.normal(0.0, cfg.box_jitter * W)))
            box = (max(r0 + dr, 0), max(c0 + dc, 0), min(r1 + dr, H - 1), min(c1 + dc, W - 1))
            if box[0] <= box[2] and box[1] <= box[3]:
                boxes.append(box)
    return boxes


def generate_scene(cfg: SynthConfig, scene_index: int) -> tuple[Scene, SemanticChannel]:
    """Build scene ``scene_index`` of the dataset described by ``cfg``.

    If instances cannot be placed within ``max_retries`` draws each, the scene
    is regenerated from the next sub-seed (``attempt``) of every stream.
    """
    for attempt in range(100):
        placed = _place_instances(cfg, rng_stream(cfg.seed, scene_index, "instances", attempt))
        if placed is None:
            log.info("scene %d: placement failed on attempt %d, reseeding", scene_index, attempt)
            continue
        owner, classes = placed
        labels = voronoi_labels(cfg.width, cfg.height, cfg.n_superpixels,
                                rng_stream(cfg.seed, scene_index, "superpixels", attempt))
        flat = owner.ravel()
        instances = [GroundTruthInstance(j, classes[j], np.flatnonzero(flat == j)) for j in range(len(classes))]
        scene = Scene(PixelGrid(cfg.width, cfg.height, labels), instances)
        channel = SemanticChannel(
            class_scores=_semantic_scores(cfg, scene, rng_stream(cfg.seed, scene_index, "semantic", attempt)),
            colors=_colors(cfg, owner, rng_stream(cfg.seed, scene_index, "color", attempt)),
            boxes=_detections(cfg, scene, rng_stream(cfg.seed, scene_index, "detector", attempt)),
        )
        return scene, channel
    raise SynthError(f"could not place instances for scene {scene_index}")


def toy_scene(seed: int, n_superpixels: tuple[int, int] = (4, 15), side: tuple[int, int] = (6, 14),
              n_instances: tuple[int, int] = (1, 3)) -> Scene:
    """Small random scene for exhaustive-oracle checks.

    Instances are random rectangles; later ones lose contested pixels and
    are dropped if nothing remains.
    """
    rng = rng_stream(seed, 0, "toy")
    H = int(rng.integers(side[0], side[1] + 1))
    W = int(rng.integers(side[0], side[1] + 1))
    n = int(rng.integers(n_superpixels[0], min(n_superpixels[1], H * W) + 1))
    labels = voronoi_labels(W, H, n, rng)
    owner = np.full((H, W), -1, dtype=np.int64)
    m = int(rng.integers(n_instances[0], n_instances[1] + 1))
    count = 0
    for _ in range(m):
        r0, r1 = np.sort(rng.integers(0, H, size=2))
        c0, c1 = np.sort(rng.integers(0, W, size=2))
        mask = np.zeros_like(owner, dtype=bool)
        mask[r0:r1 + 1, c0:c1 + 1] = True
        mask &= owner < 0
        if mask.any():
            owner[mask] = count
            count += 1
    flat = owner.ravel()
    instances = [GroundTruthInstance(j, 1, np.flatnonzero(flat == j)) for j in range(count)]
    return Scene(PixelGrid(W, H, labels), instances)


# baselines

def _ordered(scene: Scene, groups: list[list[int]]) -> list[Chunk]:
    chunks = [scene.chunk(g) for g in groups if g]
    return sorted(chunks, key=lambda c: (-c.area, c.superpixel_ids[0]))


def baseline_cc(scene: Scene, channel: SemanticChannel, target_class: int = 1) -> list[Chunk]:
    """Connected components of target-class superpixels, largest first."""
    target = channel.argmax_labels == target_class
    ids = np.flatnonzero(target)
    if ids.size == 0:
        return []
    adj = scene.adjacency
    keep = target[adj[:, 0]] & target[adj[:, 1]]
    a, b = adj[keep, 0], adj[keep, 1]
    n = scene.n_superpixels
    graph = coo_matrix((np.ones(a.size), (a, b)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for i in ids.tolist():
        groups.setdefault(int(comp[i]), []).append(i)
    return _ordered(scene, list(groups.values()))


def superpixels_in_box(scene: Scene, box) -> np.ndarray:
    """Boolean mask of superpixels with more than half their area inside ``box``."""
    r0, c0, r1, c1 = box
    inside = np.bincount(scene.labels[r0:r1 + 1, c0:c1 + 1].ravel(), minlength=scene.n_superpixels)
    return 2 * inside > scene.sp_area


def baseline_boxes(scene: Scene, channel: SemanticChannel) -> list[Chunk]:
    """One chunk per detection box; empty conversions are dropped."""
    groups = [np.flatnonzero(superpixels_in_box(scene, b)).tolist() for b in channel.boxes]
    return _ordered(scene, groups)


def baseline_intersection(scene: Scene, channel: SemanticChannel, target_class: int = 1) -> list[Chunk]:
    """Target-class superpixels inside each detection box."""
    target = channel.argmax_labels == target_class
    groups = [np.flatnonzero(superpixels_in_box(scene, b) & target).tolist() for b in channel.boxes]
    return _ordered(scene, groups)


# files

def dumps_channel(channel: SemanticChannel) -> str:
    n, k = channel.class_scores.shape
    H, W, _ = channel.colors.shape
    lines = [f"channel {n} {k} {H} {W} {len(channel.boxes)}"]
    for row in channel.class_scores:
        lines.append(" ".join(repr(float(v)) for v in row))
    for row in channel.colors.reshape(H, W * 3):
        lines.append(" ".join(map(str, row.tolist())))
    for b in channel.boxes:
        lines.append("box " + " ".join(map(str, b)))
    return "\n".join(lines) + "\n"


def loads_channel(text: str) -> SemanticChannel:
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] != "channel":
        raise ValueError(f"bad channel header {lines[0]!r}")
    n, k, H, W, nb = map(int, head[1:])
    scores = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, k)
    colors = np.array([list(map(int, ln.split())) for ln in lines[1 + n:1 + n + H]], dtype=np.uint8)
    boxes = [tuple(map(int, ln.split()[1:])) for ln in lines[1 + n + H:1 + n + H + nb]]
    return SemanticChannel(scores, colors.reshape(H, W, 3), boxes)


def write_dataset(cfg: SynthConfig, indices: Sequence[int], out_dir: str | Path) -> Path:
    """Write scene and channel files plus ``manifest.txt``.

    Manifest lines are ``scene_index seed file_path sha256`` with the path
    relative to ``out_dir`` and the hash taken over the scene file bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in indices:
        scene, channel = generate_scene(cfg, i)
        name = f"scene_{i:05d}"
        data = dumps_scene(scene).encode()
        (out / f"{name}.scene").write_bytes(data)
        (out / f"{name}.channel").write_text(dumps_channel(channel))
        lines.append(f"{i} {cfg.seed} {name}.scene {hashlib.sha256(data).hexdigest()}")
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class ManifestEntry:
    scene_index: int
    seed: int
    path: Path
    sha256: str

    @property
    def scene_id(self) -> str:
        return self.path.stem

    def load(self, verify: bool = True) -> tuple[Scene, SemanticChannel]:
        data = self.path.read_bytes()
        if verify and hashlib.sha256(data).hexdigest() != self.sha256:
            raise ValueError(f"hash mismatch for {self.path}")
        return loads_scene(data.decode()), loads_channel(self.path.with_suffix(".channel").read_text())


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    out = []
    for ln in path.read_text().splitlines():
        if not ln.strip():
            continue
        idx, seed, rel, digest = ln.split()
        out.append(ManifestEntry(int(idx), int(seed), path.parent / rel, digest))
    return out
