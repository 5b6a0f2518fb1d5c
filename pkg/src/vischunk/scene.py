"""Pixel-count algebra over superpixel scenes.

A scene is a pixel grid partitioned into superpixels plus a set of pairwise
disjoint ground-truth instance masks.  Every count used downstream (chunk
areas, chunk/instance intersections) is an exact integer, and IoU values are
returned as :class:`fractions.Fraction` so comparisons never round.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

#: Sentinel ratio for superpixels lying entirely inside an instance.
RATIO_INF = math.inf


class SceneError(ValueError):
    """Raised when scene inputs violate the partition or disjointness rules."""


@dataclass(frozen=True, eq=False)
class PixelGrid:
    """Dense row-major map from pixel to superpixel id."""

    width: int
    height: int
    superpixel_id: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"grid size must be positive, got {self.width}x{self.height}")
        ids = np.ascontiguousarray(self.superpixel_id, dtype=np.int64)
        if ids.shape != (self.height, self.width):
            raise SceneError(f"superpixel_id shape {ids.shape} != ({self.height}, {self.width})")
        if ids.min() < 0:
            raise SceneError("negative superpixel id")
        counts = np.bincount(ids.ravel())
        if (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise SceneError(f"superpixel {missing} owns no pixels")
        ids.setflags(write=False)
        object.__setattr__(self, "superpixel_id", ids)

    @property
    def n_superpixels(self) -> int:
        return int(self.superpixel_id.max()) + 1

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    """An instance mask stored as sorted row-major flat pixel indices.

    An instance with an empty mask is a *dummy*: it pads assignment problems
    and has zero intersection with every chunk.
    """

    id: int
    class_label: int
    mask: np.ndarray

    def __post_init__(self):
        mask = np.unique(np.asarray(self.mask, dtype=np.int64))
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def area(self) -> int:
        return int(self.mask.size)

    @property
    def is_dummy(self) -> bool:
        return self.mask.size == 0


def dummy_instance(id: int = -1) -> GroundTruthInstance:
    return GroundTruthInstance(id=id, class_label=-1, mask=np.empty(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Superpixel:
    id: int
    area: int
    pixel_list: np.ndarray
    centroid: tuple[float, float]
    per_instance_intersection: tuple[int, ...]


@dataclass(frozen=True)
class Chunk:
    """A union of superpixels with cached pixel counts.

    ``superpixel_ids`` is kept sorted; equality and hashing use it alone, so
    two chunks built in different orders compare equal.
    """

    superpixel_ids: tuple[int, ...]
    area: int = field(compare=False)
    per_instance_intersection: tuple[int, ...] = field(compare=False)

    def __contains__(self, sp_id: int) -> bool:
        ids = self.superpixel_ids
        i = bisect_left(ids, sp_id)
        return i < len(ids) and ids[i] == sp_id

    def __len__(self) -> int:
        return len(self.superpixel_ids)

    @property
    def key(self) -> tuple[int, ...]:
        return self.superpixel_ids

    def add(self, sp: Superpixel) -> "Chunk":
        if sp.id in self:
            raise SceneError(f"superpixel {sp.id} already in chunk")
        ids = list(self.superpixel_ids)
        ids.insert(bisect_left(ids, sp.id), sp.id)
        inter = tuple(a + b for a, b in zip(self.per_instance_intersection, sp.per_instance_intersection))
        return Chunk(tuple(ids), self.area + sp.area, inter)


class Scene:
    """Immutable superpixel scene with precomputed intersection counts.

    Attributes:
        grid: the superpixel partition.
        instances: ground-truth instances; ``instances[j].id == j``.
        sp_area: (n,) pixel count per superpixel.
        sp_inter: (n, m) pixel count of superpixel ``i`` inside instance ``j``.
    """

    def __init__(self, grid: PixelGrid, instances: Sequence[GroundTruthInstance]):
        self.grid = grid
        self.instances = tuple(instances)
        n_pix = grid.n_pixels
        owner = np.full(n_pix, -1, dtype=np.int64)
        for j, g in enumerate(self.instances):
            if g.id != j:
                raise SceneError(f"instance ids must be 0..m-1 in order; position {j} has id {g.id}")
            if g.area == 0:
                raise SceneError(f"instance {j} has an empty mask")
            if g.mask[0] < 0 or g.mask[-1] >= n_pix:
                raise SceneError(f"instance {j} mask lies outside the {grid.width}x{grid.height} grid")
            clash = g.mask[owner[g.mask] >= 0]
            if clash.size:
                r, c = divmod(int(clash[0]), grid.width)
                raise SceneError(f"instances {int(owner[clash[0]])} and {j} overlap at pixel ({r}, {c})")
            owner[g.mask] = j
        owner.setflags(write=False)
        self.instance_map = owner.reshape(grid.height, grid.width)

        flat = grid.superpixel_id.ravel()
        n = grid.n_superpixels
        m = len(self.instances)
        self.sp_area = np.bincount(flat, minlength=n).astype(np.int64)
        inter = np.zeros((n, m), dtype=np.int64)
        inside = owner >= 0
        np.add.at(inter, (flat[inside], owner[inside]), 1)
        self.sp_inter = inter
        for arr in (self.sp_area, self.sp_inter):
            arr.setflags(write=False)

    @property
    def width(self) -> int:
        return self.grid.width

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def n_superpixels(self) -> int:
        return self.sp_area.size

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def labels(self) -> np.ndarray:
        return self.grid.superpixel_id

    @cached_property
    def _pixel_order(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.labels.ravel()
        order = np.argsort(flat, kind="stable")
        starts = np.concatenate([[0], np.cumsum(self.sp_area)])
        return order, starts

    def pixels_of(self, sp_id: int) -> np.ndarray:
        order, starts = self._pixel_order
        return order[starts[sp_id]:starts[sp_id + 1]]

    def superpixel(self, sp_id: int) -> Superpixel:
        if not 0 <= sp_id < self.n_superpixels:
            raise SceneError(f"superpixel id {sp_id} out of range [0, {self.n_superpixels})")
        return Superpixel(
            id=sp_id,
            area=int(self.sp_area[sp_id]),
            pixel_list=self.pixels_of(sp_id),
            centroid=tuple(self.sp_centroid[sp_id]),
            per_instance_intersection=tuple(int(v) for v in self.sp_inter[sp_id]),
        )

    def empty_chunk(self) -> Chunk:
        return Chunk((), 0, (0,) * self.n_instances)

    def chunk(self, ids: Iterable[int]) -> Chunk:
        key = tuple(sorted(set(int(i) for i in ids)))
        if key and (key[0] < 0 or key[-1] >= self.n_superpixels):
            raise SceneError(f"superpixel ids out of range in {key}")
        idx = np.asarray(key, dtype=np.int64)
        area = int(self.sp_area[idx].sum())
        inter = tuple(int(v) for v in self.sp_inter[idx].sum(axis=0)) if key else (0,) * self.n_instances
        return Chunk(key, area, inter)

    def chunk_mask(self, chunk: Chunk) -> np.ndarray:
        """Boolean (height, width) pixel mask of a chunk."""
        member = np.zeros(self.n_superpixels, dtype=bool)
        member[list(chunk.superpixel_ids)] = True
        return member[self.labels]

    # geometry caches used by the feature extractors

    @cached_property
    def sp_moments(self) -> np.ndarray:
        """(n, 6) raw pixel sums: 1, row, col, row^2, col^2, row*col."""
        rows, cols = np.indices((self.height, self.width), dtype=np.int64)
        flat = self.labels.ravel()
        r, c = rows.ravel(), cols.ravel()
        out = np.empty((self.n_superpixels, 6), dtype=np.float64)
        for k, w in enumerate((np.ones_like(r), r, c, r * r, c * c, r * c)):
            out[:, k] = np.bincount(flat, weights=w, minlength=self.n_superpixels)
        out.setflags(write=False)
        return out

    @cached_property
    def sp_centroid(self) -> np.ndarray:
        mom = self.sp_moments
        return np.stack([mom[:, 1] / mom[:, 0], mom[:, 2] / mom[:, 0]], axis=1)

    @cached_property
    def sp_bbox(self) -> np.ndarray:
        """(n, 4) inclusive bounding boxes ``rmin, cmin, rmax, cmax``."""
        rows, cols = np.indices((self.height, self.width))
        flat = self.labels.ravel()
        n = self.n_superpixels
        box = np.empty((n, 4), dtype=np.int64)
        box[:, 0] = self.height
        box[:, 1] = self.width
        box[:, 2] = -1
        box[:, 3] = -1
        np.minimum.at(box[:, 0], flat, rows.ravel())
        np.minimum.at(box[:, 1], flat, cols.ravel())
        np.maximum.at(box[:, 2], flat, rows.ravel())
        np.maximum.at(box[:, 3], flat, cols.ravel())
        box.setflags(write=False)
        return box

    @cached_property
    def adjacency(self) -> np.ndarray:
        """(p, 2) sorted unique pairs ``a < b`` of 4-adjacent superpixels."""
        lab = self.labels
        pairs = [
            np.stack([lab[:, :-1].ravel(), lab[:, 1:].ravel()], axis=1),
            np.stack([lab[:-1, :].ravel(), lab[1:, :].ravel()], axis=1),
        ]
        p = np.concatenate(pairs)
        p = p[p[:, 0] != p[:, 1]]
        p = np.sort(p, axis=1)
        return np.unique(p, axis=0)

    def instance_bbox(self, j: int) -> tuple[int, int, int, int]:
        rows, cols = np.divmod(self.instances[j].mask, self.width)
        return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


def build_scene(grid: PixelGrid, instances: Sequence[GroundTruthInstance]) -> Scene:
    return Scene(grid, instances)


def iou(c: Chunk, g: GroundTruthInstance) -> Fraction:
    """Exact |c ∩ g| / |c ∪ g|; zero for dummy instances and empty chunks."""
    if g.is_dummy or c.area == 0:
        return Fraction(0)
    inter = c.per_instance_intersection[g.id]
    return Fraction(inter, c.area + g.area - inter)


def iou_extend(c: Chunk, s: Superpixel, g: GroundTruthInstance) -> Fraction:
    """IoU of ``c ∪ {s}`` with ``g`` from cached counts.

    Superpixels never overlap, so adding ``s`` grows the intersection by
    ``|s ∩ g|`` and the union by ``|s| - |s ∩ g|``.
    """
    if s.id in c:
        raise SceneError(f"superpixel {s.id} already in chunk")
    if g.is_dummy:
        return Fraction(0)
    inter = c.per_instance_intersection[g.id]
    union = c.area + g.area - inter
    dx = s.per_instance_intersection[g.id]
    dy = s.area - dx
    return Fraction(inter + dx, union + dy)


@dataclass(frozen=True, eq=False)
class GrowthRatios:
    """Per-superpixel growth quantities against one instance.

    ``delta_x[i] = |s_i ∩ g|`` and ``delta_y[i] = |s_i| - |s_i ∩ g|``; the
    fill fraction is ``alpha_i = delta_x / |s_i|`` and the growth ratio is
    ``r_i = delta_x / delta_y`` (``RATIO_INF`` when ``delta_y == 0``).
    """

    instance_id: int
    delta_x: np.ndarray
    delta_y: np.ndarray

    def alpha(self, i: int) -> Fraction:
        return Fraction(int(self.delta_x[i]), int(self.delta_x[i] + self.delta_y[i]))

    def ratio(self, i: int) -> Fraction | float:
        dy = int(self.delta_y[i])
        if dy == 0:
            return RATIO_INF
        return Fraction(int(self.delta_x[i]), dy)

    @property
    def alpha_float(self) -> np.ndarray:
        return self.delta_x / (self.delta_x + self.delta_y)

    def alpha_order(self) -> list[int]:
        """Ids by decreasing alpha, ties by increasing id."""
        n = self.delta_x.size
        return sorted(range(n), key=lambda i: (-self.alpha(i), i))

    def ratio_order(self) -> list[int]:
        """Ids by decreasing ratio; infinite ratios first by decreasing delta_x."""
        n = self.delta_x.size

        def key(i):
            r = self.ratio(i)
            if r is RATIO_INF:
                return (0, -int(self.delta_x[i]), 0, i)
            return (1, 0, -r, i)

        return sorted(range(n), key=key)


def growth_ratios(scene: Scene, g: GroundTruthInstance) -> GrowthRatios:
    dx = scene.sp_inter[:, g.id].copy()
    dy = scene.sp_area - dx
    return GrowthRatios(g.id, dx, dy)


def _rle(mask: np.ndarray) -> list[tuple[int, int]]:
    if mask.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(mask) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [mask.size]])
    return [(int(mask[s]), int(e - s)) for s, e in zip(starts, ends)]


def _unrle(pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    parts = [np.arange(s, s + n, dtype=np.int64) for s, n in pairs]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def dumps_scene(scene: Scene) -> str:
    """Serialize to the line-oriented scene text format."""
    lines = [f"scene {scene.width} {scene.height} {scene.n_superpixels} {scene.n_instances}"]
    for row in scene.labels:
        lines.append(" ".join(map(str, row.tolist())))
    for g in scene.instances:
        runs = " ".join(f"{s},{n}" for s, n in _rle(g.mask))
        lines.append(f"instance {g.id} {g.class_label} {runs}")
    return "\n".join(lines) + "\n"


def loads_scene(text: str) -> Scene:
    lines = text.splitlines()
    if not lines:
        raise SceneError("empty scene text")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "scene":
        raise SceneError(f"bad scene header: {lines[0]!r}")
    width, height, n_sp, n_inst = map(int, head[1:])
    if len(lines) < 1 + height + n_inst:
        raise SceneError("truncated scene text")
    rows = [list(map(int, ln.split())) for ln in lines[1:1 + height]]
    grid = PixelGrid(width, height, np.array(rows, dtype=np.int64))
    if grid.n_superpixels != n_sp:
        raise SceneError(f"header says {n_sp} superpixels, grid has {grid.n_superpixels}")
    instances = []
    for ln in lines[1 + height:1 + height + n_inst]:
        parts = ln.split()
        if parts[0] != "instance":
            raise SceneError(f"bad instance line: {ln!r}")
        pairs = [tuple(map(int, p.split(","))) for p in parts[3:]]
        instances.append(GroundTruthInstance(int(parts[1]), int(parts[2]), _unrle(pairs)))
    return Scene(grid, instances)
