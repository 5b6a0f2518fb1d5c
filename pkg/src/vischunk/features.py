"""Feature vectors for the list predictor and the grower.

List features describe a candidate chunk and its relation to the list built
so far; grower features describe the chunk obtained by adding one candidate
superpixel to the current chunk.  Both are computed in batches from
additive per-superpixel sums (area, class mass, raw moments, bounding box,
color histogram), so re-scoring every remaining candidate after a growth
step is a handful of array operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import Chunk, Scene, SceneError

COLOR_BINS = 8
NEAR_FRACTION = 0.1
RELATIONS = ("above", "below", "left", "right", "overlapping", "near", "far")


def quality_columns(n_classes: int) -> list[str]:
    return [f"class_{k}" for k in range(n_classes)] + ["eta20", "eta02", "eta11", "area_frac", "scale"]


def phi_columns(n_classes: int) -> list[str]:
    return (quality_columns(n_classes) + ["max_iou_list", "mean_iou_list"]
            + [f"rel_{r}" for r in RELATIONS] + ["list_len"])


def theta_columns(n_classes: int) -> list[str]:
    return (quality_columns(n_classes) + ["color_sim", "region_fill"]
            + [f"sp_class_{k}" for k in range(n_classes)] + ["sp_area_frac"])


@dataclass
class ChunkStats:
    """Additive sums for a batch of chunks (one row each)."""

    area: np.ndarray       # (N,)
    class_mass: np.ndarray  # (N, K) area-weighted class scores
    moments: np.ndarray    # (N, 6) raw sums 1, r, c, r^2, c^2, rc
    bbox: np.ndarray       # (N, 4) rmin, cmin, rmax, cmax
    color: np.ndarray      # (N, 3 * COLOR_BINS) pixel counts

    def __add__(self, other: "ChunkStats") -> "ChunkStats":
        box = np.concatenate([np.minimum(self.bbox[:, :2], other.bbox[:, :2]),
                              np.maximum(self.bbox[:, 2:], other.bbox[:, 2:])], axis=1)
        return ChunkStats(self.area + other.area, self.class_mass + other.class_mass,
                          self.moments + other.moments, box, self.color + other.color)


class SceneFeatures:
    """Per-scene caches shared by every feature computation on that scene."""

    def __init__(self, scene: Scene, channel):
        self.scene = scene
        self.channel = channel
        self.n_classes = channel.class_scores.shape[1]
        area = scene.sp_area.astype(np.float64)
        self.sp_class_mass = channel.class_scores * area[:, None]
        bins = np.minimum(channel.colors.astype(np.int64) * COLOR_BINS // 256, COLOR_BINS - 1)
        flat = scene.labels.ravel()
        n = scene.n_superpixels
        hist = np.zeros((n, 3 * COLOR_BINS))
        for ch in range(3):
            idx = flat * (3 * COLOR_BINS) + ch * COLOR_BINS + bins[..., ch].ravel()
            hist += np.bincount(idx, minlength=n * 3 * COLOR_BINS).reshape(n, -1)
        self.sp_color = hist
        self.n_pixels = scene.width * scene.height
        self.diag = float(np.hypot(scene.width, scene.height))

    def membership(self, chunks: Sequence[Chunk]) -> np.ndarray:
        m = np.zeros((len(chunks), self.scene.n_superpixels), dtype=bool)
        for i, c in enumerate(chunks):
            m[i, list(c.superpixel_ids)] = True
        return m

    def stats(self, member: np.ndarray) -> ChunkStats:
        """Sums over the rows of a boolean membership matrix."""
        s = self.scene
        mf = member.astype(np.float64)
        big = np.iinfo(np.int64).max
        lo = np.where(member[:, :, None], s.sp_bbox[None, :, :2], big).min(axis=1)
        hi = np.where(member[:, :, None], s.sp_bbox[None, :, 2:], -1).max(axis=1)
        return ChunkStats(mf @ s.sp_area.astype(np.float64), mf @ self.sp_class_mass,
                          mf @ s.sp_moments, np.concatenate([lo, hi], axis=1), mf @ self.sp_color)

    def superpixel_stats(self, ids: np.ndarray) -> ChunkStats:
        s = self.scene
        return ChunkStats(s.sp_area[ids].astype(np.float64), self.sp_class_mass[ids],
                          s.sp_moments[ids], s.sp_bbox[ids], self.sp_color[ids])

    def quality(self, st: ChunkStats) -> np.ndarray:
        a = st.area
        safe = np.where(a > 0, a, 1.0)
        hist = st.class_mass / safe[:, None]
        m = st.moments
        mu20 = m[:, 3] - m[:, 1] ** 2 / safe
        mu02 = m[:, 4] - m[:, 2] ** 2 / safe
        mu11 = m[:, 5] - m[:, 1] * m[:, 2] / safe
        norm = safe ** 2
        frac = a / self.n_pixels
        return np.column_stack([hist, mu20 / norm, mu02 / norm, mu11 / norm, frac, np.sqrt(frac)])

    # list predictor

    def phi_batch(self, cand_member: np.ndarray, cand_quality: np.ndarray,
                  list_member: np.ndarray) -> np.ndarray:
        """List features for every candidate row against the current list."""
        n_c = cand_member.shape[0]
        n_l = list_member.shape[0]
        sim = np.zeros((n_c, 2 + len(RELATIONS) + 1))
        sim[:, -1] = n_l
        if n_l:
            area = self.scene.sp_area.astype(np.float64)
            cm = cand_member.astype(np.float64)
            lm = list_member.astype(np.float64)
            inter = cm @ (lm * area).T
            ca = cm @ area
            la = lm @ area
            ious = inter / (ca[:, None] + la[None, :] - inter)
            sim[:, 0] = ious.max(axis=1)
            sim[:, 1] = ious.mean(axis=1)
            sim[:, 2:2 + len(RELATIONS)] = self._relations(cand_member, list_member, inter > 0)
        return np.hstack([cand_quality, sim])

    def _relations(self, cand_member, list_member, overlap) -> np.ndarray:
        cst = self.stats(cand_member)
        lst = self.stats(list_member)
        cc = cst.moments[:, 1:3] / cst.area[:, None]
        lc = lst.moments[:, 1:3] / lst.area[:, None]
        d = cc[:, None, :] - lc[None, :, :]
        vertical = np.abs(d[..., 0]) >= np.abs(d[..., 1])
        direction = np.where(vertical, np.where(d[..., 0] < 0, 0, 1), np.where(d[..., 1] < 0, 2, 3))
        cb, lb = cst.bbox[:, None, :], lst.bbox[None, :, :]
        gap_r = np.maximum(0, np.maximum(lb[..., 0] - cb[..., 2], cb[..., 0] - lb[..., 2]) - 1)
        gap_c = np.maximum(0, np.maximum(lb[..., 1] - cb[..., 3], cb[..., 1] - lb[..., 3]) - 1)
        near = np.hypot(gap_r, gap_c) <= NEAR_FRACTION * self.diag
        rows = np.zeros(overlap.shape + (len(RELATIONS),))
        ii, jj = np.indices(overlap.shape)
        rows[ii, jj, direction] = 0.5
        rows[ii, jj, np.where(near, 5, 6)] += 0.5
        rows[overlap] = np.eye(len(RELATIONS))[4]
        return rows.mean(axis=1)

    # grower

    def theta_batch(self, chunk_member: np.ndarray, candidates: np.ndarray,
                    chunk_stats: ChunkStats | None = None) -> np.ndarray:
        """Grower features for adding each of ``candidates`` to one chunk."""
        sp = self.superpixel_stats(candidates)
        n = candidates.size
        empty = not chunk_member.any()
        if empty:
            grown = sp
            color_sim = np.ones(n)
        else:
            cs = chunk_stats if chunk_stats is not None else self.stats(chunk_member[None, :])
            rep = ChunkStats(np.repeat(cs.area, n), np.repeat(cs.class_mass, n, axis=0),
                             np.repeat(cs.moments, n, axis=0), np.repeat(cs.bbox, n, axis=0),
                             np.repeat(cs.color, n, axis=0))
            grown = rep + sp
            hc = cs.color / cs.color.sum()
            hs = sp.color / sp.color.sum(axis=1, keepdims=True)
            color_sim = np.minimum(hs, hc).sum(axis=1)
        box = grown.bbox
        box_area = (box[:, 2] - box[:, 0] + 1) * (box[:, 3] - box[:, 1] + 1)
        fill = grown.area / box_area
        sp_scores = sp.class_mass / sp.area[:, None]
        return np.column_stack([self.quality(grown), color_sim, fill, sp_scores, sp.area / self.n_pixels])


def phi(c: Chunk, L: Sequence[Chunk], scene: Scene, channel, ctx: SceneFeatures | None = None) -> np.ndarray:
    """List features of chunk ``c`` given the chunks already in the list."""
    ctx = ctx or SceneFeatures(scene, channel)
    cm = ctx.membership([c])
    q = ctx.quality(ctx.stats(cm))
    return ctx.phi_batch(cm, q, ctx.membership(list(L)))[0]


def theta(s: int, c: Chunk, scene: Scene, channel, ctx: SceneFeatures | None = None) -> np.ndarray:
    """Grower features for adding superpixel ``s`` to chunk ``c``."""
    if s in c:
        raise SceneError(f"superpixel {s} already in chunk")
    ctx = ctx or SceneFeatures(scene, channel)
    member = ctx.membership([c])[0]
    return ctx.theta_batch(member, np.array([s]))[0]
