"""Regression forests trained to imitate the two ground-truth oracles.

The grower predictor regresses the fill fraction of a superpixel for the
instance being grown; the list predictor regresses the greedy marginal of a
candidate given the list built so far.  Both are plain behavior cloning of
oracle rollouts.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .assignment import ListEntry, PredictionList
from .features import SceneFeatures, phi_columns, theta_columns
from .grower import DEFAULT_MAX_CHUNK_SIZE, GrowerPredictor, seed_grid
from .scene import Chunk, Scene, iou

FOREST_FORMAT = "vischunk-forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_depth: int = 12
    min_samples_leaf: int = 5
    #: features tried per split; "sqrt" or a fraction of the feature count
    max_features: str | float = "sqrt"
    bootstrap: bool = True
    bootstrap_fraction: float = 1.0
    #: candidate thresholds per feature; exact midpoints below this many values
    max_bins: int = 64
    seed: int = 0

    def n_try(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(round(math.sqrt(d))))
        return max(1, min(d, int(round(float(self.max_features) * d))))


@dataclass
class RegressionTree:
    """Array-backed binary tree; ``feature[i] < 0`` marks a leaf.

    A sample goes left at node ``i`` when ``x[feature[i]] <= threshold[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return self.value[node]
            x = X[rows, np.where(active, f, 0)]
            nxt = np.where(x <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(active, nxt, node)

    def preorder(self) -> list[int]:
        out, stack = [], [0]
        while stack:
            i = stack.pop()
            out.append(i)
            if self.feature[i] >= 0:
                stack.append(self.right[i])
                stack.append(self.left[i])
        return out


class RegressionForest:
    """Bagged regression trees; prediction is the mean over trees."""

    def __init__(self, trees: Sequence[RegressionTree], n_features: int):
        self.trees = list(trees)
        self.n_features = n_features
        self._pack()

    def _pack(self):
        # Children are stored adjacently (right = left + 1).  Leaves loop onto
        # themselves with an infinite threshold, so every sample can take
        # exactly max-depth steps without tracking which ones are done.
        off = np.cumsum([0] + [t.n_nodes for t in self.trees])
        self._roots = off[:-1].astype(np.intp)
        leaf = np.concatenate([t.feature < 0 for t in self.trees])
        idx = np.arange(leaf.size)
        self._feature = np.where(leaf, 0, np.concatenate([t.feature for t in self.trees])).astype(np.intp)
        self._threshold = np.where(leaf, np.inf, np.concatenate([t.threshold for t in self.trees]))
        self._left = np.where(leaf, idx, np.concatenate([t.left + o for t, o in zip(self.trees, off)])).astype(np.intp)
        self._value = np.concatenate([t.value for t in self.trees])
        self._depth = max((t.depth for t in self.trees), default=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"forest expects {self.n_features} features, got {X.shape[1]}")
        n = X.shape[0]
        flat = X.ravel()
        base = (np.arange(n, dtype=np.intp) * self.n_features)[:, None]
        node = np.broadcast_to(self._roots, (n, len(self.trees))).copy()
        for _ in range(self._depth):
            x = flat[base + self._feature[node]]
            node = self._left[node] + (x > self._threshold[node])
        return self._value[node].sum(axis=1) / len(self.trees)

    def dumps(self) -> str:
        lines = [f"{FOREST_FORMAT} {FOREST_VERSION}", f"n_features {self.n_features} n_trees {len(self.trees)}"]
        for t in self.trees:
            lines.append(f"tree {t.n_nodes}")
            for i in t.preorder():
                if t.feature[i] >= 0:
                    lines.append(f"split {int(t.feature[i])} {float(t.threshold[i]).hex()}")
                else:
                    lines.append(f"leaf {float(t.value[i]).hex()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RegressionForest":
        lines = iter(text.splitlines())
        head = next(lines).split()
        if head[0] != FOREST_FORMAT or int(head[1]) != FOREST_VERSION:
            raise ValueError(f"unsupported forest header {head}")
        meta = next(lines).split()
        d, n_trees = int(meta[1]), int(meta[3])
        trees = []
        for _ in range(n_trees):
            n_nodes = int(next(lines).split()[1])
            nodes = [next(lines).split() for _ in range(n_nodes)]
            trees.append(_tree_from_preorder(nodes))
        return cls(trees, d)


def _tree_from_preorder(nodes: list[list[str]]) -> RegressionTree:
    """Rebuild a tree from its preorder dump, siblings stored adjacently."""
    pos = 0

    def parse():
        nonlocal pos
        tok = nodes[pos]
        pos += 1
        if tok[0] == "leaf":
            return float.fromhex(tok[1])
        f, t = int(tok[1]), float.fromhex(tok[2])
        return (f, t, parse(), parse())

    root = parse()
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    stack = [(0, root)]
    while stack:
        i, nd = stack.pop()
        if not isinstance(nd, tuple):
            value[i] = nd
            continue
        feature[i], threshold[i] = nd[0], nd[1]
        li = len(feature)
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst += [v, v]
        left[i], right[i] = li, li + 1
        stack.append((li + 1, nd[3]))
        stack.append((li, nd[2]))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value))


def _candidate_thresholds(x: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= max_bins + 1:
        return (u[:-1] + u[1:]) / 2.0
    q = np.unique(np.quantile(u, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower"))
    nxt = u[np.searchsorted(u, q, side="right").clip(max=u.size - 1)]
    return np.unique((q + nxt) / 2.0)


def _fit_tree(Xb: np.ndarray, thresholds: list[np.ndarray], y: np.ndarray, idx: np.ndarray,
              cfg: ForestConfig, rng: np.random.Generator) -> RegressionTree:
    d = Xb.shape[1]
    n_try = cfg.n_try(d)
    feature, threshold, left, right, value = [], [], [], [], []
    min_leaf = cfg.min_samples_leaf

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, idx, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        value[node] = float(yr.mean())
        if depth >= cfg.max_depth or rows.size < 2 * min_leaf or yr.max() == yr.min():
            continue
        total, total_sq, cnt = yr.sum(), (yr * yr).sum(), rows.size
        parent_sse = total_sq - total * total / cnt
        best = (0.0, -1, -1)
        for f in np.sort(rng.choice(d, size=n_try, replace=False)):
            nb = thresholds[f].size
            if nb == 0:
                continue
            b = Xb[rows, f]
            c = np.cumsum(np.bincount(b, minlength=nb + 1))[:nb]
            s = np.cumsum(np.bincount(b, weights=yr, minlength=nb + 1))[:nb]
            sq = np.cumsum(np.bincount(b, weights=yr * yr, minlength=nb + 1))[:nb]
            cr = cnt - c
            ok = (c >= min_leaf) & (cr >= min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                sse = (sq - s * s / c) + ((total_sq - sq) - (total - s) ** 2 / cr)
            gain = np.where(ok, parent_sse - sse, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > best[0] * (1 + 1e-12) and gain[j] > 1e-12 * max(parent_sse, 1e-300):
                best = (float(gain[j]), int(f), j)
        _, f, j = best
        if f < 0:
            continue
        go_left = Xb[rows, f] <= j
        feature[node] = f
        threshold[node] = float(thresholds[f][j])
        li, ri = new_node(), new_node()
        left[node], right[node] = li, ri
        stack.append((ri, rows[~go_left], depth + 1))
        stack.append((li, rows[go_left], depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value))


@dataclass
class ImitationDataset:
    X: np.ndarray
    y: np.ndarray
    scene_ids: list[str] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    columns: list[str] | None = None

    def __len__(self) -> int:
        return self.y.size

    @classmethod
    def concat(cls, parts: Sequence["ImitationDataset"]) -> "ImitationDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.empty((0, 0)), np.empty(0))
        return cls(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   [s for p in parts for s in p.scene_ids], [s for p in parts for s in p.steps],
                   parts[0].columns)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns or [f"x{i}" for i in range(self.X.shape[1])]
        w.writerow(["scene", "step"] + list(cols) + ["target"])
        for sid, st, x, t in zip(self.scene_ids, self.steps, self.X, self.y):
            w.writerow([sid, st] + [repr(float(v)) for v in x] + [repr(float(t))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ImitationDataset":
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        X = np.array([[float(v) for v in r[2:-1]] for r in body]).reshape(len(body), len(head) - 3)
        y = np.array([float(r[-1]) for r in body])
        return cls(X, y, [r[0] for r in body], [int(r[1]) for r in body], head[2:-1])


def fit_forest(data: ImitationDataset, config: ForestConfig = ForestConfig()) -> RegressionForest:
    """Fit a bagged forest; deterministic for a given dataset and ``config.seed``.

    Splits maximize variance reduction over per-feature candidate thresholds
    (midpoints between distinct values, or between quantiles when a feature
    has more than ``max_bins`` distinct values).  Ties keep the lowest
    feature index, then the lowest threshold.
    """
    if len(data) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    X = np.asarray(data.X, dtype=np.float64)
    y = np.clip(np.asarray(data.y, dtype=np.float64), 0.0, 1.0)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("feature matrix and targets disagree in length")
    d = X.shape[1]
    thresholds = [_candidate_thresholds(X[:, f], config.max_bins) for f in range(d)]
    Xb = np.column_stack([np.searchsorted(thresholds[f], X[:, f], side="left") for f in range(d)])
    n = y.size
    n_boot = max(1, int(round(config.bootstrap_fraction * n)))
    children = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for ss in children:
        rng = np.random.default_rng(ss)
        idx = np.sort(rng.integers(0, n, size=n_boot)) if config.bootstrap else np.arange(n)
        trees.append(_fit_tree(Xb, thresholds, y, idx, config, rng))
    return RegressionForest(trees, d)


# grower imitation

class ForestGrowerPredictor(GrowerPredictor):
    """Learned fill-fraction estimate from grower features."""

    mode = "learned"

    def __init__(self, forest: RegressionForest, ctx: SceneFeatures):
        self.forest = forest
        self.ctx = ctx

    def alpha_hat(self, scene, g):
        member = np.zeros(scene.n_superpixels, dtype=bool)
        return self.forest.predict(self.ctx.theta_batch(member, np.arange(scene.n_superpixels)))

    def score(self, scene, chunk, candidates):
        member = np.zeros(scene.n_superpixels, dtype=bool)
        member[list(chunk.superpixel_ids)] = True
        return self.forest.predict(self.ctx.theta_batch(member, np.asarray(candidates)))


def rollout_seeds(scene: Scene, j: int, interval: int) -> list[int]:
    """Lattice seeds at least half inside instance ``j``; else its fullest superpixel."""
    alpha = scene.sp_inter[:, j] / scene.sp_area
    seeds = [s for s in seed_grid(scene, interval) if 2 * scene.sp_inter[s, j] >= scene.sp_area[s]]
    return seeds or [int(np.argmax(alpha))]


def collect_grower_data(scenes: Sequence[tuple[str, Scene, object]], seed_interval: int,
                        max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE, max_rows_per_step: int | None = None,
                        seed: int = 0) -> ImitationDataset:
    """Rows ``(theta(s, c), |s ∩ g| / |s|)`` along oracle-driven growth rollouts.

    For each instance and each of its rollout seeds the oracle adds the
    fullest remaining superpixel (smallest id on ties) until the chunk has
    ``max_chunk_size`` superpixels or no remaining superpixel touches the
    instance.  Every remaining superpixel yields a row at every step unless
    ``max_rows_per_step`` is set; then all superpixels overlapping the
    instance are kept first and the rest of the quota is sampled.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for scene_id, scene, channel in scenes:
        ctx = SceneFeatures(scene, channel)
        for g in scene.instances:
            alpha = scene.sp_inter[:, g.id] / scene.sp_area
            for s0 in rollout_seeds(scene, g.id, seed_interval):
                member = np.zeros(scene.n_superpixels, dtype=bool)
                member[s0] = True
                step = 0
                xs, ys = [], []
                while member.sum() < max_chunk_size:
                    remaining = np.flatnonzero(~member)
                    if remaining.size == 0 or alpha[remaining].max() == 0:
                        break
                    rows = remaining
                    if max_rows_per_step is not None and remaining.size > max_rows_per_step:
                        pos = remaining[alpha[remaining] > 0][:max_rows_per_step]
                        rest = np.setdiff1d(remaining, pos)
                        extra = rng.choice(rest, size=max_rows_per_step - pos.size, replace=False)
                        rows = np.sort(np.concatenate([pos, extra]))
                    xs.append(ctx.theta_batch(member, rows))
                    ys.append(alpha[rows])
                    pick = int(remaining[np.argmax(alpha[remaining])])
                    member[pick] = True
                    step += 1
                if xs:
                    X = np.vstack(xs)
                    steps = [i for i, x in enumerate(xs) for _ in range(x.shape[0])]
                    parts.append(ImitationDataset(X, np.concatenate(ys), [scene_id] * len(steps), steps,
                                                  theta_columns(ctx.n_classes)))
    return ImitationDataset.concat(parts)


# list imitation

class ListScorer:
    """Scores the remaining candidates given the list chosen so far."""

    def scores(self, state: "ListState", remaining: np.ndarray) -> Sequence:
        raise NotImplementedError


@dataclass
class ListState:
    scene: Scene
    channel: object
    candidates: list[Chunk]
    chosen: list[int]
    ctx: SceneFeatures
    member: np.ndarray
    quality: np.ndarray

    @classmethod
    def start(cls, scene, channel, candidates, ctx=None):
        ctx = ctx or SceneFeatures(scene, channel)
        member = ctx.membership(candidates)
        quality = ctx.quality(ctx.stats(member)) if len(candidates) else np.empty((0, 0))
        return cls(scene, channel, list(candidates), [], ctx, member, quality)

    def features(self, rows: np.ndarray) -> np.ndarray:
        return self.ctx.phi_batch(self.member[rows], self.quality[rows], self.member[self.chosen])


class ForestListScorer(ListScorer):
    def __init__(self, forest: RegressionForest):
        self.forest = forest

    def scores(self, state, remaining):
        X = state.features(remaining)
        if X.shape[1] != self.forest.n_features:
            raise ValueError(f"list forest expects {self.forest.n_features} features, got {X.shape[1]}")
        return self.forest.predict(X)


class GreedyOracleScorer(ListScorer):
    """True greedy marginals, replaying the ground-truth pairing of the chosen list."""

    def scores(self, state, remaining):
        G = state.scene.instances
        left = list(range(len(G)))
        for i in state.chosen:
            if not left:
                break
            c = state.candidates[i]
            j = max(left, key=lambda j: (iou(c, G[j]), -j))
            left.remove(j)
        out = []
        for i in remaining:
            c = state.candidates[i]
            out.append(max((iou(c, G[j]) for j in left), default=Fraction(0)))
        return out


def predict_list(scene: Scene, channel, candidates: Sequence[Chunk], scorer: ListScorer | RegressionForest,
                 k: int, ctx: SceneFeatures | None = None) -> PredictionList:
    """Greedy list prediction without ground truth.

    Each round scores every remaining candidate against the current list and
    appends the best one (earliest candidate on ties).
    """
    if isinstance(scorer, RegressionForest):
        scorer = ForestListScorer(scorer)
    state = ListState.start(scene, channel, candidates, ctx)
    out = PredictionList()
    taken = np.zeros(len(candidates), dtype=bool)
    for _ in range(min(k, len(candidates))):
        remaining = np.flatnonzero(~taken)
        s = scorer.scores(state, remaining)
        best = 0
        for pos in range(1, len(s)):
            if s[pos] > s[best]:
                best = pos
        i = int(remaining[best])
        taken[i] = True
        state.chosen.append(i)
        out.entries.append(ListEntry(i, candidates[i], None, s[best]))
    return out


def collect_list_data(scenes: Sequence[tuple[str, Scene, object, Sequence[Chunk]]], k: int,
                      max_rows_per_round: int | None = None, seed: int = 0) -> ImitationDataset:
    """Rows ``(phi(c, L), y(c; G_re))`` along the ground-truth greedy rollout.

    With ``max_rows_per_round`` set, each round keeps the greedy pick plus a
    uniform sample of the other remaining candidates.
    """
    rng = np.random.default_rng(seed)
    oracle = GreedyOracleScorer()
    parts = []
    for scene_id, scene, channel, candidates in scenes:
        if not candidates:
            continue
        state = ListState.start(scene, channel, candidates)
        taken = np.zeros(len(candidates), dtype=bool)
        xs, ys, steps = [], [], []
        for r in range(min(k, len(candidates))):
            remaining = np.flatnonzero(~taken)
            y = oracle.scores(state, remaining)
            best = max(range(len(y)), key=lambda p: (y[p], -p))
            rows = np.arange(remaining.size)
            if max_rows_per_round is not None and remaining.size > max_rows_per_round:
                others = np.delete(rows, best)
                rows = np.sort(np.concatenate([[best], rng.choice(others, max_rows_per_round - 1, replace=False)]))
            xs.append(state.features(remaining[rows]))
            ys.append(np.array([float(y[p]) for p in rows]))
            steps += [r] * rows.size
            i = int(remaining[best])
            taken[i] = True
            state.chosen.append(i)
        parts.append(ImitationDataset(np.vstack(xs), np.concatenate(ys), [scene_id] * len(steps), steps,
                                      phi_columns(state.ctx.n_classes)))
    return ImitationDataset.concat(parts)


def save_forest(forest: RegressionForest, path: str | Path) -> None:
    Path(path).write_text(forest.dumps())


def load_forest(path: str | Path) -> RegressionForest:
    return RegressionForest.loads(Path(path).read_text())
