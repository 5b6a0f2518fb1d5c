"""Chunk candidate generation by growing superpixel chains.

``grow_single`` sorts all superpixels once by a predicted fill fraction and
emits the chain of prefix unions; with the exact fill fraction the chain
contains the best achievable chunk for the instance.  ``grow_multi`` grows
from seed superpixels and re-scores the remaining superpixels after every
addition, since the predictor may depend on the current chunk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .scene import Chunk, GroundTruthInstance, Scene, SceneError, iou

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_SUPERPIXELS = 16
DEFAULT_MAX_CHUNK_SIZE = 40


class GrowerPredictor:
    """Estimates the fill fraction of superpixels for the grower.

    ``alpha_hat`` scores every superpixel without chunk context (one call per
    single-instance run); ``score`` scores ``candidates`` given the chunk
    grown so far.
    """

    mode = "abstract"

    def alpha_hat(self, scene: Scene, g: GroundTruthInstance) -> np.ndarray:
        raise NotImplementedError

    def score(self, scene: Scene, chunk: Chunk, candidates: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _alpha(scene: Scene, j: int) -> np.ndarray:
    # float division is correctly rounded, so distinct rationals with
    # denominators this small map to distinct floats in the same order
    return scene.sp_inter[:, j] / scene.sp_area


class OraclePredictor(GrowerPredictor):
    """Exact fill fraction.

    With ``instance_id`` fixed, ``score`` ignores the chunk.  Without it the
    target is the instance overlapping the current chunk most (smallest id
    on ties); a chunk touching no instance scores everything zero.
    """

    mode = "oracle"

    def __init__(self, instance_id: int | None = None):
        self.instance_id = instance_id

    def alpha_hat(self, scene, g):
        return _alpha(scene, g.id)

    def target(self, chunk: Chunk) -> int | None:
        if self.instance_id is not None:
            return self.instance_id
        inter = chunk.per_instance_intersection
        if not inter or max(inter) == 0:
            return None
        return int(np.argmax(inter))

    def score(self, scene, chunk, candidates):
        j = self.target(chunk)
        if j is None:
            return np.zeros(len(candidates))
        return _alpha(scene, j)[candidates]


class PerturbedOraclePredictor(GrowerPredictor):
    """Exact fill fraction plus uniform noise in ``[-eps, eps]``, clamped to [0, 1].

    Each ``alpha_hat`` call is one run and draws fresh noise for every
    superpixel.  ``score`` keeps one noise draw per superpixel until
    :meth:`reset`.
    """

    mode = "perturbed"

    def __init__(self, eps: float, seed: int = 0, instance_id: int | None = None):
        if not 0 <= eps < 1:
            raise ValueError(f"eps must lie in [0, 1), got {eps}")
        self.eps = eps
        self.rng = np.random.default_rng(seed)
        self.oracle = OraclePredictor(instance_id)
        self._noise: np.ndarray | None = None
        self.last_noise: np.ndarray | None = None

    def _draw(self, n: int) -> np.ndarray:
        self.last_noise = self.rng.uniform(-self.eps, self.eps, size=n)
        return self.last_noise

    def alpha_hat(self, scene, g):
        return np.clip(_alpha(scene, g.id) + self._draw(scene.n_superpixels), 0.0, 1.0)

    def reset(self):
        self._noise = None

    def score(self, scene, chunk, candidates):
        if self._noise is None or self._noise.size != scene.n_superpixels:
            self._noise = self._draw(scene.n_superpixels)
        j = self.oracle.target(chunk)
        base = np.zeros(scene.n_superpixels) if j is None else _alpha(scene, j)
        return np.clip(base + self._noise, 0.0, 1.0)[candidates]


@dataclass
class GrowthChain:
    """Prefix chain of a grower run.

    Chunks are materialized on demand because a full single-instance chain
    holds n chunks of up to n superpixels each.  When grown against a known
    instance, ``inter`` and ``union`` hold the exact prefix pixel counts.
    """

    scene: Scene
    steps: np.ndarray
    per_step_score: np.ndarray
    seed: int | None = None
    instance_id: int | None = None
    inter: np.ndarray | None = None
    union: np.ndarray | None = None
    _chunks: list[Chunk] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.steps.size) + (self.seed is not None)

    def members(self, i: int) -> list[int]:
        """Superpixel ids of the ``i``-th prefix chunk (0-based)."""
        if self.seed is None:
            return self.steps[:i + 1].tolist()
        return [self.seed] + self.steps[:i].tolist()

    def chunk(self, i: int) -> Chunk:
        if self._chunks is not None:
            return self._chunks[i]
        return self.scene.chunk(self.members(i))

    @property
    def chunks(self) -> list[Chunk]:
        if self._chunks is None:
            self._chunks = [self.chunk(i) for i in range(len(self))]
        return self._chunks


def grow_single(scene: Scene, g: GroundTruthInstance, predictor: GrowerPredictor) -> GrowthChain:
    """Sort superpixels by decreasing predicted fill and emit every prefix."""
    scores = np.asarray(predictor.alpha_hat(scene, g), dtype=np.float64)
    ids = np.arange(scene.n_superpixels)
    order = np.lexsort((ids, -scores))
    inter = np.cumsum(scene.sp_inter[order, g.id])
    area = np.cumsum(scene.sp_area[order])
    union = g.area + area - inter
    return GrowthChain(scene, order, scores[order], instance_id=g.id, inter=inter, union=union)


def chain_ious(chain: GrowthChain, g: GroundTruthInstance) -> list[Fraction]:
    if chain.instance_id == g.id and chain.inter is not None:
        return [Fraction(int(a), int(b)) for a, b in zip(chain.inter, chain.union)]
    return [iou(c, g) for c in chain.chunks]


def best_in_chain(chain: GrowthChain, g: GroundTruthInstance) -> tuple[Chunk, Fraction]:
    """Best prefix chunk by IoU; the earliest (smallest) prefix wins ties."""
    if len(chain) == 0:
        raise ValueError("empty chain")
    if chain.instance_id == g.id and chain.inter is not None:
        best_i, bn, bd = 0, int(chain.inter[0]), int(chain.union[0])
        for i, (a, b) in enumerate(zip(chain.inter.tolist(), chain.union.tolist())):
            if a * bd > bn * b:
                best_i, bn, bd = i, a, b
        return chain.chunk(best_i), Fraction(bn, bd)
    values = chain_ious(chain, g)
    best_i = max(range(len(values)), key=lambda i: (values[i], -i))
    return chain.chunk(best_i), values[best_i]


def best_chunk_bruteforce(scene: Scene, g: GroundTruthInstance) -> tuple[Chunk, Fraction]:
    """Maximum IoU over all 2^n superpixel subsets (n <= 16)."""
    n = scene.n_superpixels
    if n > BRUTE_FORCE_MAX_SUPERPIXELS:
        raise ValueError(f"subset enumeration capped at {BRUTE_FORCE_MAX_SUPERPIXELS} superpixels, got {n}")
    dx = scene.sp_inter[:, g.id].astype(np.int64)
    area = scene.sp_area.astype(np.int64)
    bits = (np.arange(1, 1 << n, dtype=np.int64)[:, None] >> np.arange(n)) & 1
    inter = bits @ dx
    union = g.area + bits @ area - inter
    # float argmax locates a candidate; the exact cross-multiplied check fixes it
    i = int(np.argmax(inter / union))
    bn, bd = int(inter[i]), int(union[i])
    better = inter * bd > bn * union
    while better.any():
        cand = np.flatnonzero(better)
        j = cand[np.argmax(inter[cand] / union[cand])]
        i, bn, bd = int(j), int(inter[j]), int(union[j])
        better = inter * bd > bn * union
    ids = np.flatnonzero(bits[i])
    return scene.chunk(ids.tolist()), Fraction(bn, bd)


@dataclass
class Theorem3Report:
    eps: Fraction
    r_star: Fraction
    best: list[Fraction]
    noise: list[np.ndarray]

    @property
    def floor(self) -> Fraction:
        return self.r_star - 2 * self.eps

    @property
    def violations(self) -> list[int]:
        return [t for t, b in enumerate(self.best) if b < self.floor]

    @property
    def min_slack(self) -> Fraction:
        return min(b - self.floor for b in self.best)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_theorem3(scene: Scene, g: GroundTruthInstance, eps, trials: int, seed: int = 0,
                    r_star: Fraction | None = None) -> Theorem3Report:
    """Grow with a perturbed oracle and check best IoU >= R(c*) - 2 eps.

    ``eps`` is converted to an exact Fraction via its decimal string, so the
    asserted floor is exact.  Noise vectors are kept for failure dumps.
    """
    eps_q = Fraction(str(eps))
    if r_star is None:
        r_star = best_chunk_bruteforce(scene, g)[1]
    pred = PerturbedOraclePredictor(float(eps), seed=seed)
    best, noise = [], []
    for _ in range(trials):
        chain = grow_single(scene, g, pred)
        best.append(best_in_chain(chain, g)[1])
        noise.append(pred.last_noise.copy())
    report = Theorem3Report(eps_q, r_star, best, noise)
    if not report.ok:
        log.error("perturbation bound violated: eps=%s R*=%s trials=%s", eps, r_star, report.violations)
    return report


@dataclass
class CorollaryReport:
    eta: float
    delta_hat: float
    n_samples: int
    violations: int

    @property
    def rate(self) -> float:
        return self.violations / self.n_samples if self.n_samples else 0.0

    @property
    def ok(self) -> bool:
        return self.rate <= self.eta


def verify_corollary(scenes: Sequence[Scene], predictor: GrowerPredictor, eta: float,
                     r_stars: dict | None = None) -> CorollaryReport:
    """Violation rate of the ``R(c*) - 2 sqrt(n delta) / eta`` floor.

    One grower run per (scene, instance).  ``delta`` is the empirical mean
    squared fill-fraction error of the predictor over every superpixel of
    those runs.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    runs = []
    sq_err, count = 0.0, 0
    for si, scene in enumerate(scenes):
        for g in scene.instances:
            a_hat = np.asarray(predictor.alpha_hat(scene, g), dtype=np.float64)
            err = a_hat - _alpha(scene, g.id)
            sq_err += float(err @ err)
            count += err.size
            chain = _chain_from_scores(scene, g, a_hat)
            r_star = r_stars[(si, g.id)] if r_stars else best_chunk_bruteforce(scene, g)[1]
            runs.append((scene.n_superpixels, best_in_chain(chain, g)[1], r_star))
    delta = sq_err / count if count else 0.0
    violations = sum(float(best) < float(r_star) - 2.0 * math.sqrt(n * delta) / eta
                     for n, best, r_star in runs)
    return CorollaryReport(eta, delta, len(runs), violations)


class _FixedScores(GrowerPredictor):
    def __init__(self, scores):
        self.scores = scores

    def alpha_hat(self, scene, g):
        return self.scores


def _chain_from_scores(scene, g, scores) -> GrowthChain:
    return grow_single(scene, g, _FixedScores(scores))


def grow_from_seed(scene: Scene, predictor: GrowerPredictor, seed: int,
                   max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE) -> GrowthChain:
    """Grow from ``seed`` by repeatedly adding the best-scoring superpixel.

    Every remaining superpixel is re-scored after each addition; the
    smallest id wins ties.  The chain holds the seed singleton and every
    larger prefix up to ``max_chunk_size`` superpixels.
    """
    if not 0 <= seed < scene.n_superpixels:
        raise SceneError(f"seed {seed} out of range [0, {scene.n_superpixels})")
    if hasattr(predictor, "reset"):
        predictor.reset()
    remaining = np.ones(scene.n_superpixels, dtype=bool)
    remaining[seed] = False
    chunk = scene.chunk([seed])
    chunks = [chunk]
    steps, scores = [], []
    limit = min(max_chunk_size, scene.n_superpixels)
    while len(chunk) < limit:
        cand = np.flatnonzero(remaining)
        s = predictor.score(scene, chunk, cand)
        k = int(np.argmax(s))
        sp = int(cand[k])
        chunk = chunk.add(scene.superpixel(sp))
        remaining[sp] = False
        steps.append(sp)
        scores.append(float(s[k]))
        chunks.append(chunk)
    return GrowthChain(scene, np.asarray(steps, dtype=np.int64), np.asarray(scores),
                       seed=seed, _chunks=chunks)


def grow_multi_chains(scene: Scene, predictor: GrowerPredictor, seeds: Iterable[int],
                      max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE) -> list[GrowthChain]:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    return [grow_from_seed(scene, predictor, s, max_chunk_size) for s in seeds]


def dedupe_chains(chains: Sequence[GrowthChain]) -> list[tuple[Chunk, int | None]]:
    """Unique chunks in first-seen order, each tagged with its seed."""
    seen, out = set(), []
    for chain in chains:
        for c in chain.chunks:
            if c.key not in seen:
                seen.add(c.key)
                out.append((c, chain.seed))
    return out


def grow_multi(scene: Scene, predictor: GrowerPredictor, seeds: Iterable[int],
               max_chunk_size: int = DEFAULT_MAX_CHUNK_SIZE) -> list[Chunk]:
    """Union of seeded growth chains, deduplicated by superpixel set."""
    return [c for c, _ in dedupe_chains(grow_multi_chains(scene, predictor, seeds, max_chunk_size))]


def seed_grid(scene: Scene, interval: int) -> list[int]:
    """Superpixels under a regular pixel lattice with spacing ``interval``.

    The lattice is offset by half an interval from the top-left corner
    (clamped to the last row or column of small images); duplicate
    superpixels are dropped keeping lattice (row-major) order.
    """
    if interval < 1:
        raise ValueError("seed interval must be positive")
    off = interval // 2
    seeds, seen = [], set()
    for r in range(min(off, scene.height - 1), scene.height, interval):
        for c in range(min(off, scene.width - 1), scene.width, interval):
            s = int(scene.labels[r, c])
            if s not in seen:
                seen.add(s)
                seeds.append(s)
    return seeds


def dumps_candidates(scene_id: str, items: Sequence[tuple[Chunk, int | None]]) -> str:
    lines = []
    for c, seed in items:
        tag = "-" if seed is None else str(seed)
        lines.append(f"chunk {scene_id} {tag} " + " ".join(map(str, c.superpixel_ids)))
    return "\n".join(lines) + ("\n" if lines else "")


def loads_candidates(text: str, scene: Scene) -> list[tuple[Chunk, int | None]]:
    out = []
    for ln in text.splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] != "chunk":
            raise ValueError(f"bad candidate line: {ln!r}")
        seed = None if parts[2] == "-" else int(parts[2])
        out.append((scene.chunk(map(int, parts[3:])), seed))
    return out
