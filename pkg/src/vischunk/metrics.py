"""List and candidate-pool quality measures, all exact rationals."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations
from typing import Sequence

from .assignment import f_of_list, hungarian
from .grower import best_chunk_bruteforce
from .scene import Chunk, GroundTruthInstance, Scene, iou


def abo(candidates: Sequence[Chunk], G: Sequence[GroundTruthInstance]) -> Fraction:
    """Average best overlap: mean over instances of the best candidate IoU."""
    if not G:
        raise ValueError("average best overlap needs at least one instance")
    if not candidates:
        return Fraction(0)
    return sum((max(iou(c, g) for c in candidates) for g in G), Fraction(0)) / len(G)


def slot_scores(L: Sequence[Chunk], G: Sequence[GroundTruthInstance], k: int) -> list[Fraction]:
    """``f(L[0:i])`` for i = 1..k, repeating the last value past the list end.

    An empty list scores zero at every slot.
    """
    out = [f_of_list(L[:i], G) for i in range(1, min(k, len(L)) + 1)]
    fill = out[-1] if out else Fraction(0)
    return out + [fill] * (k - len(out))


def instance_accuracy(L: Sequence[Chunk], G: Sequence[GroundTruthInstance]) -> Fraction:
    """Matched IoU per slot: ``f(L) / max(|L|, |G|)``."""
    if not L:
        return Fraction(0)
    return f_of_list(L, G) / max(len(L), len(G))


def pool_ceiling(candidates: Sequence[Chunk], G: Sequence[GroundTruthInstance], k: int) -> list[Fraction]:
    """Best ``f(L)`` over lists of i candidates from the pool, for i = 1..k.

    Each instance only ever needs one of its ``i`` best candidates (any
    other choice can be swapped for an unused one), so the pool is reduced
    to those before solving exactly: an assignment over every size-i subset
    of instances.
    """
    if not candidates or not G:
        return [Fraction(0)] * k
    m = len(G)
    ious = [[iou(c, g) for g in G] for c in candidates]
    out = []
    for i in range(1, k + 1):
        t = min(i, m)
        keep = set()
        for j in range(m):
            order = sorted(range(len(candidates)), key=lambda r: (-ious[r][j], r))
            keep.update(order[:t])
        rows = sorted(keep)
        best = Fraction(0)
        for subset in combinations(range(m), t):
            w = [[ious[r][j] for j in subset] for r in rows]
            best = max(best, hungarian(w)[1])
        out.append(best)
    return out


def exact_ceiling(scene: Scene, k: int) -> list[Fraction]:
    """Best ``f(L)`` over lists of i arbitrary chunks: top-i best-chunk IoUs summed."""
    best = sorted((best_chunk_bruteforce(scene, g)[1] for g in scene.instances), reverse=True)
    return [sum(best[:i], Fraction(0)) for i in range(1, k + 1)]


def oracle_rows(scenes: Sequence[Scene], candidate_sets: Sequence[Sequence[Chunk]], k: int,
                mode: str = "exact", reference_sets: Sequence[Sequence[Chunk]] | None = None
                ) -> tuple[list[Fraction], list[Fraction]]:
    """Mean per-slot ceilings ``(R(c*), R(c_G*))`` over scenes.

    ``R(c_G*)`` is the best list from each scene's candidate set.  In
    ``exact`` mode ``R(c*)`` enumerates every superpixel subset (small scenes
    only); in ``pool`` mode it is the best list from ``reference_sets``
    (defaulting to the candidate sets).
    """
    if mode not in ("exact", "pool"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    if len(scenes) != len(candidate_sets):
        raise ValueError("one candidate set per scene is required")
    if not scenes:
        return [Fraction(0)] * k, [Fraction(0)] * k
    refs = candidate_sets if reference_sets is None else reference_sets
    star = [Fraction(0)] * k
    grown = [Fraction(0)] * k
    for idx, (scene, cands) in enumerate(zip(scenes, candidate_sets)):
        if mode == "exact":
            s = exact_ceiling(scene, k)
        else:
            s = pool_ceiling(refs[idx], scene.instances, k)
        g = pool_ceiling(cands, scene.instances, k)
        star = [a + b for a, b in zip(star, s)]
        grown = [a + b for a, b in zip(grown, g)]
    n = len(scenes)
    return [v / n for v in star], [v / n for v in grown]
