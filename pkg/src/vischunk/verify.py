"""Randomized harnesses for the exactness and approximation guarantees.

Every suite returns a :class:`SuiteResult`; a suite passes when it recorded
no violations.  Scenes come from :func:`toy_scene` so the exhaustive oracles
stay cheap.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .assignment import assignment_bruteforce, hungarian, verify_theorem1
from .grower import (OraclePredictor, PerturbedOraclePredictor, best_chunk_bruteforce, best_in_chain,
                     grow_single, verify_corollary, verify_theorem3)
from .scene import iou_extend
from .synth import rng_stream, toy_scene

log = logging.getLogger(__name__)

# separate seed ranges so suites never share scenes by accident
_SCENE_BASE = {"theorem1": 1_000_000, "theorem2": 2_000_000, "theorem3": 3_000_000, "iou": 4_000_000}


@dataclass
class SuiteResult:
    name: str
    checked: int
    violations: int
    seconds: float
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = " ".join(f"{k}={v}" for k, v in self.detail.items())
        return f"{status} {self.name}: checked={self.checked} violations={self.violations} " \
               f"time={self.seconds:.2f}s {extra}".rstrip()


def random_rational_matrix(rng: np.random.Generator, max_size: int) -> list[list[Fraction]]:
    """Entries in [0, 1] with small denominators so ties are common."""
    rows = int(rng.integers(1, max_size + 1))
    cols = int(rng.integers(1, max_size + 1))
    den = rng.integers(1, 13, size=(rows, cols))
    num = rng.integers(0, den + 1)
    return [[Fraction(int(a), int(b)) for a, b in zip(ra, rb)] for ra, rb in zip(num, den)]


def random_chunks(scene, rng: np.random.Generator, count: int):
    n = scene.n_superpixels
    out = []
    for _ in range(count):
        size = int(rng.integers(1, n + 1))
        out.append(scene.chunk(rng.choice(n, size=size, replace=False).tolist()))
    return out


def hungarian_suite(trials: int = 1000, max_size: int = 6, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(trials):
        w = random_rational_matrix(rng, max_size)
        if hungarian(w)[1] != assignment_bruteforce(w):
            bad += 1
    return SuiteResult("hungarian_exact", trials, bad, time.perf_counter() - t0)


def theorem1_suite(n_scenes: int = 1000, max_chunks: int = 12, max_k: int = 4, seed: int = 0,
                   failure_dir: str | Path | None = None) -> SuiteResult:
    """Greedy prefixes reach half the optimal list value; prefixes nest."""
    t0 = time.perf_counter()
    bad = prefix_bad = prefixes = 0
    worst = Fraction(1)
    for i in range(n_scenes):
        sid = _SCENE_BASE["theorem1"] + seed * n_scenes + i
        scene = toy_scene(sid)
        rng = rng_stream(seed, sid, "theorem1")
        C = random_chunks(scene, rng, int(rng.integers(1, max_chunks + 1)))
        k = int(rng.integers(1, max_k + 1))
        report = verify_theorem1(C, scene.instances, k, scene=scene, failure_dir=failure_dir,
                                 scene_id=f"toy_{sid}")
        prefixes += len(report.rows)
        bad += sum(2 * r.f_greedy < r.f_opt for r in report.rows)
        prefix_bad += not report.prefix_ok
        worst = min([worst] + [r.ratio for r in report.rows])
    return SuiteResult("theorem1_greedy_half", prefixes, bad + prefix_bad, time.perf_counter() - t0,
                       {"scenes": n_scenes, "prefix_failures": prefix_bad, "worst_ratio": f"{float(worst):.4f}"})


def theorem2_suite(n_scenes: int = 200, max_superpixels: int = 15, seed: int = 0) -> SuiteResult:
    """The oracle grower's best prefix is the exhaustive optimum."""
    t0 = time.perf_counter()
    bad = checked = 0
    for i in range(n_scenes):
        scene = toy_scene(_SCENE_BASE["theorem2"] + seed * n_scenes + i, n_superpixels=(4, max_superpixels))
        for g in scene.instances:
            got = best_in_chain(grow_single(scene, g, OraclePredictor()), g)[1]
            want = best_chunk_bruteforce(scene, g)[1]
            checked += 1
            if got != want:
                bad += 1
                log.error("grower optimum mismatch: scene %d instance %d got %s want %s", i, g.id, got, want)
    return SuiteResult("theorem2_grower_exact", checked, bad, time.perf_counter() - t0, {"scenes": n_scenes})


def _toy_set(n_scenes: int, seed: int):
    return [toy_scene(_SCENE_BASE["theorem3"] + seed * n_scenes + i) for i in range(n_scenes)]


def theorem3_suite(n_scenes: int = 500, trials: int = 20, eps: Sequence[float] = (0.01, 0.05, 0.1),
                   seed: int = 0) -> SuiteResult:
    """Bounded fill-fraction noise costs at most ``2 eps`` of best IoU."""
    t0 = time.perf_counter()
    scenes = _toy_set(n_scenes, seed)
    bad = checked = 0
    slack = None
    for si, scene in enumerate(scenes):
        for g in scene.instances:
            r_star = best_chunk_bruteforce(scene, g)[1]
            for e in eps:
                rep = verify_theorem3(scene, g, e, trials, seed=seed * 7919 + si, r_star=r_star)
                checked += trials
                bad += len(rep.violations)
                slack = rep.min_slack if slack is None else min(slack, rep.min_slack)
    return SuiteResult("theorem3_perturbation", checked, bad, time.perf_counter() - t0,
                       {"scenes": n_scenes, "min_slack": f"{float(slack or 0):.4f}"})


def corollary_suite(n_scenes: int = 500, etas: Sequence[float] = (0.5, 0.25), noise: float = 0.1,
                    seed: int = 0) -> SuiteResult:
    """Violation rate of the mean-squared-error floor stays within eta."""
    t0 = time.perf_counter()
    scenes = _toy_set(n_scenes, seed)
    r_stars = {(si, g.id): best_chunk_bruteforce(s, g)[1] for si, s in enumerate(scenes) for g in s.instances}
    bad, checked, detail = 0, 0, {}
    for eta in etas:
        rep = verify_corollary(scenes, PerturbedOraclePredictor(noise, seed=seed), eta, r_stars)
        checked += rep.n_samples
        bad += not rep.ok
        detail[f"rate@{eta}"] = f"{rep.rate:.4f}"
        detail["delta_hat"] = f"{rep.delta_hat:.5f}"
    return SuiteResult("corollary_rate", checked, bad, time.perf_counter() - t0, detail)


def incremental_iou_suite(trials: int = 100_000, seed: int = 0, n_scenes: int = 50) -> SuiteResult:
    """IoU after adding one superpixel equals a from-scratch pixel recount."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    scenes = [toy_scene(_SCENE_BASE["iou"] + seed * n_scenes + i, n_superpixels=(2, 40), side=(6, 24))
              for i in range(n_scenes)]
    bad = 0
    for _ in range(trials):
        scene = scenes[int(rng.integers(n_scenes))]
        n = scene.n_superpixels
        perm = rng.permutation(n)
        size = int(rng.integers(0, n))
        c = scene.chunk(perm[:size].tolist())
        s = int(perm[size])
        g = scene.instances[int(rng.integers(scene.n_instances))]
        fast = iou_extend(c, scene.superpixel(s), g)
        mask = np.isin(scene.labels.ravel(), np.append(perm[:size], s))
        gmask = np.zeros(mask.size, dtype=bool)
        gmask[g.mask] = True
        inter = int(np.count_nonzero(mask & gmask))
        union = int(np.count_nonzero(mask | gmask))
        if fast != Fraction(inter, union):
            bad += 1
    return SuiteResult("incremental_iou", trials, bad, time.perf_counter() - t0)


SUITES = {
    "hungarian": hungarian_suite,
    "theorem1": theorem1_suite,
    "theorem2": theorem2_suite,
    "theorem3": theorem3_suite,
    "corollary": corollary_suite,
    "iou": incremental_iou_suite,
}


def run_suites(settings: dict[str, dict], only: Sequence[str] | None = None) -> list[SuiteResult]:
    """Run the named suites (all by default) with per-suite keyword settings."""
    names = list(only) if only else list(SUITES)
    out = []
    for name in names:
        res = SUITES[name](**settings.get(name, {}))
        log.info(res.line())
        out.append(res)
    return out
