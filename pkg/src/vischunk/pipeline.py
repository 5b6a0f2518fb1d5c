"""Experiment stages and their on-disk formats.

A dataset directory holds ``manifest.txt`` plus one ``.scene`` and one
``.channel`` file per scene.  Candidate directories hold one ``.cands`` file
per scene.  Prediction directories hold ``lists.csv``.  Evaluation writes
``results.csv``, ``metrics.csv`` and ``summary.csv``.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .assignment import PredictionList
from .features import SceneFeatures
from .grower import (GrowerPredictor, OraclePredictor, PerturbedOraclePredictor, dedupe_chains, dumps_candidates,
                     grow_multi_chains, loads_candidates, seed_grid)
from .learner import (ForestConfig, ForestGrowerPredictor, GreedyOracleScorer, RegressionForest, collect_grower_data,
                      collect_list_data, fit_forest, predict_list)
from .metrics import abo, exact_ceiling, instance_accuracy, pool_ceiling, slot_scores
from .scene import Chunk, Scene
from .synth import (SemanticChannel, SynthConfig, baseline_boxes, baseline_cc, baseline_intersection, read_manifest,
                    write_dataset)

log = logging.getLogger(__name__)

LIST_METHODS = ("VC", "CC", "boxes", "SP_boxes")
ORACLE_METHODS = ("R_star", "R_grower")


@dataclass
class SceneRecord:
    scene_id: str
    scene: Scene
    channel: SemanticChannel


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map over scenes; a process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def generate(cfg: SynthConfig, indices: Iterable[int], out_dir: str | Path) -> Path:
    return write_dataset(cfg, list(indices), out_dir)


def load_dataset(data_dir: str | Path) -> list[SceneRecord]:
    entries = read_manifest(Path(data_dir) / "manifest.txt")
    return [SceneRecord(e.scene_id, *e.load()) for e in entries]


# candidates

def make_predictor(kind: str, record: SceneRecord, forest: RegressionForest | None = None,
                   eps: float = 0.05, seed: int = 0) -> GrowerPredictor:
    if kind == "oracle":
        return OraclePredictor()
    if kind == "perturbed":
        return PerturbedOraclePredictor(eps, seed=seed)
    if kind == "learned":
        if forest is None:
            raise ValueError("the learned grower needs a forest")
        return ForestGrowerPredictor(forest, SceneFeatures(record.scene, record.channel))
    raise ValueError(f"unknown grower {kind!r}")


@dataclass(frozen=True)
class GrowJob:
    record: SceneRecord
    kind: str
    forest: RegressionForest | None
    seed_interval: int
    max_chunk_size: int
    eps: float = 0.05
    seed: int = 0

    def __call__(self) -> list[tuple[Chunk, int | None]]:
        pred = make_predictor(self.kind, self.record, self.forest, self.eps, self.seed)
        seeds = seed_grid(self.record.scene, self.seed_interval)
        return dedupe_chains(grow_multi_chains(self.record.scene, pred, seeds, self.max_chunk_size))


def _run(job):
    return job()


def grow_dataset(records: Sequence[SceneRecord], kind: str, seed_interval: int, max_chunk_size: int,
                 forest: RegressionForest | None = None, eps: float = 0.05, seed: int = 0,
                 workers: int = 1) -> dict[str, list[tuple[Chunk, int | None]]]:
    jobs = [GrowJob(r, kind, forest, seed_interval, max_chunk_size, eps, seed) for r in records]
    return {r.scene_id: out for r, out in zip(records, parallel_map(_run, jobs, workers))}


def write_candidates(out_dir: str | Path, cands: dict[str, list[tuple[Chunk, int | None]]]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sid, items in cands.items():
        (out / f"{sid}.cands").write_text(dumps_candidates(sid, items))


def read_candidates(cand_dir: str | Path, records: Sequence[SceneRecord]) -> dict[str, list[Chunk]]:
    d = Path(cand_dir)
    out = {}
    for r in records:
        path = d / f"{r.scene_id}.cands"
        if not path.exists():
            raise FileNotFoundError(f"no candidates for {r.scene_id} in {d}")
        out[r.scene_id] = [c for c, _ in loads_candidates(path.read_text(), r.scene)]
    return out


# training

def train_grower(records: Sequence[SceneRecord], config: ForestConfig, seed_interval: int,
                 max_chunk_size: int, rows_per_step: int | None) -> tuple[RegressionForest, object]:
    data = collect_grower_data([(r.scene_id, r.scene, r.channel) for r in records], seed_interval,
                               max_chunk_size, rows_per_step, seed=config.seed)
    log.info("grower imitation rows: %d", len(data))
    return fit_forest(data, config), data


def train_list(records: Sequence[SceneRecord], cands: dict[str, list[Chunk]], k: int, config: ForestConfig,
               rows_per_round: int | None) -> tuple[RegressionForest, object]:
    items = [(r.scene_id, r.scene, r.channel, cands[r.scene_id]) for r in records]
    data = collect_list_data(items, k, rows_per_round, seed=config.seed)
    log.info("list imitation rows: %d", len(data))
    return fit_forest(data, config), data


# prediction

@dataclass(frozen=True)
class PredictJob:
    record: SceneRecord
    candidates: list[Chunk]
    forest: RegressionForest | None
    k: int

    def __call__(self) -> PredictionList:
        scorer = GreedyOracleScorer() if self.forest is None else self.forest
        return predict_list(self.record.scene, self.record.channel, self.candidates, scorer, self.k)


def predict_dataset(records: Sequence[SceneRecord], cands: dict[str, list[Chunk]], forest: RegressionForest | None,
                    k: int, workers: int = 1) -> dict[str, PredictionList]:
    """Learned list prediction, or the ground-truth greedy when ``forest`` is None."""
    jobs = [PredictJob(r, cands[r.scene_id], forest, k) for r in records]
    return {r.scene_id: out for r, out in zip(records, parallel_map(_run, jobs, workers))}


def _fmt(x) -> str:
    return f"{float(x):.6f}"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def dumps_lists(lists: dict[str, PredictionList]) -> str:
    rows = [(sid, slot, e.index, _fmt(e.marginal))
            for sid, L in lists.items() for slot, e in enumerate(L.entries, start=1)]
    return _csv_text(["scene", "slot", "candidate", "score"], rows)


def loads_lists(text: str, cands: dict[str, list[Chunk]]) -> dict[str, list[Chunk]]:
    out: dict[str, list[Chunk]] = {sid: [] for sid in cands}
    for row in csv.DictReader(io.StringIO(text)):
        out[row["scene"]].append(cands[row["scene"]][int(row["candidate"])])
    return out


# evaluation

@dataclass
class SceneEval:
    scene_id: str
    slots: dict[str, list[Fraction]]
    abo: dict[str, Fraction]
    inst_acc: dict[str, Fraction]
    n_chunks: dict[str, int]
    n_instances: int


@dataclass(frozen=True)
class EvalJob:
    record: SceneRecord
    candidates: list[Chunk]
    vc_list: list[Chunk]
    k: int
    oracle_mode: str
    target_class: int

    def __call__(self) -> SceneEval:
        s, ch, G = self.record.scene, self.record.channel, self.record.scene.instances
        lists = {
            "VC": self.vc_list,
            "CC": baseline_cc(s, ch, self.target_class),
            "boxes": baseline_boxes(s, ch),
            "SP_boxes": baseline_intersection(s, ch, self.target_class),
        }
        slots = {m: slot_scores(L, G, self.k) for m, L in lists.items()}
        pools = {"VC": self.candidates, "CC": lists["CC"], "boxes": lists["boxes"], "SP_boxes": lists["SP_boxes"],
                 "singletons": [s.chunk([i]) for i in range(s.n_superpixels)]}
        slots["R_grower"] = pool_ceiling(self.candidates, G, self.k)
        if self.oracle_mode == "exact":
            slots["R_star"] = exact_ceiling(s, self.k)
        else:
            every = list({c.key: c for p in pools.values() for c in p}.values())
            slots["R_star"] = pool_ceiling(every, G, self.k)
        return SceneEval(self.record.scene_id, slots,
                         {m: abo(p, G) for m, p in pools.items()},
                         {m: instance_accuracy(L, G) for m, L in lists.items()},
                         {m: len(p) for m, p in pools.items()}, len(G))


@dataclass
class EvalReport:
    scenes: list[SceneEval]
    k: int

    def results_csv(self) -> str:
        rows = [(m, e.scene_id, i, _fmt(v)) for e in self.scenes for m, vals in e.slots.items()
                for i, v in enumerate(vals, start=1)]
        return _csv_text(["method", "scene", "slot", "score"], rows)

    def metrics_csv(self) -> str:
        rows = []
        for e in self.scenes:
            for m, a in e.abo.items():
                acc = e.inst_acc.get(m)
                rows.append((m, e.scene_id, _fmt(a), "" if acc is None else _fmt(acc), e.n_chunks[m], e.n_instances))
        return _csv_text(["method", "scene", "abo", "inst_acc", "n_chunks", "n_instances"], rows)

    def mean_slots(self) -> dict[str, list[Fraction]]:
        acc: dict[str, list[Fraction]] = defaultdict(lambda: [Fraction(0)] * self.k)
        for e in self.scenes:
            for m, vals in e.slots.items():
                acc[m] = [a + v for a, v in zip(acc[m], vals)]
        n = len(self.scenes)
        return {m: [v / n for v in vals] for m, vals in acc.items()}

    def summary(self) -> list[tuple[str, str, Fraction]]:
        """``(method, metric, mean)`` rows: slot means, ABO, instance accuracy, short-list rate."""
        n = len(self.scenes)
        rows = []
        for m, vals in self.mean_slots().items():
            rows += [(m, f"slot_{i}", v) for i, v in enumerate(vals, start=1)]
        methods = list(self.scenes[0].abo) if self.scenes else []
        for m in methods:
            rows.append((m, "abo", sum((e.abo[m] for e in self.scenes), Fraction(0)) / n))
            if m in self.scenes[0].inst_acc:
                rows.append((m, "inst_acc", sum((e.inst_acc[m] for e in self.scenes), Fraction(0)) / n))
            short = sum(e.n_chunks[m] < e.n_instances for e in self.scenes)
            rows.append((m, "fewer_chunks_than_instances", Fraction(short, n)))
        return rows

    def summary_csv(self) -> str:
        return _csv_text(["method", "metric", "mean"], [(m, k, _fmt(v)) for m, k, v in self.summary()])

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.results_csv())
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "summary.csv").write_text(self.summary_csv())


def evaluate(records: Sequence[SceneRecord], cands: dict[str, list[Chunk]], vc_lists: dict[str, list[Chunk]],
             k: int, oracle_mode: str = "pool", target_class: int = 1, workers: int = 1) -> EvalReport:
    if not records:
        raise ValueError("nothing to evaluate")
    jobs = [EvalJob(r, cands[r.scene_id], vc_lists[r.scene_id], k, oracle_mode, target_class) for r in records]
    return EvalReport(parallel_map(_run, jobs, workers), k)


# full experiment

def run_experiment(cfg: dict, out_dir: str | Path) -> EvalReport:
    """gen -> train-grower -> grow -> train-list -> predict -> eval under ``out_dir``."""
    from .config import forest_config, synth_config, write_effective

    out = Path(out_dir)
    write_effective(cfg, out)
    p = cfg["pipeline"]
    scfg = synth_config(cfg)
    generate(scfg, range(p["n_train"]), out / "train")
    generate(scfg, range(p["test_offset"], p["test_offset"] + p["n_test"]), out / "test")
    train, test = load_dataset(out / "train"), load_dataset(out / "test")

    grower, gdata = train_grower(train, forest_config(cfg, "grower_forest"), p["seed_interval"],
                                 p["max_chunk_size"], p["grower_rows_per_step"])
    (out / "grower.forest").write_text(grower.dumps())
    grow = dict(kind="learned", forest=grower, seed_interval=p["seed_interval"],
                max_chunk_size=p["max_chunk_size"], workers=p["workers"])
    train_cands = grow_dataset(train, **grow)
    write_candidates(out / "cands_train", train_cands)
    test_cands = grow_dataset(test, **grow)
    write_candidates(out / "cands_test", test_cands)

    train_c = {sid: [c for c, _ in v] for sid, v in train_cands.items()}
    test_c = {sid: [c for c, _ in v] for sid, v in test_cands.items()}
    lister, ldata = train_list(train, train_c, p["k"], forest_config(cfg, "list_forest"), p["list_rows_per_round"])
    (out / "list.forest").write_text(lister.dumps())

    lists = predict_dataset(test, test_c, lister, p["k"], p["workers"])
    (out / "predictions").mkdir(exist_ok=True)
    (out / "predictions" / "lists.csv").write_text(dumps_lists(lists))
    report = evaluate(test, test_c, {sid: L.chunks for sid, L in lists.items()}, p["k"], p["oracle_mode"],
                      scfg.target_class, p["workers"])
    report.write(out / "report")
    return report
