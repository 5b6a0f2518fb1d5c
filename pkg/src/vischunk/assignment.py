"""List objective, exact assignment, and greedy list generation.

The list objective is the total IoU of a chunk list under the best one-to-one
pairing with ground-truth instances, padded with zero-weight dummy instances
when the list is longer than the instance set.  All arithmetic is exact: the
weights are Fractions, scaled to integers by their common denominator before
the assignment solver runs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, permutations
from pathlib import Path
from typing import Sequence

from .scene import Chunk, GroundTruthInstance, Scene, dumps_scene, iou

BRUTE_FORCE_MAX_CHUNKS = 12
BRUTE_FORCE_MAX_K = 5


@dataclass(frozen=True)
class ScoreMatrix:
    """Chunk x slot IoU weights; columns past ``n_real`` are dummy instances."""

    weights: tuple[tuple[Fraction, ...], ...]
    n_real: int

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.weights), (len(self.weights[0]) if self.weights else self.n_real)


def score_matrix(chunks: Sequence[Chunk], instances: Sequence[GroundTruthInstance],
                 k: int | None = None) -> ScoreMatrix:
    """IoU matrix with dummy columns appended up to ``max(k, |G|)`` columns.

    ``k`` defaults to the number of chunks.
    """
    k = len(chunks) if k is None else k
    n_cols = max(k, len(instances))
    pad = (Fraction(0),) * (n_cols - len(instances))
    rows = tuple(tuple(iou(c, g) for g in instances) + pad for c in chunks)
    return ScoreMatrix(rows, len(instances))


def _integer_weights(weights) -> tuple[list[list[int]], int]:
    den = 1
    for row in weights:
        for w in row:
            den = math.lcm(den, Fraction(w).denominator)
    return [[int(Fraction(w) * den) for w in row] for row in weights], den


def _min_cost_assignment(cost: list[list[int]]) -> list[int]:
    """Row -> column minimum-cost perfect matching on a square integer matrix.

    Shortest augmenting path with dual potentials, O(n^3).
    """
    n = len(cost)
    inf = math.inf
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign


def hungarian(matrix) -> tuple[tuple[int, ...], Fraction]:
    """Maximum-weight perfect matching on the zero-padded square matrix.

    Accepts a :class:`ScoreMatrix` or any rectangular nested sequence of
    rationals.  Returns ``(assignment, value)`` where ``assignment[i]`` is the
    column of row ``i`` (columns past the input width are padding).  Among
    optimal matchings the lexicographically smallest assignment vector is
    returned.

    The tie-break is folded into a single solve: row ``i`` choosing column
    ``j`` pays ``j * n**(n-1-i)`` on top of ``n**n`` times the integer weight.
    The penalty is the assignment vector read as a base-``n`` number, and it
    never exceeds ``n**n - 1``, so it cannot outweigh a unit of real weight.
    """
    weights = matrix.weights if isinstance(matrix, ScoreMatrix) else matrix
    n_rows = len(weights)
    if n_rows == 0:
        return (), Fraction(0)
    n_cols = len(weights[0])
    n = max(n_rows, n_cols)
    ints, den = _integer_weights(weights)
    scale = n ** n
    place = [n ** (n - 1 - i) for i in range(n)]
    cost = []
    for i in range(n):
        row = ints[i] + [0] * (n - n_cols) if i < n_rows else [0] * n
        # negate to turn maximization into minimization
        cost.append([-(w * scale) + j * place[i] for j, w in enumerate(row)])
    assign = _min_cost_assignment(cost)
    total = sum(ints[i][assign[i]] for i in range(n_rows) if assign[i] < n_cols)
    return tuple(assign[:n_rows]), Fraction(total, den)


def assignment_bruteforce(weights) -> Fraction:
    """Max over all injective row->column maps; test oracle for :func:`hungarian`."""
    n_rows = len(weights)
    if n_rows == 0:
        return Fraction(0)
    ints, den = _integer_weights(weights)
    n_cols = len(weights[0])
    n = max(n_rows, n_cols)
    best = 0
    for perm in permutations(range(n), n_rows):
        s = 0
        for i, j in enumerate(perm):
            if j < n_cols:
                s += ints[i][j]
        if s > best:
            best = s
    return Fraction(best, den)


def f_of_matrix(weights) -> Fraction:
    return hungarian(weights)[1]


def f_of_list(chunks: Sequence[Chunk], instances: Sequence[GroundTruthInstance]) -> Fraction:
    """Total IoU of ``chunks`` under the optimal assignment to ``instances``."""
    if not chunks:
        return Fraction(0)
    return hungarian(score_matrix(chunks, instances))[1]


@dataclass
class ListEntry:
    index: int
    chunk: Chunk | None
    instance_id: int | None
    marginal: Fraction


@dataclass
class PredictionList:
    """Ordered chunk list with per-slot marginals.

    For ground-truth greedy lists ``instance_id`` is the instance consumed at
    that slot (``None`` once every instance is used) and ``cumulative_f[i]``
    is the greedy pairing value of the first ``i + 1`` entries.  For learned
    lists the marginal is the predicted score and ``instance_id`` is ``None``.
    """

    entries: list[ListEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self.entries]

    @property
    def chunks(self) -> list[Chunk]:
        return [e.chunk for e in self.entries]

    @property
    def cumulative_f(self) -> list[Fraction]:
        out, acc = [], Fraction(0)
        for e in self.entries:
            acc += e.marginal
            out.append(acc)
        return out

    def prefix(self, i: int) -> "PredictionList":
        return PredictionList(self.entries[:i])


def greedy_from_matrix(weights, k: int, n_real: int | None = None) -> list[tuple[int, int | None, Fraction]]:
    """Greedy list selection on an IoU matrix.

    Each round picks the unselected row with the largest best weight among
    the remaining real columns (smallest row wins ties) and removes its best
    column (smallest column wins ties).  Returns ``(row, column, marginal)``
    triples; the column is ``None`` when no real column remains.
    """
    n_rows = len(weights)
    n_real = len(weights[0]) if (n_real is None and n_rows) else (n_real or 0)
    remaining = list(range(n_real))
    chosen: list[tuple[int, int | None, Fraction]] = []
    taken = [False] * n_rows
    for _ in range(min(k, n_rows)):
        best_row, best_col, best_y = None, None, None
        for i in range(n_rows):
            if taken[i]:
                continue
            row = weights[i]
            y, col = Fraction(0), None
            for j in remaining:
                if col is None or row[j] > y:
                    y, col = row[j], j
            if best_row is None or y > best_y:
                best_row, best_col, best_y = i, col, y
        taken[best_row] = True
        if best_col is not None:
            remaining.remove(best_col)
        chosen.append((best_row, best_col, best_y))
    return chosen


def greedy_list(C: Sequence[Chunk], G: Sequence[GroundTruthInstance], k: int) -> PredictionList:
    """Greedy list generation with ground-truth access."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not C:
        raise ValueError("candidate set is empty")
    weights = [[iou(c, g) for g in G] for c in C]
    picks = greedy_from_matrix(weights, k, n_real=len(G))
    return PredictionList([ListEntry(i, C[i], col, y) for i, col, y in picks])


def optimal_from_matrix(weights, k: int, n_real: int | None = None) -> tuple[tuple[int, ...], Fraction]:
    """Enumerate every size-``min(k, rows)`` row subset and every pairing."""
    n_rows = len(weights)
    if n_rows == 0:
        return (), Fraction(0)
    n_real = len(weights[0]) if n_real is None else n_real
    ints, den = _integer_weights([list(r[:n_real]) for r in weights])
    size = min(k, n_rows)
    n_cols = max(size, n_real)
    perms = list(permutations(range(n_cols), size))
    best_val, best_rows = -1, ()
    for rows in combinations(range(n_rows), size):
        sub = [ints[r] for r in rows]
        val = 0
        for perm in perms:
            s = 0
            for row, j in zip(sub, perm):
                if j < n_real:
                    s += row[j]
            if s > val:
                val = s
        if val > best_val:
            best_val, best_rows = val, rows
    return best_rows, Fraction(best_val, den)


def optimal_list_bruteforce(C: Sequence[Chunk], G: Sequence[GroundTruthInstance],
                            k: int) -> tuple[list[Chunk], Fraction]:
    """Exact maximizer of the list objective by exhaustive enumeration."""
    if len(C) > BRUTE_FORCE_MAX_CHUNKS or k > BRUTE_FORCE_MAX_K:
        raise ValueError(
            f"brute force capped at |C| <= {BRUTE_FORCE_MAX_CHUNKS}, k <= {BRUTE_FORCE_MAX_K}; "
            f"got |C| = {len(C)}, k = {k}")
    weights = [[iou(c, g) for g in G] for c in C]
    rows, value = optimal_from_matrix(weights, k, n_real=len(G))
    return [C[r] for r in rows], value


@dataclass
class Theorem1Row:
    prefix: int
    f_greedy: Fraction
    f_opt: Fraction
    f_list: Fraction

    @property
    def ratio(self) -> Fraction:
        return Fraction(1) if self.f_opt == 0 else self.f_greedy / self.f_opt


@dataclass
class Theorem1Report:
    """Per-prefix greedy vs optimal values.

    ``f_greedy`` is the greedy pairing value (sum of marginals); ``f_list`` is
    the optimal-assignment value of the same greedy prefix, never smaller.
    """

    rows: list[Theorem1Row]
    prefix_ok: bool

    @property
    def bound_ok(self) -> bool:
        return all(2 * r.f_greedy >= r.f_opt for r in self.rows)

    @property
    def ok(self) -> bool:
        return self.bound_ok and self.prefix_ok

    def csv_lines(self, scene_id: str) -> list[str]:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in self.rows:
            w.writerow([scene_id, r.prefix, float(r.f_greedy), float(r.f_opt), float(r.ratio)])
        return buf.getvalue().splitlines()

    def write_failure(self, out_dir: str | Path, scene: Scene, scene_id: str) -> Path:
        """Dump the scene file and the per-prefix CSV for a failed check."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{scene_id}.scene").write_text(dumps_scene(scene))
        path = out / f"{scene_id}_theorem1.csv"
        path.write_text("scene_id,prefix,f_greedy,f_opt,ratio\n" + "\n".join(self.csv_lines(scene_id)) + "\n")
        return path


def verify_theorem1_matrix(weights, k: int, n_real: int | None = None) -> Theorem1Report:
    n_real = len(weights[0]) if n_real is None else n_real
    full = greedy_from_matrix(weights, k, n_real)
    prefix_ok = all(greedy_from_matrix(weights, i, n_real) == full[:i] for i in range(1, len(full)))
    rows = []
    acc = Fraction(0)
    for i, (_, _, y) in enumerate(full, start=1):
        acc += y
        _, opt = optimal_from_matrix(weights, i, n_real)
        sub = [list(weights[r][:n_real]) for r, _, _ in full[:i]]
        rows.append(Theorem1Row(i, acc, opt, f_of_matrix(sub)))
    return Theorem1Report(rows, prefix_ok)


def verify_theorem1(C: Sequence[Chunk], G: Sequence[GroundTruthInstance], k: int,
                    scene: Scene | None = None, failure_dir: str | Path | None = None,
                    scene_id: str = "scene") -> Theorem1Report:
    """Check ``f_greedy >= f_opt / 2`` and prefix recursion for every prefix.

    On a violation with ``scene`` and ``failure_dir`` given, the scene and the
    per-prefix values are written out as a counterexample.
    """
    if len(C) > BRUTE_FORCE_MAX_CHUNKS or k > BRUTE_FORCE_MAX_K:
        raise ValueError("verify_theorem1 is limited to brute-force sizes")
    weights = [[iou(c, g) for g in G] for c in C]
    report = verify_theorem1_matrix(weights, k, n_real=len(G))
    if not report.ok and scene is not None and failure_dir is not None:
        report.write_failure(failure_dir, scene, scene_id)
    return report
