"""Deterministic class-balancing planner.

Three stages: map each class to the samples containing it, sort each list
ascending by class-set size (ties by sample_id), then cycle passes over the
real seed list of every under-represented class, emitting one plan entry per
seed per pass until the class tally reaches ``n_balance``.

Seeds are always real images: generated outputs count toward the tally but
are never re-seeded, so later passes cannot compound synthetic artifacts.
Only the class currently being balanced has its tally incremented per entry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .dataset import DatasetIndex, fingerprint_class_sets

log = logging.getLogger(__name__)

ClassSets = list[tuple[str, tuple[int, ...]]]


class PlanError(Exception):
    pass


@dataclass(frozen=True)
class PlanEntry:
    output_id: str
    seed_id: str
    target_class: int
    pass_index: int  # 1-based cycle over the seed list


@dataclass(frozen=True)
class GenerationPlan:
    entries: tuple[PlanEntry, ...]
    n_balance: int
    fingerprint: str

    def __len__(self) -> int:
        return len(self.entries)


def build_class_map(index: DatasetIndex) -> dict[int, list[str]]:
    """Map class id -> sample_ids containing it, in index order (unsorted)."""
    return _class_map(index.class_sets())


def _class_map(items: ClassSets) -> dict[int, list[str]]:
    mapping: dict[int, list[str]] = {}
    for sample_id, classes in items:
        for c in classes:
            mapping.setdefault(c, []).append(sample_id)
    return mapping


def sort_class_map(
    mapping: dict[int, list[str]], index: DatasetIndex
) -> dict[int, list[str]]:
    """Sort every list ascending by class-set size, ties by sample_id."""
    sizes = {sid: len(classes) for sid, classes in index.class_sets()}
    return {
        c: sorted(ids, key=lambda sid: (sizes[sid], sid)) for c, ids in mapping.items()
    }


def plan_from_class_sets(
    items: ClassSets, schema_ids: list[int], n_balance: int
) -> GenerationPlan:
    """Plan directly from (sample_id, class set) listings; see make_plan."""
    if n_balance < 1:
        raise PlanError(f"n_balance must be >= 1, got {n_balance}")
    if len({sid for sid, _ in items}) != len(items):
        raise PlanError("duplicate sample ids in listing")
    mapping = _class_map(items)
    sizes = {sid: len(classes) for sid, classes in items}
    entries: list[PlanEntry] = []
    seq = 1
    for c in sorted(i for i in schema_ids if i != 0):
        seeds = sorted(mapping.get(c, []), key=lambda sid: (sizes[sid], sid))
        tally = len(seeds)
        if tally >= n_balance:
            continue
        if not seeds:
            log.warning("class %d has no real seed images; skipped", c)
            continue
        pass_index = 0
        while tally < n_balance:
            pass_index += 1
            for seed_id in seeds:
                entries.append(PlanEntry(f"{seed_id}_g{seq}", seed_id, c, pass_index))
                seq += 1
                tally += 1
                if tally >= n_balance:
                    break
    return GenerationPlan(
        tuple(entries), n_balance, fingerprint_class_sets(items)
    )


def make_plan(index: DatasetIndex, n_balance: int) -> GenerationPlan:
    """Plan the generations needed to lift every class tally to n_balance."""
    return plan_from_class_sets(index.class_sets(), sorted(index.schema_ids()), n_balance)


def plan_size(index: DatasetIndex, n_balance: int) -> int:
    """Entry count of make_plan(index, n_balance) without building the plan.

    Each entry lifts exactly one class tally by one, so the size is the sum
    of per-class deficits over classes that have at least one seed.
    """
    tallies = [len(ids) for ids in build_class_map(index).values()]
    return sum(max(0, n_balance - t) for t in tallies)


def auto_n_balance_from_class_sets(items: ClassSets, target_ratio: float = 1.0) -> int:
    """Smallest n whose plan size is closest to target_ratio * len(items).

    plan_size is non-decreasing in n, so a forward scan from the smallest
    class tally (below which plans are empty) finds the minimizer; ties go
    to the smaller n.
    """
    if target_ratio < 0:
        raise PlanError("target_ratio must be >= 0")
    tallies = [len(ids) for ids in _class_map(items).values()]
    if not tallies:
        log.warning("no samples with foreground classes; n_balance = 1")
        return 1
    target = target_ratio * len(items)
    n = min(tallies)
    best_n, best_diff = n, abs(0.0 - target)
    while True:
        n += 1
        size = sum(max(0, n - t) for t in tallies)
        diff = abs(size - target)
        if diff < best_diff:
            best_n, best_diff = n, diff
        if size >= target:
            return best_n


def auto_n_balance(index: DatasetIndex, target_ratio: float = 1.0) -> int:
    return auto_n_balance_from_class_sets(index.class_sets(), target_ratio)


def render_plan(plan: GenerationPlan) -> str:
    """JSON Lines: a header with n_balance and fingerprint, then one entry per line."""
    lines = [json.dumps({"n_balance": plan.n_balance, "fingerprint": plan.fingerprint})]
    for e in plan.entries:
        lines.append(
            json.dumps(
                {
                    "output_id": e.output_id,
                    "seed_id": e.seed_id,
                    "target_class": e.target_class,
                    "pass_index": e.pass_index,
                }
            )
        )
    return "\n".join(lines) + "\n"


def write_plan(plan: GenerationPlan, path: Path | str) -> None:
    Path(path).write_text(render_plan(plan))


def read_plan(path: Path | str) -> GenerationPlan:
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines:
        raise PlanError(f"empty plan file {path}")
    header = json.loads(lines[0])
    entries = tuple(
        PlanEntry(
            output_id=rec["output_id"],
            seed_id=rec["seed_id"],
            target_class=rec["target_class"],
            pass_index=rec["pass_index"],
        )
        for rec in map(json.loads, lines[1:])
    )
    return GenerationPlan(entries, header["n_balance"], header["fingerprint"])
