"""Island-model evolutionary engine: memory pools, annealed Boltzmann island
selection, demonstration sampling, population update, and the campaign loop.

Islands never exchange members; the loop is sequential because each
iteration's demonstrations depend on the previous population update.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import chem, metrics
from .crystal import Lattice, Structure, candidate_from_generation, generation_payload, parse_formula
from .errors import ExhaustedAttempts, GeneratorUnavailable, NoJsonFound, ValidationError
from .generate import (
    DEFAULT_SAMPLING_TEMPERATURE,
    Demonstration,
    GenerationOutcome,
    GenerationRequest,
    RuleBasedGenerator,
)
from .oracle import Oracle, PropertyVector
from .tasks import Constraint, ScoreBreakdown, Task, composite_score, failure_score

log = logging.getLogger("llema.evolve")

SEED_VOLUME_PER_ATOM = 15.0  # cubic angstroms; placeholder cells for seeding


@dataclass(eq=False)
class CandidateRecord:
    iteration: int
    island: int
    structure: Optional[Structure]  # None for unparseable candidates
    properties: PropertyVector
    score: ScoreBreakdown
    pool: str  # success | failure
    generator: str
    reject_reason: Optional[str] = None
    reject_id: Optional[int] = None  # campaign-unique id for structureless records

    def __post_init__(self):
        if (self.pool == "success") != self.score.success:
            raise ValueError("pool tag contradicts score.success")

    def key(self) -> str:
        if self.structure is not None:
            return self.structure.reduced_formula
        return f"!reject:{self.reject_id}"


class MemoryPool:
    """Records ordered by composite score descending, unique per formula."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self.entries: list[CandidateRecord] = []
        self._by_key: dict[str, CandidateRecord] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def insert(self, record: CandidateRecord) -> None:
        key = record.key()
        incumbent = self._by_key.get(key)
        if incumbent is not None:
            if record.score.composite <= incumbent.score.composite:
                return
            self.entries.remove(incumbent)
        self._by_key[key] = record
        bisect.insort(self.entries, record, key=lambda r: -r.score.composite)
        if self.capacity is not None and len(self.entries) > self.capacity:
            evicted = self.entries.pop()
            del self._by_key[evicted.key()]

    def best(self, k: int) -> list[CandidateRecord]:
        return self.entries[: max(0, k)]

    def mean_composite(self) -> Optional[float]:
        if not self.entries:
            return None
        return sum(r.score.composite for r in self.entries) / len(self.entries)


@dataclass
class Island:
    id: int
    success: MemoryPool = field(default_factory=MemoryPool)
    failure: MemoryPool = field(default_factory=MemoryPool)
    u: int = 0  # total candidates ever routed here (drives the temperature)


@dataclass
class CampaignConfig:
    iterations: int = 50
    islands: int = 5
    batch: int = 2
    demos_per_pool: int = 2
    t0: float = 0.1
    schedule_n: int = 10_000
    seed: int = 0
    seeds_per_island: int = 3
    sampling_temperature: float = DEFAULT_SAMPLING_TEMPERATURE
    pool_capacity: Optional[int] = None
    fallback_rules: bool = False
    window: int = 10

    def __post_init__(self):
        if self.islands < 1 or self.iterations < 1 or self.batch < 1:
            raise ValueError("islands, iterations, and batch must be >= 1")
        if self.demos_per_pool < 0 or self.seeds_per_island < 0:
            raise ValueError("demos_per_pool and seeds_per_island must be >= 0")
        if not self.t0 > 0 or self.schedule_n < 1:
            raise ValueError("t0 must be > 0 and schedule_n >= 1")


def temperature(u: int, t0: float, schedule_n: int) -> float:
    """Annealed sampling temperature: t0 * (1 - (u mod N) / N), in (0, t0]."""
    return t0 * (1.0 - (u % schedule_n) / schedule_n)


def boltzmann_probabilities(mean_scores: Sequence[float], tau: float) -> list[float]:
    """Softmax over mean scores, computed in log space for stability."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    top = max(mean_scores)
    weights = [math.exp((s - top) / tau) for s in mean_scores]
    total = sum(weights)
    return [w / total for w in weights]


def boltzmann_select(mean_scores: Sequence[float], tau: float, rng: random.Random) -> int:
    """Draw an island index with softmax probability."""
    probs = boltzmann_probabilities(mean_scores, tau)
    r = rng.random()
    cumulative = 0.0
    for idx, p in enumerate(probs):
        cumulative += p
        if r < cumulative:
            return idx
    return len(probs) - 1


def island_mean_score(island: Island) -> float:
    """Mean success-pool composite, falling back to the failure pool, then 0."""
    mean = island.success.mean_composite()
    if mean is None:
        mean = island.failure.mean_composite()
    return 0.0 if mean is None else mean


def sample_demonstrations(island: Island, k: int) -> list[Demonstration]:
    """Up to k top entries from each pool, successes first."""
    demos = []
    for record in island.success.best(k):
        demos.append(Demonstration(record.structure, record.score, "success", record.properties))
    for record in island.failure.best(k):
        demos.append(Demonstration(record.structure, record.score, "failure", record.properties))
    return demos


def update_population(island: Island, record: CandidateRecord) -> None:
    """Route by success flag, dedup by formula (higher score kept), bump u."""
    pool = island.success if record.score.success else island.failure
    pool.insert(record)
    island.u += 1


def seed_structure(formula: str) -> Structure:
    """Deterministic placeholder cell for a database formula (cold start)."""
    counts = parse_formula(formula)
    n_atoms = sum(counts.values())
    a = (SEED_VOLUME_PER_ATOM * n_atoms) ** (1.0 / 3.0)
    lattice = Lattice(a=a, b=a, c=a, alpha=90.0, beta=90.0, gamma=90.0)
    return chem.structure_from_counts(counts, lattice, source="reference")


@dataclass
class TraceRow:
    iteration: int
    island: int
    tau: float
    mean_scores: tuple[float, ...]
    cumulative_hit_rate: float


@dataclass
class CampaignResult:
    task: Task
    records: list[CandidateRecord]
    islands: list[Island]
    success_union: list[CandidateRecord]
    metrics: metrics.MetricsBlock
    trace: list[TraceRow]


def _evaluate(
    structure: Structure,
    task: Task,
    oracle: Oracle,
    iteration: int,
    island_id: int,
    generator_tag: str,
) -> CandidateRecord:
    props = oracle.predict(structure, task.numeric_properties())
    score = composite_score(props, task, elements=structure.elements())
    return CandidateRecord(
        iteration=iteration,
        island=island_id,
        structure=structure,
        properties=props,
        score=score,
        pool="success" if score.success else "failure",
        generator=generator_tag,
    )


def _reject_record(task: Task, iteration: int, island_id: int, generator_tag: str,
                   reason: str, reject_id: int) -> CandidateRecord:
    return CandidateRecord(
        iteration=iteration,
        island=island_id,
        structure=None,
        properties=PropertyVector({}),
        score=failure_score(task),
        pool="failure",
        generator=generator_tag,
        reject_reason=reason,
        reject_id=reject_id,
    )


def run_campaign(task: Task, generator, oracle: Oracle, cfg: CampaignConfig) -> CampaignResult:
    """Drive the full evolutionary loop and return records, the success-pool
    union, and the metrics block.

    Iteration 0 is the seeding phase: each island is primed with placeholder
    structures for a few reference-database formulas, scored through the
    oracle. Loop iterations (1..N) always attach the design-rule texts to
    their generation requests.
    """
    islands = [
        Island(i, MemoryPool(cfg.pool_capacity), MemoryPool(cfg.pool_capacity))
        for i in range(cfg.islands)
    ]
    rng = random.Random(cfg.seed)
    records: list[CandidateRecord] = []
    trace: list[TraceRow] = []
    generator_tag = type(generator).__name__

    formulas = oracle.db.formulas()
    if cfg.seeds_per_island > 0 and formulas:
        for island in islands:
            picks = rng.sample(formulas, min(cfg.seeds_per_island, len(formulas)))
            for formula in picks:
                record = _evaluate(seed_structure(formula), task, oracle, 0, island.id, "seed")
                update_population(island, record)
                records.append(record)

    rules = tuple(chem.rule_texts())
    current = 0
    hits = sum(1 for r in records if r.score.success)
    reject_counter = 0
    active_generator = generator

    for n in range(1, cfg.iterations + 1):
        tau = temperature(islands[current].u, cfg.t0, cfg.schedule_n)
        means = tuple(island_mean_score(isl) for isl in islands)
        current = boltzmann_select(means, tau, rng)
        island = islands[current]
        request = GenerationRequest(
            task=task,
            iteration=n,
            demonstrations=tuple(sample_demonstrations(island, cfg.demos_per_pool)),
            rules=rules,
            batch=cfg.batch,
            sampling_temperature=cfg.sampling_temperature,
        )
        try:
            outcome = active_generator.generate(request)
        except GeneratorUnavailable:
            if not cfg.fallback_rules or isinstance(active_generator, RuleBasedGenerator):
                raise
            log.warning("generator unavailable at iteration %d; falling back to rules", n)
            active_generator = RuleBasedGenerator(cfg.seed)
            generator_tag = type(active_generator).__name__
            try:
                outcome = active_generator.generate(request)
            except ExhaustedAttempts as exc:
                log.warning("iteration %d produced no candidates: %s", n, exc)
                outcome = None
        except ExhaustedAttempts as exc:
            log.warning("iteration %d produced no candidates: %s", n, exc)
            outcome = None
        except NoJsonFound as exc:
            # an array-less model response is malformed output: feed it back
            # to the failure pool instead of aborting the campaign
            outcome = GenerationOutcome(
                rejects=[(None, ValidationError("NoJsonFound", str(exc)))]
            )

        if outcome is not None:
            for structure in outcome.candidates:
                record = _evaluate(structure, task, oracle, n, island.id, generator_tag)
                update_population(island, record)
                records.append(record)
                if record.score.success:
                    hits += 1
            for _, err in outcome.rejects:
                record = _reject_record(task, n, island.id, generator_tag, err.reason,
                                        reject_counter)
                reject_counter += 1
                update_population(island, record)
                records.append(record)

        cumulative = 100.0 * hits / len(records) if records else 0.0
        trace.append(TraceRow(n, island.id, tau, means, cumulative))

    union: dict[str, CandidateRecord] = {}
    for island in islands:
        for record in island.success:
            key = record.key()
            if key not in union or record.score.composite > union[key].score.composite:
                union[key] = record
    success_union = sorted(union.values(), key=lambda r: (-r.score.composite, r.key()))

    block = metrics.compute_metrics(records, task, oracle.db, window=cfg.window)
    return CampaignResult(
        task=task,
        records=records,
        islands=islands,
        success_union=success_union,
        metrics=block,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Record serialization and campaign persistence
# ---------------------------------------------------------------------------


def _constraint_to_dict(c: Constraint) -> dict:
    out = {"property": c.property, "kind": c.kind, "weight": c.weight}
    if c.threshold is not None:
        out["threshold"] = c.threshold
    if c.lower is not None:
        out["lower"] = c.lower
    if c.upper is not None:
        out["upper"] = c.upper
    if c.elements:
        out["elements"] = list(c.elements)
    return out


def _constraint_from_dict(d: dict) -> Constraint:
    return Constraint(
        property=d["property"],
        kind=d["kind"],
        threshold=d.get("threshold"),
        lower=d.get("lower"),
        upper=d.get("upper"),
        elements=tuple(d.get("elements", ())),
        weight=d["weight"],
    )


def record_to_dict(record: CandidateRecord) -> dict:
    structure = None
    if record.structure is not None:
        structure = generation_payload(record.structure)
        structure["source"] = record.structure.source
    return {
        "iteration": record.iteration,
        "island": record.island,
        "generator": record.generator,
        "pool": record.pool,
        "reject_reason": record.reject_reason,
        "reject_id": record.reject_id,
        "structure": structure,
        "properties": record.properties.as_dict(),
        "score": {
            "composite": record.score.composite,
            "success": record.score.success,
            "phi": [
                {"constraint": _constraint_to_dict(c), "phi": p}
                for c, p in record.score.per_constraint_phi
            ],
        },
    }


def record_from_dict(data: dict) -> CandidateRecord:
    structure = None
    if data["structure"] is not None:
        parsed = candidate_from_generation(data["structure"])
        structure = Structure(
            lattice=parsed.lattice,
            sites=parsed.sites,
            source=data["structure"].get("source", "generated"),
        )
    score = ScoreBreakdown(
        per_constraint_phi=tuple(
            (_constraint_from_dict(item["constraint"]), item["phi"])
            for item in data["score"]["phi"]
        ),
        composite=data["score"]["composite"],
        success=data["score"]["success"],
    )
    return CandidateRecord(
        iteration=data["iteration"],
        island=data["island"],
        structure=structure,
        properties=PropertyVector.from_dict(data["properties"]),
        score=score,
        pool=data["pool"],
        generator=data["generator"],
        reject_reason=data.get("reject_reason"),
        reject_id=data.get("reject_id"),
    )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def pools_payload(islands: Sequence[Island]) -> dict:
    payload = []
    for island in islands:
        payload.append(
            {
                "id": island.id,
                "u": island.u,
                "success": [
                    {"formula": r.key(), "composite": r.score.composite}
                    for r in island.success
                ],
                "failure": [
                    {"formula": r.key(), "composite": r.score.composite}
                    for r in island.failure
                ],
            }
        )
    return {"islands": payload}


def write_campaign_outputs(result: CampaignResult, outdir: Path) -> list[Path]:
    """Persist candidates.jsonl, pools.json, summary.json, trace.csv."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    candidates_path = outdir / "candidates.jsonl"
    with candidates_path.open("w") as fh:
        for record in result.records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")

    pools_path = outdir / "pools.json"
    pools_path.write_text(canonical_json(pools_payload(result.islands)))

    summary_path = outdir / "summary.json"
    summary_path.write_text(canonical_json(metrics.metrics_to_summary(result.metrics)))

    trace_path = outdir / "trace.csv"
    with trace_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "island", "tau", "mean_scores", "cumulative_hit_rate"])
        for row in result.trace:
            writer.writerow(
                [
                    row.iteration,
                    row.island,
                    repr(row.tau),
                    ";".join(repr(s) for s in row.mean_scores),
                    repr(row.cumulative_hit_rate),
                ]
            )
    return [candidates_path, pools_path, summary_path, trace_path]


def load_records(path: Path) -> list[CandidateRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(record_from_dict(json.loads(line)))
    return records
