"""Candidate generators: LLM HTTP client with prompt builder, rule-based
mutator, and deterministic replay.

All generators share one outcome shape; structures they emit have already
passed crystal validation, and anything unparseable is collected as a
reject (payload + machine-readable reason) instead of being raised.
"""

from __future__ import annotations

import json
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import requests

from . import chem
from .crystal import Structure, candidate_from_generation
from .errors import (
    ExhaustedAttempts,
    GeneratorUnavailable,
    NoJsonFound,
    NoValidSubstitute,
    ValidationError,
)
from .oracle import PropertyVector
from .tasks import ScoreBreakdown, Task

DEFAULT_SAMPLING_TEMPERATURE = 0.8
DEFAULT_BATCH = 2
SUCCESS_PARENT_PROBABILITY = 0.8
MAX_ATTEMPT_FACTOR = 20


@dataclass(frozen=True)
class Demonstration:
    structure: Optional[Structure]  # None for unparseable failure exemplars
    score: ScoreBreakdown
    pool: str  # success | failure
    properties: Optional[PropertyVector] = None

    def __post_init__(self):
        if self.pool not in ("success", "failure"):
            raise ValueError(f"bad pool tag {self.pool!r}")
        if (self.pool == "success") != self.score.success:
            raise ValueError("pool tag contradicts score.success")


@dataclass(frozen=True)
class GenerationRequest:
    task: Task
    iteration: int
    demonstrations: tuple[Demonstration, ...] = ()
    rules: tuple[str, ...] = ()
    batch: int = DEFAULT_BATCH
    sampling_temperature: float = DEFAULT_SAMPLING_TEMPERATURE

    def __post_init__(self):
        object.__setattr__(self, "demonstrations", tuple(self.demonstrations))
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.iteration < 0 or self.batch < 1:
            raise ValueError("iteration must be >= 0 and batch >= 1")
        if (self.iteration == 0) != (len(self.rules) == 0):
            raise ValueError("rules must be empty exactly at iteration 0")


@dataclass
class GenerationOutcome:
    candidates: list[Structure] = field(default_factory=list)
    rejects: list[tuple[object, ValidationError]] = field(default_factory=list)
    transcript: Optional[str] = None


# ---------------------------------------------------------------------------
# Prompt construction and response parsing
# ---------------------------------------------------------------------------


def _render_demonstration(demo: Demonstration) -> str:
    if demo.structure is None:
        header = "- formula: (unparseable candidate)"
    else:
        header = f"- formula: {demo.structure.reduced_formula}"
    lines = [header]
    values = []
    for constraint, p in demo.score.per_constraint_phi:
        verdict = "satisfied" if p >= 0 else "violated"
        values.append(f"    {constraint.describe()}: {verdict} (phi={p:+.3f})")
        if demo.properties is not None and constraint.is_numeric:
            v = demo.properties.get(constraint.property)
            if v is not None:
                values[-1] += f" [value={v:g}]"
    lines.extend(values)
    lines.append(f"    composite score: {demo.score.composite:+.4f}")
    return "\n".join(lines)


def build_prompt(request: GenerationRequest) -> str:
    """Deterministic four-section generation prompt."""
    task = request.task
    sections = []

    lines = [
        "You are a computational materials scientist proposing new crystalline",
        "materials for a discovery campaign.",
        "",
        "## Objective",
        f"Task: {task.name}",
        task.description,
        "",
        "Every candidate must satisfy all of these property constraints:",
    ]
    lines.extend(f"- {c.describe()}" for c in task.constraints)
    sections.append("\n".join(lines))

    if request.rules:
        lines = [
            "## Design rules",
            "Derive new candidates by applying these transformation rules to the",
            "demonstrations below:",
        ]
        lines.extend(request.rules)
        sections.append("\n".join(lines))

    if request.demonstrations:
        successes = [d for d in request.demonstrations if d.pool == "success"]
        failures = [d for d in request.demonstrations if d.pool == "failure"]
        lines = ["## Demonstrations"]
        if successes:
            lines.append("Candidates that satisfied every constraint:")
            lines.extend(_render_demonstration(d) for d in successes)
        if failures:
            lines.append("Candidates that violated at least one constraint:")
            lines.extend(_render_demonstration(d) for d in failures)
        sections.append("\n".join(lines))

    lines = [
        "## Output format",
        f"Return a JSON array containing exactly {request.batch} candidate objects and",
        "nothing else. Each object must have this shape:",
        '{"formula": "<reduced formula>",',
        ' "lattice": {"a": <angstrom>, "b": <angstrom>, "c": <angstrom>,',
        '             "alpha": <degrees>, "beta": <degrees>, "gamma": <degrees>},',
        ' "sites": [{"element": "<symbol>", "frac": [<x>, <y>, <z>]}, ...]}',
        "Fractional coordinates must lie in [0, 1). List one site per atom in the",
        "unit cell.",
    ]
    sections.append("\n".join(lines))

    return "\n\n".join(sections) + "\n"


def _first_json_array(text: str):
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(text):
        if ch != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, idx)
        except ValueError:
            continue
        if isinstance(value, list):
            return value
    raise NoJsonFound("no JSON array found in model output")


def parse_candidates(model_text: str) -> GenerationOutcome:
    """Extract the first JSON array and validate each entry.

    Invalid entries become rejects with their validation reason; they are
    never raised.
    """
    payloads = _first_json_array(model_text)
    outcome = GenerationOutcome(transcript=model_text)
    for payload in payloads:
        try:
            outcome.candidates.append(candidate_from_generation(payload))
        except ValidationError as exc:
            outcome.rejects.append((payload, exc))
    return outcome


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class LlmGenerator:
    """Chat-completions client; one call per generation request."""

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: str = "gpt-4o-mini",
        retries: int = 2,
        backoff: float = 0.5,
        timeout: float = 60.0,
        session=None,
    ):
        self.base_url = (base_url or os.environ.get("LLEMA_LLM_BASE_URL", "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("LLEMA_LLM_API_KEY", "")
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()
        if not self.base_url:
            raise GeneratorUnavailable("no LLM endpoint configured (LLEMA_LLM_BASE_URL)")

    def generate(self, request: GenerationRequest) -> GenerationOutcome:
        prompt = build_prompt(request)
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.sampling_temperature,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self._session.post(
                    f"{self.base_url}/v1/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                return parse_candidates(content)
            except NoJsonFound:
                raise
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
        raise GeneratorUnavailable(f"LLM endpoint failed after {self.retries + 1} attempts: {last_error}")


def rule_based_generate(
    request: GenerationRequest,
    seed: int,
    cold_start: Sequence[Structure] = (),
) -> GenerationOutcome:
    """Mutate demonstration parents with the concrete rule set.

    Parents come from the request's demonstrations (success-pool parents
    preferred 4:1) or from `cold_start` when there are no demonstrations.
    Candidates are deduplicated on reduced formula within the call.
    """
    rng = random.Random(seed)
    success_parents = [d.structure for d in request.demonstrations
                       if d.pool == "success" and d.structure is not None]
    failure_parents = [d.structure for d in request.demonstrations
                       if d.pool == "failure" and d.structure is not None]
    if not success_parents and not failure_parents:
        success_parents = list(cold_start)
    if not success_parents and not failure_parents:
        raise ExhaustedAttempts("no parents available (no demonstrations or cold-start seeds)")

    concrete = sorted(chem.CONCRETE_RULES)
    outcome = GenerationOutcome()
    seen: set[str] = set()
    max_attempts = MAX_ATTEMPT_FACTOR * request.batch
    attempts = 0
    while len(outcome.candidates) < request.batch and attempts < max_attempts:
        attempts += 1
        if success_parents and (not failure_parents or rng.random() < SUCCESS_PARENT_PROBABILITY):
            parent = rng.choice(success_parents)
        else:
            parent = rng.choice(failure_parents)
        rule_id = rng.choice(concrete)
        try:
            mutants = chem.apply_rule(rule_id, parent, rng)
        except NoValidSubstitute:
            continue
        for mutant in mutants:
            if mutant.reduced_formula in seen:
                continue
            seen.add(mutant.reduced_formula)
            outcome.candidates.append(mutant)
            if len(outcome.candidates) >= request.batch:
                break
    if not outcome.candidates:
        raise ExhaustedAttempts(f"no valid mutants after {max_attempts} attempts")
    return outcome


class RuleBasedGenerator:
    """Stateful wrapper deriving one deterministic sub-seed per call."""

    def __init__(self, seed: int, cold_start: Sequence[Structure] = ()):
        self.seed = seed
        self.cold_start = tuple(cold_start)
        self._calls = 0

    def generate(self, request: GenerationRequest) -> GenerationOutcome:
        call_seed = (self.seed * 1_000_003 + self._calls) & 0x7FFFFFFF
        self._calls += 1
        return rule_based_generate(request, call_seed, self.cold_start)


class ReplayGenerator:
    """Deterministic playback of a JSONL file of generation payloads."""

    def __init__(self, path):
        self.path = Path(path)
        self._lines = self.path.read_text().splitlines()
        self.cursor = 0

    def generate(self, request: GenerationRequest) -> GenerationOutcome:
        outcome = GenerationOutcome()
        taken = 0
        while taken < request.batch and self.cursor < len(self._lines):
            raw = self._lines[self.cursor]
            self.cursor += 1
            if not raw.strip():
                continue
            taken += 1
            try:
                payload = json.loads(raw)
            except ValueError:
                outcome.rejects.append((raw, ValidationError("MalformedJson", raw[:80])))
                continue
            try:
                structure = candidate_from_generation(payload)
            except ValidationError as exc:
                outcome.rejects.append((payload, exc))
                continue
            outcome.candidates.append(
                Structure(lattice=structure.lattice, sites=structure.sites, source="replay")
            )
        return outcome
