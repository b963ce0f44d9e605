"""Periodic-table knowledge base and concrete composition-mutation operators.

The element table ships as a CSV resource (see ``data/periodic_table.csv``)
and can be overridden with :func:`load_table`. Mutation operators take an
explicit ``random.Random`` so callers own determinism.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING, Iterable, Optional

from .errors import NoValidSubstitute, PromptOnlyRule, UnknownElement

if TYPE_CHECKING:  # pragma: no cover
    from .crystal import Structure
    from .tasks import Task


@dataclass(frozen=True)
class ElementInfo:
    symbol: str
    atomic_number: int
    group: int  # 1..18; lanthanides/actinides carried as group 3
    period: int  # 1..7
    atomic_mass: float  # amu
    electronegativity: Optional[float]  # Pauling; None for He/Ne/Ar
    common_oxidation_states: tuple[int, ...]
    earth_abundant: bool
    toxic: bool


class PeriodicTable:
    """Immutable element lookup keyed by symbol, with a group index."""

    def __init__(self, elements: Iterable[ElementInfo]):
        self._by_symbol = {e.symbol: e for e in elements}
        self._by_group: dict[int, list[ElementInfo]] = {}
        for e in sorted(self._by_symbol.values(), key=lambda x: x.atomic_number):
            self._by_group.setdefault(e.group, []).append(e)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._by_symbol

    def __len__(self) -> int:
        return len(self._by_symbol)

    def symbols(self) -> list[str]:
        return sorted(self._by_symbol, key=lambda s: self._by_symbol[s].atomic_number)

    def get(self, symbol: str) -> ElementInfo:
        try:
            return self._by_symbol[symbol]
        except KeyError:
            raise UnknownElement(symbol) from None

    def group_members(self, group: int) -> list[ElementInfo]:
        return list(self._by_group.get(group, []))


def load_table(path: Optional[str] = None) -> PeriodicTable:
    """Load the element table from `path`, or the bundled resource."""
    if path is None:
        text = resources.files("llema").joinpath("data/periodic_table.csv").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    elements = []
    for row in csv.DictReader(lines):
        ox = tuple(int(tok) for tok in row["oxidation_states"].split(";") if tok)
        en = float(row["electronegativity"]) if row["electronegativity"] else None
        elements.append(
            ElementInfo(
                symbol=row["symbol"],
                atomic_number=int(row["atomic_number"]),
                group=int(row["group"]),
                period=int(row["period"]),
                atomic_mass=float(row["atomic_mass"]),
                electronegativity=en,
                common_oxidation_states=ox,
                earth_abundant=row["earth_abundant"] == "1",
                toxic=row["toxic"] == "1",
            )
        )
    return PeriodicTable(elements)


_DEFAULT_TABLE: Optional[PeriodicTable] = None


def default_table() -> PeriodicTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_table()
    return _DEFAULT_TABLE


def element_info(symbol: str, table: Optional[PeriodicTable] = None) -> ElementInfo:
    return (table or default_table()).get(symbol)


def is_known_element(symbol: str, table: Optional[PeriodicTable] = None) -> bool:
    return symbol in (table or default_table())


def atomic_mass(symbol: str, table: Optional[PeriodicTable] = None) -> float:
    return element_info(symbol, table).atomic_mass


def same_group_substitutes(symbol: str, table: Optional[PeriodicTable] = None) -> list[str]:
    """All other elements sharing the group, ordered by atomic number."""
    tbl = table or default_table()
    info = tbl.get(symbol)
    return [e.symbol for e in tbl.group_members(info.group) if e.symbol != symbol]


# ---------------------------------------------------------------------------
# Evolutionary generation rules
# ---------------------------------------------------------------------------

CONCRETE_RULES = frozenset({1, 2, 3, 6, 9, 13, 18, 19})


@dataclass(frozen=True)
class GenerationRule:
    id: int
    name: str
    concrete: bool
    text: str  # directive injected into generation prompts


# The 19 chemistry-informed design heuristics. Rules with purely
# compositional/ionic semantics are concrete operators; the rest are
# prompt-only guidance for an LLM generator.
RULES: tuple[GenerationRule, ...] = (
    GenerationRule(1, "same_group_substitution", True,
                   "Swap one or more elements for others from the same periodic group, "
                   "keeping every stoichiometric count unchanged."),
    GenerationRule(2, "stoichiometry_preserving_substitution", True,
                   "Keep the formula ratios fixed and replace elements with chemically "
                   "similar ones (same group, close electronegativity)."),
    GenerationRule(3, "oxidation_state_substitution", True,
                   "Replace an element with another that can adopt one of the same "
                   "common oxidation states, preserving charge balance."),
    GenerationRule(4, "functional_group_substitution", False,
                   "Exchange a functional group for another with comparable chemical "
                   "behavior."),
    GenerationRule(5, "motif_replacement", False,
                   "Replace a structural fragment with a different fragment that plays "
                   "the same structural role."),
    GenerationRule(6, "crystal_prototype_substitution", True,
                   "Keep the structural prototype (for example the ABX3 perovskite "
                   "pattern) and exchange the elements occupying its sites."),
    GenerationRule(7, "layered_intercalation", False,
                   "Insert guest atoms between the layers of a layered host structure."),
    GenerationRule(8, "coordination_geometry_mutation", False,
                   "Change the coordination number of ligands around a central atom."),
    GenerationRule(9, "redox_stoichiometry_variant", True,
                   "Shift the stoichiometry to an adjacent integer ratio to reflect a "
                   "different redox configuration (for example 2:3 to 3:4)."),
    GenerationRule(10, "structural_isomer_generation", False,
                   "Rearrange atomic connectivity while keeping the formula fixed."),
    GenerationRule(11, "group_based_recombination", False,
                   "Combine fragments taken from two known compounds into one candidate."),
    GenerationRule(12, "surface_functionalization", False,
                   "Attach functional groups to the surface of a known material."),
    GenerationRule(13, "template_guided_combinatorics", True,
                   "Keep a known formula template and fill each element slot with a "
                   "group-compatible pick."),
    GenerationRule(14, "inverse_property_conditioning", False,
                   "Propose compositions conditioned directly on the target property "
                   "values."),
    GenerationRule(15, "phase_diagram_extrapolation", False,
                   "Propose compounds lying between two known stable compositions."),
    GenerationRule(16, "retrosynthesis_forward_design", False,
                   "Suggest plausible products reachable from simple precursor phases."),
    GenerationRule(17, "functional_analog_discovery", False,
                   "Replace the compound with a different one known to serve the same "
                   "functional role."),
    GenerationRule(18, "size_compatible_substitution", True,
                   "Substitute an element only when the replacement is size-compatible "
                   "with the original site."),
    GenerationRule(19, "periodicity_preserving_analog", True,
                   "Swap elements for their nearest neighbors within the same group "
                   "(one period up or down), preserving periodic trends."),
)

RULES_BY_ID = {r.id: r for r in RULES}


def rule_texts(rule_ids: Optional[Iterable[int]] = None) -> list[str]:
    """Numbered rule directives for prompt injection (all 19 by default)."""
    ids = sorted(rule_ids) if rule_ids is not None else [r.id for r in RULES]
    return [f"{i}. {RULES_BY_ID[i].text}" for i in ids]


def _composition(parent: "Structure") -> dict[str, int]:
    counts: dict[str, int] = {}
    for site in parent.sites:
        counts[site.element] = counts.get(site.element, 0) + 1
    return counts


def _substitute_elements(parent: "Structure", mapping: dict[str, str]) -> "Structure":
    """Re-emit the parent with elements renamed per `mapping` (lattice kept)."""
    from .crystal import Site, Structure

    sites = tuple(
        Site(element=mapping.get(s.element, s.element), frac=s.frac) for s in parent.sites
    )
    return Structure(lattice=parent.lattice, sites=sites, source="generated")


def _grid_positions(n: int) -> list[tuple[float, float, float]]:
    """Deterministic fractional positions for n atoms on a cubic subgrid."""
    per_axis = 1
    while per_axis**3 < n:
        per_axis += 1
    positions = []
    for idx in range(n):
        i, rem = divmod(idx, per_axis * per_axis)
        j, k = divmod(rem, per_axis)
        positions.append(((i + 0.5) / per_axis, (j + 0.5) / per_axis, (k + 0.5) / per_axis))
    return positions


def structure_from_counts(counts: dict[str, int], lattice, source: str = "generated") -> "Structure":
    """Build a structure with the given composition on a deterministic site grid."""
    from .crystal import Site, Structure

    symbols: list[str] = []
    for sym in sorted(counts):
        symbols.extend([sym] * counts[sym])
    positions = _grid_positions(len(symbols))
    sites = tuple(Site(element=sym, frac=pos) for sym, pos in zip(symbols, positions))
    return Structure(lattice=lattice, sites=sites, source=source)


def _pick_mapping(
    counts: dict[str, int],
    neighborhoods: dict[str, list[str]],
    rng: random.Random,
    substitute_all: bool,
) -> Optional[dict[str, str]]:
    """Draw an injective element mapping that cannot merge distinct species.

    Returns None when no non-trivial mapping can be drawn from the given
    neighborhoods (callers turn that into an empty mutant list).
    """
    elements = sorted(counts)
    attemptable = [e for e in elements if neighborhoods.get(e)]
    if not attemptable:
        return None
    for _ in range(32):
        if substitute_all:
            chosen = list(attemptable)
        else:
            k = rng.randint(1, len(attemptable))
            chosen = rng.sample(attemptable, k)
        mapping: dict[str, str] = {}
        taken = set(elements) - set(chosen)
        ok = True
        for el in sorted(chosen):
            options = [c for c in neighborhoods[el] if c not in taken and c not in mapping.values()]
            if not options:
                ok = False
                break
            mapping[el] = rng.choice(options)
        if ok and any(mapping[e] != e for e in mapping):
            return {e: t for e, t in mapping.items() if t != e} or None
    return None


def _neighbors_same_group(sym: str, tbl: PeriodicTable) -> list[str]:
    return same_group_substitutes(sym, tbl)


def _neighbors_similar(sym: str, tbl: PeriodicTable) -> list[str]:
    # "chemically similar": same group and Pauling electronegativity within 0.5
    me = tbl.get(sym)
    if me.electronegativity is None:
        return []
    out = []
    for other in tbl.group_members(me.group):
        if other.symbol == sym or other.electronegativity is None:
            continue
        if abs(other.electronegativity - me.electronegativity) <= 0.5:
            out.append(other.symbol)
    return out


def _neighbors_shared_oxidation(sym: str, tbl: PeriodicTable) -> list[str]:
    me = tbl.get(sym)
    mine = set(me.common_oxidation_states)
    if not mine:
        return []
    return [
        e.symbol
        for e in (tbl.get(s) for s in tbl.symbols())
        if e.symbol != sym and mine & set(e.common_oxidation_states)
    ]


def _neighbors_period_adjacent(sym: str, tbl: PeriodicTable) -> list[str]:
    me = tbl.get(sym)
    return [
        e.symbol
        for e in tbl.group_members(me.group)
        if e.symbol != sym and abs(e.period - me.period) == 1
    ]


def _neighbors_mass_compatible(sym: str, tbl: PeriodicTable) -> list[str]:
    # Ionic-radius data is not bundled; a mass-ratio window stands in for the
    # size-compatibility gate.
    me = tbl.get(sym)
    out = []
    for s in tbl.symbols():
        if s == sym:
            continue
        ratio = tbl.get(s).atomic_mass / me.atomic_mass
        if 0.5 <= ratio <= 2.0:
            out.append(s)
    return out


def _anion_symbol(counts: dict[str, int], tbl: PeriodicTable) -> Optional[str]:
    """Most electronegative species with a negative common oxidation state."""
    candidates = [
        tbl.get(s)
        for s in counts
        if any(ox < 0 for ox in tbl.get(s).common_oxidation_states)
    ]
    if not candidates:
        return None
    return max(candidates, key=lambda e: (e.electronegativity or 0.0)).symbol


def apply_rule(
    rule_id: int,
    parent: "Structure",
    rng: random.Random,
    table: Optional[PeriodicTable] = None,
) -> list["Structure"]:
    """Apply one concrete generation rule to `parent`.

    Returns a list of 0 or 1 mutants. An empty list means the rule engaged
    with the parent but drew no valid substitution; NoValidSubstitute means
    the rule cannot engage with this parent at all.
    """
    rule = RULES_BY_ID.get(rule_id)
    if rule is None:
        raise KeyError(f"no rule {rule_id}")
    if not rule.concrete:
        raise PromptOnlyRule(f"rule {rule_id} ({rule.name}) is prompt-only")
    tbl = table or default_table()
    counts = _composition(parent)

    if rule_id in (1, 2, 3, 18, 19):
        neighbor_fn = {
            1: _neighbors_same_group,
            2: _neighbors_similar,
            3: _neighbors_shared_oxidation,
            18: _neighbors_mass_compatible,
            19: _neighbors_period_adjacent,
        }[rule_id]
        hoods = {el: neighbor_fn(el, tbl) for el in counts}
        if not any(hoods.values()):
            raise NoValidSubstitute(f"rule {rule_id}: no substitutable element in {sorted(counts)}")
        # rules 3 and 18 replace a single species; 1, 2, 19 may swap several
        single = rule_id in (3, 18)
        if single:
            attemptable = sorted(el for el in counts if hoods[el])
            el = rng.choice(attemptable)
            hoods = {el: hoods[el]}
        mapping = _pick_mapping(counts, hoods, rng, substitute_all=False)
        if mapping is None:
            return []
        return [_substitute_elements(parent, mapping)]

    if rule_id == 6:
        anion = _anion_symbol(counts, tbl)
        cations = sorted(el for el in counts if el != anion)
        if anion is None or not cations:
            raise NoValidSubstitute("rule 6: needs a cation/anion split")
        hoods = {el: _neighbors_same_group(el, tbl) for el in cations}
        attemptable = [el for el in cations if hoods[el]]
        if not attemptable:
            raise NoValidSubstitute("rule 6: no group neighbors for any cation")
        el = rng.choice(sorted(attemptable))
        mapping = _pick_mapping(counts, {el: hoods[el]}, rng, substitute_all=False)
        if mapping is None:
            return []
        return [_substitute_elements(parent, mapping)]

    if rule_id == 9:
        if len(counts) < 2:
            raise NoValidSubstitute("rule 9: needs at least two species")
        from .crystal import reduce_formula

        base = dict(counts)
        shifted = {el: n + 1 for el, n in base.items()}
        if reduce_formula(shifted) == reduce_formula(base):
            el = rng.choice(sorted(base))
            shifted = dict(base)
            shifted[el] += 1
        return [structure_from_counts(shifted, parent.lattice)]

    if rule_id == 13:
        hoods = {}
        for el in counts:
            info = tbl.get(el)
            hoods[el] = [e.symbol for e in tbl.group_members(info.group)]
        if not any(len(h) > 1 for h in hoods.values()):
            raise NoValidSubstitute("rule 13: no slot admits a group-compatible pick")
        mapping = _pick_mapping(
            counts,
            {el: [s for s in hood if s != el] for el, hood in hoods.items()},
            rng,
            substitute_all=True,
        )
        if mapping is None:
            return []
        return [_substitute_elements(parent, mapping)]

    raise AssertionError(f"unhandled concrete rule {rule_id}")


def composition_passes_filters(structure: "Structure", task: "Task") -> bool:
    """True iff every element-containment/exclusion filter in the task holds."""
    present = {site.element for site in structure.sites}
    for c in task.constraints:
        if c.kind == "contains_any" and not (present & set(c.elements)):
            return False
        if c.kind == "excludes" and (present & set(c.elements)):
            return False
    return True
