"""Crystal-structure data model, CIF serialization, structure-derived values.

Structures are immutable value objects: fractional coordinates are wrapped
into [0, 1) at construction and the reduced formula is always recomputed
from the sites, never trusted from input. The CIF dialect is deliberately
minimal: explicit sites only (P1), no symmetry expansion, unknown tags
ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import chem
from .errors import (
    DegenerateCell,
    EmptyComposition,
    InvalidLattice,
    MalformedNumber,
    MissingTag,
    UnknownElement,
    ValidationError,
)

# 1 amu in grams; with volumes in A^3 (1e-24 cm^3) the 1e-24 factors cancel,
# so density in g/cm^3 is sum(mass_amu) * AMU_TO_G_PER_A3 / volume_A3.
_AMU_OVER_A3 = 1.66053906660

_COORD_EPS = 1e-6  # coordinates this close to 1.0 snap to 0.0 (canonical form)


def _wrap_frac(x: float) -> float:
    w = x - math.floor(x)
    if w > 1.0 - _COORD_EPS:
        return 0.0
    return w


@dataclass(frozen=True)
class Lattice:
    """Cell lengths in angstroms and angles in degrees.

    Construction enforces positive lengths and angles in (0, 180);
    geometric realizability (positive volume argument) is checked by
    cell_volume and by the parse/candidate validators.
    """

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            if not getattr(self, name) > 0:
                raise InvalidLattice(f"cell length {name} must be positive")
        for name in ("alpha", "beta", "gamma"):
            ang = getattr(self, name)
            if not 0 < ang < 180:
                raise InvalidLattice(f"cell angle {name} must lie in (0, 180) degrees")


def _volume_argument(lattice: Lattice) -> float:
    ca = math.cos(math.radians(lattice.alpha))
    cb = math.cos(math.radians(lattice.beta))
    cg = math.cos(math.radians(lattice.gamma))
    return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg


def cell_volume(lattice: Lattice) -> float:
    """Triclinic cell volume in cubic angstroms."""
    arg = _volume_argument(lattice)
    if arg <= 0:
        raise DegenerateCell(
            f"angles ({lattice.alpha}, {lattice.beta}, {lattice.gamma}) do not close a cell"
        )
    return lattice.a * lattice.b * lattice.c * math.sqrt(arg)


def validate_lattice(lattice: Lattice) -> Lattice:
    """Full invariant check, mapping degenerate cells to InvalidLattice."""
    if _volume_argument(lattice) <= 0:
        raise InvalidLattice("angle combination encloses no volume")
    return lattice


@dataclass(frozen=True)
class Site:
    element: str
    frac: tuple[float, float, float]

    def __post_init__(self):
        if not chem.is_known_element(self.element):
            raise UnknownElement(self.element)
        wrapped = tuple(_wrap_frac(float(x)) for x in self.frac)
        object.__setattr__(self, "frac", wrapped)


@dataclass(frozen=True)
class Structure:
    lattice: Lattice
    sites: tuple[Site, ...]
    source: str = "generated"  # generated | reference | replay
    reduced_formula: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise EmptyComposition("structure needs at least one site")
        object.__setattr__(self, "reduced_formula", reduce_formula(self.composition()))

    def composition(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for site in self.sites:
            counts[site.element] = counts.get(site.element, 0) + 1
        return counts

    def elements(self) -> set[str]:
        return {site.element for site in self.sites}


def reduce_formula(composition: Mapping[str, int]) -> str:
    """Canonical reduced formula: counts over their GCD, alphabetical, O last."""
    if not composition:
        raise EmptyComposition("empty composition")
    for el, n in composition.items():
        if not (isinstance(n, int) and n > 0):
            raise ValueError(f"count for {el} must be a positive integer, got {n!r}")
    g = math.gcd(*composition.values())
    symbols = sorted(composition)
    if "O" in symbols:
        symbols.remove("O")
        symbols.append("O")
    parts = []
    for el in symbols:
        n = composition[el] // g
        parts.append(el if n == 1 else f"{el}{n}")
    return "".join(parts)


_FORMULA_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")


def parse_formula(formula: str) -> dict[str, int]:
    """Parse a plain formula string like 'BaTiO3' into element counts."""
    counts: dict[str, int] = {}
    pos = 0
    for m in _FORMULA_TOKEN.finditer(formula):
        if m.start() != pos:
            raise ValueError(f"cannot parse formula {formula!r}")
        pos = m.end()
        el, num = m.group(1), m.group(2)
        counts[el] = counts.get(el, 0) + (int(num) if num else 1)
    if pos != len(formula) or not counts:
        raise ValueError(f"cannot parse formula {formula!r}")
    return counts


def canonical_formula(formula: str) -> str:
    """Reduce an arbitrary formula string to the canonical convention."""
    return reduce_formula(parse_formula(formula))


def density(structure: Structure) -> float:
    """Mass density in g/cm^3 from site masses and the cell volume."""
    total_amu = sum(chem.atomic_mass(site.element) for site in structure.sites)
    return total_amu * _AMU_OVER_A3 / cell_volume(structure.lattice)


# ---------------------------------------------------------------------------
# CIF serialization
# ---------------------------------------------------------------------------

_CELL_TAGS = (
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
)

_SITE_COLUMNS = ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")

_LABEL_TRAIL = re.compile(r"[\d+\-]+$")


def _parse_number(token: str, line: str) -> float:
    # CIF numbers may carry a parenthesized uncertainty, e.g. 4.051(2)
    token = token.split("(")[0]
    try:
        return float(token)
    except ValueError:
        raise MalformedNumber(line) from None


def parse_cif(text: str) -> Structure:
    """Parse the minimal CIF dialect: cell tags plus one atom_site loop."""
    values: dict[str, str] = {}
    lines = text.splitlines()
    sites: list[Site] = []
    site_rows: list[tuple[str, list[str]]] = []
    headers: list[str] = []

    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith("#") or line.startswith("data_"):
            i += 1
            continue
        if line == "loop_":
            headers = []
            i += 1
            while i < len(lines) and lines[i].strip().startswith("_"):
                headers.append(lines[i].strip().split()[0])
                i += 1
            if not any(h.startswith("_atom_site") for h in headers):
                # skip an unrelated loop's data rows
                while i < len(lines):
                    row = lines[i].strip()
                    if not row or row.startswith("_") or row == "loop_" or row.startswith("data_"):
                        break
                    i += 1
                continue
            while i < len(lines):
                row = lines[i].strip()
                if not row or row.startswith("_") or row == "loop_" or row.startswith("data_") or row.startswith("#"):
                    break
                site_rows.append((lines[i], row.split()))
                i += 1
            continue
        if line.startswith("_"):
            parts = line.split(None, 1)
            if len(parts) == 2:
                values[parts[0]] = parts[1].strip()
            i += 1
            continue
        i += 1

    cell = []
    for tag in _CELL_TAGS:
        if tag not in values:
            raise MissingTag(tag)
        cell.append(_parse_number(values[tag], f"{tag} {values[tag]}"))
    lattice = validate_lattice(Lattice(*cell))

    if not site_rows:
        raise MissingTag("_atom_site_fract_x")
    col = {h: idx for idx, h in enumerate(headers)}
    for tag in _SITE_COLUMNS:
        if tag not in col:
            raise MissingTag(tag)
    if "_atom_site_type_symbol" in col:
        symbol_idx = col["_atom_site_type_symbol"]
    elif "_atom_site_label" in col:
        symbol_idx = col["_atom_site_label"]
    else:
        raise MissingTag("_atom_site_type_symbol")

    for raw, row in site_rows:
        if len(row) < len(headers):
            raise MalformedNumber(raw)
        symbol = _LABEL_TRAIL.sub("", row[symbol_idx])
        if not chem.is_known_element(symbol):
            raise UnknownElement(symbol)
        frac = tuple(_parse_number(row[col[tag]], raw) for tag in _SITE_COLUMNS)
        sites.append(Site(element=symbol, frac=frac))

    return Structure(lattice=lattice, sites=tuple(sites), source="reference")


def write_cif(structure: Structure) -> str:
    """Emit the tag set parse_cif reads; numbers carry 6 decimal places."""
    lat = structure.lattice
    out = [f"data_{structure.reduced_formula}"]
    for tag, value in zip(_CELL_TAGS, (lat.a, lat.b, lat.c, lat.alpha, lat.beta, lat.gamma)):
        out.append(f"{tag}   {value:.6f}")
    out.append("loop_")
    out.append(" _atom_site_type_symbol")
    out.append(" _atom_site_fract_x")
    out.append(" _atom_site_fract_y")
    out.append(" _atom_site_fract_z")
    for site in structure.sites:
        x, y, z = (_wrap_frac(round(v, 6)) for v in site.frac)
        out.append(f" {site.element} {x:.6f} {y:.6f} {z:.6f}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Generation payloads
# ---------------------------------------------------------------------------


def candidate_from_generation(record: Mapping) -> Structure:
    """Validate one generation payload into a Structure.

    Expected shape: {"formula": str, "lattice": {a,b,c,alpha,beta,gamma},
    "sites": [{"element": str, "frac": [x, y, z]}, ...]}. The declared
    formula is informational; the reduced formula is recomputed from sites.
    """
    if not isinstance(record, Mapping):
        raise ValidationError("MalformedPayload", "payload is not an object")
    lattice_spec = record.get("lattice")
    sites_spec = record.get("sites")
    if not isinstance(lattice_spec, Mapping):
        raise ValidationError("MissingField", "lattice")
    if not isinstance(sites_spec, Sequence) or isinstance(sites_spec, (str, bytes)):
        raise ValidationError("MissingField", "sites")

    def num(container: Mapping, key: str) -> float:
        if key not in container:
            raise ValidationError("MissingField", f"lattice.{key}")
        try:
            return float(container[key])
        except (TypeError, ValueError):
            raise ValidationError("MalformedNumber", f"lattice.{key}") from None

    try:
        lattice = validate_lattice(
            Lattice(
                a=num(lattice_spec, "a"),
                b=num(lattice_spec, "b"),
                c=num(lattice_spec, "c"),
                alpha=num(lattice_spec, "alpha"),
                beta=num(lattice_spec, "beta"),
                gamma=num(lattice_spec, "gamma"),
            )
        )
    except InvalidLattice as exc:
        raise ValidationError("InvalidLattice", str(exc)) from None

    sites = []
    for idx, entry in enumerate(sites_spec):
        if not isinstance(entry, Mapping):
            raise ValidationError("MalformedSite", f"sites[{idx}]")
        element = entry.get("element")
        frac = entry.get("frac")
        if not isinstance(element, str):
            raise ValidationError("MissingField", f"sites[{idx}].element")
        if not isinstance(frac, Sequence) or len(frac) != 3:
            raise ValidationError("MalformedSite", f"sites[{idx}].frac")
        try:
            coords = tuple(float(v) for v in frac)
        except (TypeError, ValueError):
            raise ValidationError("MalformedNumber", f"sites[{idx}].frac") from None
        try:
            sites.append(Site(element=element, frac=coords))
        except UnknownElement:
            raise ValidationError("UnknownElement", element) from None
    if not sites:
        raise ValidationError("EmptyComposition", "no sites in payload")

    return Structure(lattice=lattice, sites=tuple(sites), source="generated")


def generation_payload(structure: Structure) -> dict:
    """Inverse of candidate_from_generation (used by replay files and prompts)."""
    lat = structure.lattice
    return {
        "formula": structure.reduced_formula,
        "lattice": {
            "a": lat.a,
            "b": lat.b,
            "c": lat.c,
            "alpha": lat.alpha,
            "beta": lat.beta,
            "gamma": lat.gamma,
        },
        "sites": [{"element": s.element, "frac": list(s.frac)} for s in structure.sites],
    }
