"""Hierarchical property prediction.

Resolution order per property: exact reference lookup, similarity lookup,
structure-derived quantities, then the first capable surrogate; anything
left unresolved is recorded as missing. Every lookup and the synthetic
surrogate are deterministic, so prediction is reproducible given the same
database, surrogate list, and seeds.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import requests

from . import chem, crystal
from .crystal import Structure
from .errors import ZeroSeebeck

log = logging.getLogger("llema.oracle")

# Columns of the reference-database CSV, in file order.
DB_PROPERTIES = (
    "band_gap",
    "formation_energy",
    "energy_above_hull",
    "bulk_modulus",
    "shear_modulus",
    "dielectric_constant",
    "piezoelectric_coefficient",
    "seebeck",
    "power_factor",
)

SOURCES = ("reference", "derived", "surrogate", "missing")


@dataclass(frozen=True)
class PropertyValue:
    value: Optional[float]
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"bad source {self.source!r}")
        if (self.value is None) != (self.source == "missing"):
            raise ValueError("value must be None exactly for source='missing'")


class PropertyVector:
    """Per-property values with provenance tags; values-only via .get()."""

    def __init__(self, entries: Mapping[str, PropertyValue]):
        self._entries = dict(entries)

    def get(self, prop: str, default=None) -> Optional[float]:
        pv = self._entries.get(prop)
        return default if pv is None or pv.value is None else pv.value

    def source(self, prop: str) -> str:
        pv = self._entries.get(prop)
        return "missing" if pv is None else pv.source

    def properties(self) -> list[str]:
        return sorted(self._entries)

    def items(self):
        return self._entries.items()

    def as_dict(self) -> dict[str, dict]:
        return {
            prop: {"value": pv.value, "source": pv.source}
            for prop, pv in sorted(self._entries.items())
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping]) -> "PropertyVector":
        return cls(
            {prop: PropertyValue(entry["value"], entry["source"]) for prop, entry in data.items()}
        )

    def __eq__(self, other):
        return isinstance(other, PropertyVector) and self._entries == other._entries

    def __repr__(self):
        inner = ", ".join(f"{p}={pv.value}({pv.source})" for p, pv in sorted(self._entries.items()))
        return f"PropertyVector({inner})"


def anonymized_prototype(composition: Mapping[str, int]) -> str:
    """Stoichiometry pattern with element identity erased, e.g. ABC3 for BaTiO3."""
    g = math.gcd(*composition.values())
    counts = sorted(n // g for n in composition.values())
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    parts = []
    for slot, n in enumerate(counts):
        letter = letters[slot % 26] * (slot // 26 + 1)
        parts.append(letter if n == 1 else f"{letter}{n}")
    return "".join(parts)


class ReferenceDB:
    """Curated property fragments keyed by canonical reduced formula."""

    def __init__(self, fragments: Mapping[str, Mapping[str, float]]):
        self._by_formula: dict[str, dict[str, float]] = {}
        self._by_signature: dict[tuple[frozenset, str], list[str]] = {}
        for formula, fragment in fragments.items():
            canon = crystal.canonical_formula(formula)
            self._by_formula[canon] = dict(fragment)
            counts = crystal.parse_formula(canon)
            signature = (frozenset(counts), anonymized_prototype(counts))
            self._by_signature.setdefault(signature, []).append(canon)
        for bucket in self._by_signature.values():
            bucket.sort()

    def __len__(self) -> int:
        return len(self._by_formula)

    def __contains__(self, formula: str) -> bool:
        try:
            return crystal.canonical_formula(formula) in self._by_formula
        except ValueError:
            return False

    def formulas(self) -> list[str]:
        return sorted(self._by_formula)

    def fragment(self, canonical: str) -> Optional[dict[str, float]]:
        return self._by_formula.get(canonical)

    def signature_bucket(self, signature) -> list[str]:
        return list(self._by_signature.get(signature, ()))

    @classmethod
    def from_csv_text(cls, text: str) -> "ReferenceDB":
        fragments: dict[str, dict[str, float]] = {}
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        for row in csv.DictReader(rows):
            fragment = {
                prop: float(row[prop])
                for prop in DB_PROPERTIES
                if row.get(prop) not in (None, "")
            }
            fragments[row["formula"]] = fragment
        return cls(fragments)

    @classmethod
    def from_csv(cls, path: Path) -> "ReferenceDB":
        return cls.from_csv_text(Path(path).read_text())

    @classmethod
    def bundled_fixture(cls) -> "ReferenceDB":
        text = resources.files("llema").joinpath("data/reference_db.csv").read_text()
        return cls.from_csv_text(text)


def lookup_exact(db: ReferenceDB, formula: str) -> Optional[dict[str, float]]:
    """Fragment for the formula (canonicalized first), or None."""
    try:
        canon = crystal.canonical_formula(formula)
    except ValueError:
        return None
    return db.fragment(canon)


def lookup_similar(db: ReferenceDB, structure: Structure) -> Optional[dict[str, float]]:
    """Fragment from an entry with the same element set and stoichiometry
    pattern; ties go to the lexicographically smallest formula."""
    counts = structure.composition()
    signature = (frozenset(counts), anonymized_prototype(counts))
    bucket = db.signature_bucket(signature)
    if not bucket:
        return None
    return db.fragment(bucket[0])


def conductivity_from(seebeck: float, power_factor: float) -> float:
    """Electrical conductivity in S/cm from the Seebeck coefficient (uV/K)
    and power factor (W m^-1 K^-2): sigma = PF / S^2 in SI, reported in S/cm."""
    if seebeck == 0:
        raise ZeroSeebeck("conductivity undefined at zero Seebeck coefficient")
    # PF / (S * 1e-6)^2 gives S/m; dividing by 100 gives S/cm. Folding the
    # conversion constants keeps the arithmetic exact for round decimals.
    return power_factor * 1e10 / (seebeck * seebeck)


# ---------------------------------------------------------------------------
# Surrogates
# ---------------------------------------------------------------------------

# Plausible output window per property for the synthetic surrogate. These are
# test-scale stand-in ranges, not physics.
SYNTHETIC_RANGES: dict[str, tuple[float, float]] = {
    "band_gap": (0.0, 8.0),
    "formation_energy": (-4.0, 1.0),
    "energy_above_hull": (0.0, 0.5),
    "bulk_modulus": (10.0, 500.0),
    "shear_modulus": (10.0, 500.0),
    "dielectric_constant": (1.0, 100.0),
    "piezoelectric_coefficient": (0.0, 20.0),
    "seebeck": (-300.0, 300.0),
    "power_factor": (1e-5, 5e-3),
}


def _unit_hash(*parts) -> float:
    digest = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


class SyntheticSurrogate:
    """Deterministic composition-descriptor surrogate.

    Maps (mass-weighted mean electronegativity, mean group, mean period,
    density, seeded composition hash) through a fixed bounded-weight sigmoid
    into each property's plausible window, so outputs are smooth in the
    descriptor and always in range.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._weights: dict[str, tuple[tuple[float, ...], float]] = {}
        for prop in SYNTHETIC_RANGES:
            w = tuple(
                4.0 * _unit_hash(seed, prop, f"w{i}") - 2.0 for i in range(5)
            )  # each weight in [-2, 2]
            b = 2.0 * _unit_hash(seed, prop, "b") - 1.0
            self._weights[prop] = (w, b)

    def capabilities(self) -> set[str]:
        return set(SYNTHETIC_RANGES)

    def _descriptor(self, structure: Structure) -> tuple[float, ...]:
        infos = [chem.element_info(s.element) for s in structure.sites]
        total_mass = sum(i.atomic_mass for i in infos)
        en = sum(i.atomic_mass * (i.electronegativity or 0.0) for i in infos) / total_mass
        group = sum(i.group for i in infos) / len(infos)
        period = sum(i.period for i in infos) / len(infos)
        try:
            rho = crystal.density(structure)
        except Exception:
            rho = 0.0
        jitter = _unit_hash(self.seed, structure.reduced_formula)
        # normalize each component to roughly [0, 1]
        return (en / 4.0, group / 18.0, period / 7.0, min(rho, 25.0) / 25.0, jitter)

    def predict(self, structure: Structure, prop: str) -> float:
        lo, hi = SYNTHETIC_RANGES[prop]
        w, b = self._weights[prop]
        z = self._descriptor(structure)
        activation = sum(wi * zi for wi, zi in zip(w, z)) + b
        return lo + (hi - lo) / (1.0 + math.exp(-activation))


class RemoteSurrogate:
    """HTTP surrogate: POST {base}/predict with a CIF payload."""

    def __init__(self, base_url: str, properties: Optional[Iterable[str]] = None,
                 timeout: float = 10.0, session=None):
        self.base_url = base_url.rstrip("/")
        self._capabilities = set(properties) if properties else set(SYNTHETIC_RANGES)
        self.timeout = timeout
        self._session = session or requests.Session()

    def capabilities(self) -> set[str]:
        return set(self._capabilities)

    def predict(self, structure: Structure, prop: str) -> float:
        body = {"cif": crystal.write_cif(structure), "properties": [prop]}
        response = self._session.post(f"{self.base_url}/predict", json=body, timeout=self.timeout)
        response.raise_for_status()
        return float(response.json()["values"][prop])


def remote_surrogate_from_env() -> Optional[RemoteSurrogate]:
    url = os.environ.get("LLEMA_SURROGATE_URL")
    return RemoteSurrogate(url) if url else None


class RemoteReferenceClient:
    """Optional remote reference source: GET {base}/materials?formula=F.

    Transport failures degrade to the local database: fetch returns None
    after the retry budget instead of raising.
    """

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 10.0,
                 retries: int = 2, session=None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def fetch(self, formula: str) -> Optional[dict[str, float]]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        for attempt in range(self.retries + 1):
            try:
                response = self._session.get(
                    f"{self.base_url}/materials",
                    params={"formula": formula},
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                payload = response.json()
                return {
                    prop: float(payload[prop])
                    for prop in DB_PROPERTIES
                    if payload.get(prop) is not None
                }
            except (requests.RequestException, ValueError, KeyError) as exc:
                log.warning("remote reference fetch failed (attempt %d): %s", attempt + 1, exc)
        return None


def remote_reference_from_env() -> Optional[RemoteReferenceClient]:
    base = os.environ.get("LLEMA_MP_BASE_URL")
    if not base:
        return None
    return RemoteReferenceClient(base, api_key=os.environ.get("LLEMA_MP_API_KEY", ""))


# ---------------------------------------------------------------------------
# Hierarchical prediction
# ---------------------------------------------------------------------------


@dataclass
class Oracle:
    """Wiring of the hierarchy: local database, optional remote reference,
    and an ordered surrogate list."""

    db: ReferenceDB
    surrogates: Sequence = ()
    remote: Optional[RemoteReferenceClient] = None
    _remote_cache: dict = field(default_factory=dict, repr=False)

    def _reference_layers(self, structure: Structure) -> list[dict[str, float]]:
        """Reference fragments in precedence order: exact, remote, similar."""
        layers = []
        exact = lookup_exact(self.db, structure.reduced_formula)
        if exact:
            layers.append(exact)
        if self.remote is not None and not exact:
            formula = structure.reduced_formula
            if formula not in self._remote_cache:
                self._remote_cache[formula] = self.remote.fetch(formula)
            if self._remote_cache[formula]:
                layers.append(self._remote_cache[formula])
        similar = lookup_similar(self.db, structure)
        if similar is not None and similar is not exact:
            layers.append(similar)
        return layers

    def _surrogate_value(self, structure: Structure, prop: str) -> Optional[float]:
        for surrogate in self.surrogates:
            if prop not in surrogate.capabilities():
                continue
            try:
                return float(surrogate.predict(structure, prop))
            except Exception as exc:
                log.warning("surrogate %s failed for %s/%s: %s",
                            type(surrogate).__name__, structure.reduced_formula, prop, exc)
        return None

    def predict(self, structure: Structure, needed: Iterable[str]) -> PropertyVector:
        """Resolve each needed property through the hierarchy.

        Density is always included with source=derived; electrical
        conductivity is derived from the Seebeck coefficient and power
        factor when both resolve.
        """
        layers = self._reference_layers(structure)
        entries: dict[str, PropertyValue] = {}

        def reference_value(prop: str) -> Optional[float]:
            for layer in layers:
                if prop in layer:
                    return layer[prop]
            return None

        def resolve_component(prop: str) -> Optional[float]:
            value = reference_value(prop)
            if value is not None:
                return value
            return self._surrogate_value(structure, prop)

        wanted = set(needed) | {"density"}
        for prop in sorted(wanted):
            if prop == "density":
                try:
                    entries[prop] = PropertyValue(crystal.density(structure), "derived")
                except Exception:
                    entries[prop] = PropertyValue(None, "missing")
                continue
            value = reference_value(prop)
            if value is not None:
                entries[prop] = PropertyValue(value, "reference")
                continue
            if prop == "electrical_conductivity":
                seebeck = resolve_component("seebeck")
                power_factor = resolve_component("power_factor")
                if seebeck is not None and power_factor is not None and seebeck != 0:
                    entries[prop] = PropertyValue(conductivity_from(seebeck, power_factor), "derived")
                    continue
                entries[prop] = PropertyValue(None, "missing")
                continue
            value = self._surrogate_value(structure, prop)
            if value is not None:
                entries[prop] = PropertyValue(value, "surrogate")
            else:
                entries[prop] = PropertyValue(None, "missing")
        return PropertyVector(entries)


def predict(
    structure: Structure,
    needed: Iterable[str],
    db: ReferenceDB,
    surrogates: Sequence = (),
    remote: Optional[RemoteReferenceClient] = None,
) -> PropertyVector:
    """Functional form of Oracle.predict for one-off calls."""
    return Oracle(db=db, surrogates=surrogates, remote=remote).predict(structure, needed)
