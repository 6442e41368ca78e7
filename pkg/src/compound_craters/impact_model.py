"""Impact-data model and the CFI / JSON interchange formats.

An impact set holds, for each simulated ion impact, the initial and final
position of every target atom that matters for the crater function, the
species of each atom and whether it was sputtered.  Two encodings are
supported and are exact mirrors of each other:

``CFI`` (line oriented, UTF-8, ``#`` starts a comment)::

    CFI 1
    SPECIES Ga 0.0339 Sb 0.0339
    META ion "Ar"
    IMPACT 0 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0
    ATOM 1 Ga 0 0 0 0 0 5 S
    ATOM 2 Sb 0 0 -0.3 1 0 -0.3 R

``META`` lines are optional; the value is any JSON literal and runs to the
end of the line.

``JSON``::

    {"format": "CFI", "version": 1,
     "species": [{"label": "Ga", "atomic_volume": 0.0339}, ...],
     "metadata": {...},
     "impacts": [{"id": 0, "theta_deg": 0, "azimuth_deg": 0,
                  "impact_point": [0, 0], "cell": [10, 10], "surface_z": 0,
                  "atoms": [[1, "Ga", xI, yI, zI, xF, yF, zF, "S"], ...]}]}

Lengths are in nm, angles in degrees, atomic volumes in nm^3.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ImpactDataError

FORMATS = ("cfi", "json")

#: Atomic volume of GaSb (nm^3 per atom) from the zincblende lattice
#: constant 0.6096 nm: a^3 / 8.  Equivalent to a density of 5.61 g/cm^3.
GASB_ATOMIC_VOLUME = 0.6096**3 / 8

DEFAULT_SPUTTER_CUTOFF = 0.5


def _fmt(x):
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SpeciesId:
    label: str
    atomic_volume: float

    def __post_init__(self):
        if not self.label or any(ch.isspace() or ch == "#" for ch in self.label):
            raise ImpactDataError(f"invalid species label {self.label!r}")
        vol = float(self.atomic_volume)
        if not math.isfinite(vol) or vol <= 0:
            raise ImpactDataError(
                f"atomic volume of {self.label} must be positive, got {self.atomic_volume}"
            )
        object.__setattr__(self, "atomic_volume", vol)


@dataclass(frozen=True)
class AtomEvent:
    """Read-only view of one atom of an impact.

    ``species`` is the index (0 or 1) into the owning set's species pair.
    """

    atom_id: int
    species: int
    pos_initial: tuple
    pos_final: tuple
    sputtered: bool


def _frozen(arr, dtype, shape_tail=()):
    out = np.array(arr, dtype=dtype, copy=True)
    if shape_tail and out.size == 0:
        out = out.reshape((0,) + shape_tail)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ImpactRecord:
    """One ion impact with per-atom initial and final states.

    Atom data is stored column-wise in read-only numpy arrays; use
    :attr:`atoms` for per-atom views.
    """

    impact_id: int
    theta_deg: float
    azimuth_deg: float
    impact_point: np.ndarray
    cell: np.ndarray
    surface_z: float
    atom_ids: np.ndarray
    species: np.ndarray
    pos_initial: np.ndarray
    pos_final: np.ndarray
    sputtered: np.ndarray

    def __post_init__(self):
        rec = self.impact_id
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("impact_id", int(self.impact_id))
        for name in ("theta_deg", "azimuth_deg", "surface_z"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ImpactDataError(f"non-finite {name}", record=rec)
            set_(name, val)
        if not 0.0 <= self.theta_deg <= 90.0:
            raise ImpactDataError(
                f"theta={self.theta_deg} outside [0, 90] degrees", record=rec
            )
        set_("impact_point", _frozen(self.impact_point, float))
        set_("cell", _frozen(self.cell, float))
        if self.impact_point.shape != (2,) or not np.all(np.isfinite(self.impact_point)):
            raise ImpactDataError("impact point must be a finite 2-vector", record=rec)
        if self.cell.shape != (2,) or not np.all(np.isfinite(self.cell)) or np.any(self.cell <= 0):
            raise ImpactDataError("cell extents must be positive", record=rec)

        set_("atom_ids", _frozen(self.atom_ids, np.int64))
        set_("species", _frozen(self.species, np.int8))
        set_("pos_initial", _frozen(self.pos_initial, float, (3,)))
        set_("pos_final", _frozen(self.pos_final, float, (3,)))
        set_("sputtered", _frozen(self.sputtered, bool))
        n = self.atom_ids.shape[0]
        if n == 0:
            raise ImpactDataError("impact has no atoms", record=rec)
        if (
            self.atom_ids.shape != (n,)
            or self.species.shape != (n,)
            or self.sputtered.shape != (n,)
            or self.pos_initial.shape != (n, 3)
            or self.pos_final.shape != (n, 3)
        ):
            raise ImpactDataError("inconsistent atom array shapes", record=rec)
        if np.any((self.species != 0) & (self.species != 1)):
            raise ImpactDataError("species index must be 0 or 1", record=rec)
        if not (np.all(np.isfinite(self.pos_initial)) and np.all(np.isfinite(self.pos_final))):
            raise ImpactDataError("non-finite atom coordinate", record=rec)
        uniq, counts = np.unique(self.atom_ids, return_counts=True)
        if np.any(counts > 1):
            raise ImpactDataError(
                f"duplicate atom_id {int(uniq[counts > 1][0])}", record=rec
            )

    @property
    def n_atoms(self):
        return self.atom_ids.shape[0]

    @property
    def atoms(self):
        return tuple(
            AtomEvent(
                int(self.atom_ids[i]),
                int(self.species[i]),
                tuple(self.pos_initial[i]),
                tuple(self.pos_final[i]),
                bool(self.sputtered[i]),
            )
            for i in range(self.n_atoms)
        )

    def with_final_positions(self, pos_final):
        return replace(self, pos_final=pos_final)

    def __eq__(self, other):
        if not isinstance(other, ImpactRecord):
            return NotImplemented
        scalars = ("impact_id", "theta_deg", "azimuth_deg", "surface_z")
        arrays = ("impact_point", "cell", "atom_ids", "species",
                  "pos_initial", "pos_final", "sputtered")
        return all(getattr(self, s) == getattr(other, s) for s in scalars) and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ImpactSet:
    species: tuple
    impacts: tuple
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        species = tuple(self.species)
        if len(species) != 2:
            raise ImpactDataError(f"exactly two species required, got {len(species)}")
        if species[0].label == species[1].label:
            raise ImpactDataError(f"duplicate species label {species[0].label!r}")
        object.__setattr__(self, "species", species)
        impacts = tuple(self.impacts)
        seen = set()
        for imp in impacts:
            if imp.impact_id in seen:
                raise ImpactDataError("duplicate impact id", record=imp.impact_id)
            seen.add(imp.impact_id)
        object.__setattr__(self, "impacts", impacts)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def labels(self):
        return tuple(s.label for s in self.species)

    def angle_groups(self):
        """Impacts grouped by identical ``theta_deg``, groups and members sorted."""
        groups = {}
        for imp in self.impacts:
            groups.setdefault(imp.theta_deg, []).append(imp)
        return {
            theta: sorted(groups[theta], key=lambda r: r.impact_id)
            for theta in sorted(groups)
        }

    def __eq__(self, other):
        if not isinstance(other, ImpactSet):
            return NotImplemented
        return (
            self.species == other.species
            and self.metadata == other.metadata
            and len(self.impacts) == len(other.impacts)
            and all(a == b for a, b in zip(self.impacts, other.impacts))
        )

    __hash__ = None


def tag_sputtered(impact, cutoff=DEFAULT_SPUTTER_CUTOFF):
    """Flag atoms whose final height exceeds ``surface_z + cutoff`` as sputtered.

    Intended for MD output that lacks explicit sputter flags.  Existing
    flags are overwritten.
    """
    flags = impact.pos_final[:, 2] > impact.surface_z + cutoff
    return replace(impact, sputtered=flags)


# ---------------------------------------------------------------------------
# Parsing


def _parse_float(tok, what, line):
    try:
        val = float(tok)
    except ValueError:
        raise ImpactDataError(f"cannot parse {what} from {tok!r}", line=line) from None
    if not math.isfinite(val):
        raise ImpactDataError(f"non-finite {what}", line=line)
    return val


def _parse_int(tok, what, line):
    try:
        return int(tok)
    except ValueError:
        raise ImpactDataError(f"cannot parse {what} from {tok!r}", line=line) from None


def _keyed(tok, key, line):
    prefix = key + "="
    if not tok.startswith(prefix):
        raise ImpactDataError(f"expected '{prefix}...', got {tok!r}", line=line)
    return tok[len(prefix):]


class _ImpactBuilder:
    def __init__(self, header, line, label_index):
        self.header = header
        self.line = line
        self.label_index = label_index
        self.ids, self.species, self.pi, self.pf, self.sput = [], [], [], [], []
        self.id_lines = {}

    def add(self, atom_id, label, xi, xf, flag, line):
        if label not in self.label_index:
            raise ImpactDataError(f"unknown species label {label!r}", line=line,
                                  record=self.header["impact_id"])
        if atom_id in self.id_lines:
            raise ImpactDataError(
                f"duplicate atom_id {atom_id} (first seen on line {self.id_lines[atom_id]})",
                line=line, record=self.header["impact_id"],
            )
        if flag not in ("S", "R"):
            raise ImpactDataError(f"sputter flag must be S or R, got {flag!r}", line=line,
                                  record=self.header["impact_id"])
        self.id_lines[atom_id] = line
        self.ids.append(atom_id)
        self.species.append(self.label_index[label])
        self.pi.append(xi)
        self.pf.append(xf)
        self.sput.append(flag == "S")

    def build(self):
        if not self.ids:
            raise ImpactDataError("impact has no atoms", line=self.line,
                                  record=self.header["impact_id"])
        try:
            return ImpactRecord(
                atom_ids=self.ids, species=self.species, pos_initial=self.pi,
                pos_final=self.pf, sputtered=self.sput, **self.header,
            )
        except ImpactDataError as exc:
            raise ImpactDataError(str(exc), line=self.line) from None


def _parse_cfi(text):
    species = None
    metadata = {}
    impacts = []
    builder = None
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        # META values run to end of line so JSON strings may contain '#'.
        content = stripped if stripped.startswith("META ") else raw.split("#", 1)[0].strip()
        if not content:
            continue
        tok = content.split()
        kind = tok[0]
        if not seen_header:
            if tok != ["CFI", "1"]:
                raise ImpactDataError("malformed header, expected 'CFI 1'", line=lineno)
            seen_header = True
            continue
        if kind == "SPECIES":
            if species is not None:
                raise ImpactDataError("repeated SPECIES line", line=lineno)
            if len(tok) != 5:
                raise ImpactDataError("malformed SPECIES line", line=lineno)
            try:
                species = (
                    SpeciesId(tok[1], _parse_float(tok[2], "atomic volume", lineno)),
                    SpeciesId(tok[3], _parse_float(tok[4], "atomic volume", lineno)),
                )
            except ImpactDataError as exc:
                raise ImpactDataError(str(exc), line=lineno) from None
            if species[0].label == species[1].label:
                raise ImpactDataError("duplicate species label", line=lineno)
            label_index = {species[0].label: 0, species[1].label: 1}
            continue
        if species is None:
            raise ImpactDataError("malformed header, SPECIES line missing", line=lineno)
        if kind == "META":
            if builder is not None or impacts:
                raise ImpactDataError("META must precede the first IMPACT", line=lineno)
            parts = content.split(None, 2)
            if len(parts) != 3:
                raise ImpactDataError("malformed META line", line=lineno)
            try:
                metadata[parts[1]] = json.loads(parts[2])
            except json.JSONDecodeError:
                raise ImpactDataError("META value is not valid JSON", line=lineno) from None
        elif kind == "IMPACT":
            if builder is not None:
                impacts.append(builder.build())
            if len(tok) != 9:
                raise ImpactDataError("malformed IMPACT line", line=lineno)
            header = dict(
                impact_id=_parse_int(tok[1], "impact id", lineno),
                theta_deg=_parse_float(_keyed(tok[2], "theta", lineno), "theta", lineno),
                azimuth_deg=_parse_float(_keyed(tok[3], "azimuth", lineno), "azimuth", lineno),
                impact_point=(
                    _parse_float(_keyed(tok[4], "impact", lineno), "impact x", lineno),
                    _parse_float(tok[5], "impact y", lineno),
                ),
                cell=(
                    _parse_float(_keyed(tok[6], "cell", lineno), "cell Lx", lineno),
                    _parse_float(tok[7], "cell Ly", lineno),
                ),
                surface_z=_parse_float(_keyed(tok[8], "zsurf", lineno), "zsurf", lineno),
            )
            if not 0.0 <= header["theta_deg"] <= 90.0:
                raise ImpactDataError(
                    f"theta={header['theta_deg']} outside [0, 90] degrees",
                    line=lineno, record=header["impact_id"],
                )
            builder = _ImpactBuilder(header, lineno, label_index)
        elif kind == "ATOM":
            if builder is None:
                raise ImpactDataError("ATOM line before any IMPACT", line=lineno)
            if len(tok) != 10:
                raise ImpactDataError("malformed ATOM line", line=lineno)
            vals = [_parse_float(t, "coordinate", lineno) for t in tok[3:9]]
            builder.add(_parse_int(tok[1], "atom id", lineno), tok[2],
                        vals[:3], vals[3:], tok[9], lineno)
        else:
            raise ImpactDataError(f"unknown record type {kind!r}", line=lineno)
    if not seen_header:
        raise ImpactDataError("malformed header, empty input", line=1)
    if species is None:
        raise ImpactDataError("malformed header, SPECIES line missing")
    if builder is not None:
        impacts.append(builder.build())
    return ImpactSet(species=species, impacts=impacts, metadata=metadata)


def _parse_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ImpactDataError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != "CFI" or doc.get("version") != 1:
        raise ImpactDataError("malformed header, expected format 'CFI' version 1")
    try:
        species = tuple(SpeciesId(s["label"], s["atomic_volume"]) for s in doc["species"])
    except (KeyError, TypeError):
        raise ImpactDataError("malformed species list", record="species") from None
    if len(species) != 2 or species[0].label == species[1].label:
        raise ImpactDataError("exactly two distinct species required", record="species")
    label_index = {s.label: i for i, s in enumerate(species)}
    impacts = []
    for n, imp in enumerate(doc.get("impacts", [])):
        where = f"impacts[{n}]"
        try:
            header = dict(
                impact_id=int(imp["id"]),
                theta_deg=float(imp["theta_deg"]),
                azimuth_deg=float(imp["azimuth_deg"]),
                impact_point=[float(v) for v in imp["impact_point"]],
                cell=[float(v) for v in imp["cell"]],
                surface_z=float(imp["surface_z"]),
            )
            atoms = imp["atoms"]
        except (KeyError, TypeError, ValueError):
            raise ImpactDataError("malformed impact header", record=where) from None
        builder = _ImpactBuilder(header, None, label_index)
        for m, atom in enumerate(atoms):
            awhere = f"{where}.atoms[{m}]"
            if not isinstance(atom, list) or len(atom) != 9:
                raise ImpactDataError("malformed atom entry", record=awhere)
            try:
                coords = [float(v) for v in atom[2:8]]
                atom_id = int(atom[0])
            except (TypeError, ValueError):
                raise ImpactDataError("malformed atom entry", record=awhere) from None
            if not all(math.isfinite(v) for v in coords):
                raise ImpactDataError("non-finite coordinate", record=awhere)
            try:
                builder.add(atom_id, atom[1], coords[:3], coords[3:], atom[8], None)
            except ImpactDataError as exc:
                raise ImpactDataError(f"{exc}", record=awhere) from None
        try:
            impacts.append(builder.build())
        except ImpactDataError as exc:
            raise ImpactDataError(str(exc), record=where) from None
    return ImpactSet(species=species, impacts=impacts, metadata=doc.get("metadata", {}))


def parse_impact_set(source, format="cfi"):
    """Parse an impact set from bytes, text or a binary/text stream.

    Raises
    ------
    ImpactDataError
        On any malformed or invalid content; the error carries the line
        (CFI) or record path (JSON) where the problem was found.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError:
            raise ImpactDataError("input is not valid UTF-8") from None
    fmt = format.lower()
    if fmt == "cfi":
        return _parse_cfi(source)
    if fmt == "json":
        return _parse_json(source)
    raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")


# ---------------------------------------------------------------------------
# Writing


def _check_writable(impact_set):
    for imp in impact_set.impacts:
        if imp.n_atoms == 0:
            raise ImpactDataError("cannot serialize impact without atoms", record=imp.impact_id)


def _write_cfi(impact_set):
    out = io.StringIO()
    a, b = impact_set.species
    out.write("CFI 1\n")
    out.write(f"SPECIES {a.label} {_fmt(a.atomic_volume)} {b.label} {_fmt(b.atomic_volume)}\n")
    for key, value in impact_set.metadata.items():
        if not key or any(ch.isspace() or ch == "#" for ch in str(key)):
            raise ImpactDataError(f"metadata key {key!r} cannot be written to CFI")
        out.write(f"META {key} {json.dumps(value)}\n")
    labels = impact_set.labels
    for imp in impact_set.impacts:
        out.write(
            f"IMPACT {imp.impact_id} theta={_fmt(imp.theta_deg)} azimuth={_fmt(imp.azimuth_deg)}"
            f" impact={_fmt(imp.impact_point[0])} {_fmt(imp.impact_point[1])}"
            f" cell={_fmt(imp.cell[0])} {_fmt(imp.cell[1])} zsurf={_fmt(imp.surface_z)}\n"
        )
        for i in range(imp.n_atoms):
            coords = " ".join(_fmt(v) for v in (*imp.pos_initial[i], *imp.pos_final[i]))
            flag = "S" if imp.sputtered[i] else "R"
            out.write(f"ATOM {imp.atom_ids[i]} {labels[imp.species[i]]} {coords} {flag}\n")
    return out.getvalue()


def _write_json(impact_set):
    labels = impact_set.labels
    doc = {
        "format": "CFI",
        "version": 1,
        "species": [{"label": s.label, "atomic_volume": s.atomic_volume} for s in impact_set.species],
        "metadata": impact_set.metadata,
        "impacts": [
            {
                "id": imp.impact_id,
                "theta_deg": imp.theta_deg,
                "azimuth_deg": imp.azimuth_deg,
                "impact_point": imp.impact_point.tolist(),
                "cell": imp.cell.tolist(),
                "surface_z": imp.surface_z,
                "atoms": [
                    [int(imp.atom_ids[i]), labels[imp.species[i]],
                     *imp.pos_initial[i].tolist(), *imp.pos_final[i].tolist(),
                     "S" if imp.sputtered[i] else "R"]
                    for i in range(imp.n_atoms)
                ],
            }
            for imp in impact_set.impacts
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def write_impact_set(impact_set, format="cfi"):
    """Serialize to UTF-8 bytes.  ``parse_impact_set`` inverts this exactly."""
    _check_writable(impact_set)
    fmt = format.lower()
    if fmt == "cfi":
        return _write_cfi(impact_set).encode("utf-8")
    if fmt == "json":
        return _write_json(impact_set).encode("utf-8")
    raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")


def guess_format(path):
    return "json" if str(path).lower().endswith(".json") else "cfi"


def read_impact_set(path, format=None):
    with open(path, "rb") as fh:
        return parse_impact_set(fh, format or guess_format(path))


def save_impact_set(impact_set, path, format=None):
    data = write_impact_set(impact_set, format or guess_format(path))
    with open(path, "wb") as fh:
        fh.write(data)
