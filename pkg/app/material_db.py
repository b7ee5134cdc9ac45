"""
Catalog of candidate materials with tabulated complex refractive index n(λ) + ik(λ).

One plain-text file per material:

    # name=TiO2 category=Dielectric
    # optional comment lines
    250.0 2.05 1.25
    300.0 2.85 0.9

Wavelengths are in nm. Values are interpolated linearly in λ, separately for n and k,
and never extrapolated.
"""
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DISPERSION_SUFFIXES = (".nk", ".txt")
_HEADER_FIELD = re.compile(r"(\w+)=(\S+)")


class MaterialDataError(ValueError):
    """Invalid dispersion data. Carries the offending file and line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else Path(path)
        self.line = line
        location = ""
        if path is not None:
            location = f"{Path(path).name}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(location + message)


class DuplicateMaterialError(MaterialDataError):
    pass


class WavelengthRangeError(MaterialDataError):
    pass


class Category(str, Enum):
    METAL = "Metal"
    ALLOY = "Alloy"
    SEMICONDUCTOR = "Semiconductor"
    DIELECTRIC = "Dielectric"
    TRANSPARENT = "Transparent"
    OTHER = "Other"


@dataclass(frozen=True, eq=False)
class DispersionTable:
    wavelengths_nm: np.ndarray
    n: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        arrays = {}
        for field in ("wavelengths_nm", "n", "k"):
            values = np.array(getattr(self, field), dtype=float)
            if values.ndim != 1:
                raise MaterialDataError(f"{field} must be one-dimensional")
            values.setflags(write=False)
            arrays[field] = values
            object.__setattr__(self, field, values)

        wavelengths, n, k = arrays["wavelengths_nm"], arrays["n"], arrays["k"]
        if not (len(wavelengths) == len(n) == len(k)):
            raise MaterialDataError("wavelengths, n and k must have the same length")
        if len(wavelengths) < 2:
            raise MaterialDataError("at least two samples are required")
        if not np.all(np.isfinite(wavelengths)) or not np.all(np.isfinite(n)) or not np.all(np.isfinite(k)):
            raise MaterialDataError("non-finite value in table")
        if np.any(wavelengths <= 0):
            raise MaterialDataError("wavelengths must be positive")
        if np.any(np.diff(wavelengths) <= 0):
            raise MaterialDataError("wavelengths must be strictly increasing")
        if np.any(n <= 0):
            raise MaterialDataError("n must be positive")
        if np.any(k < 0):
            raise MaterialDataError("k must be non-negative (passive media only)")

    @property
    def span(self):
        return float(self.wavelengths_nm[0]), float(self.wavelengths_nm[-1])

    def __eq__(self, other):
        if not isinstance(other, DispersionTable):
            return NotImplemented
        return (
            np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
            and np.array_equal(self.n, other.n)
            and np.array_equal(self.k, other.k)
        )

    __hash__ = None


@dataclass(frozen=True)
class MaterialRecord:
    id: int
    name: str
    category: Category
    dispersion: DispersionTable

    def __post_init__(self):
        if not self.name:
            raise MaterialDataError("material name must be non-empty")
        object.__setattr__(self, "category", Category(self.category))


@dataclass(frozen=True)
class MaterialDb:
    records: tuple
    wavelength_support: tuple

    @classmethod
    def from_records(cls, records):
        records = tuple(sorted(records, key=lambda r: r.id))
        if not records:
            raise MaterialDataError("no materials found")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise MaterialDataError("material ids must be unique")
        seen = {}
        for record in records:
            if record.name in seen:
                raise DuplicateMaterialError(f"duplicate material name {record.name!r}")
            seen[record.name] = record.id
        low = max(r.dispersion.span[0] for r in records)
        high = min(r.dispersion.span[1] for r in records)
        if not low < high:
            raise MaterialDataError(f"materials share no common wavelength range (support [{low}, {high}] nm)")
        return cls(records=records, wavelength_support=(low, high))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def names(self):
        return [r.name for r in self.records]

    def by_id(self, material_id):
        for record in self.records:
            if record.id == material_id:
                return record
        raise KeyError(f"unknown material id {material_id}")

    def by_name(self, name):
        for record in self.records:
            if record.name == name:
                return record
        raise KeyError(f"unknown material {name!r}")

    def category_counts(self):
        counts = {}
        for record in self.records:
            counts[record.category.value] = counts.get(record.category.value, 0) + 1
        return dict(sorted(counts.items()))

    def covers(self, grid):
        grid = np.asarray(grid, dtype=float)
        if grid.size == 0:
            return True
        return self.wavelength_support[0] <= grid.min() and grid.max() <= self.wavelength_support[1]


def parse_dispersion_text(text, path=None):
    """
    Parse one dispersion file. Returns (name, category, DispersionTable).
    """
    lines = text.splitlines()
    if not lines or not lines[0].lstrip().startswith("#"):
        raise MaterialDataError("missing '# name=... category=...' header", path, 1)

    fields = dict(_HEADER_FIELD.findall(lines[0]))
    if "name" not in fields:
        raise MaterialDataError("header has no name=", path, 1)
    try:
        category = Category(fields.get("category", "Other"))
    except ValueError:
        raise MaterialDataError(f"unknown category {fields.get('category')!r}", path, 1) from None

    rows = []
    line_numbers = []
    for number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MaterialDataError(f"expected 'wavelength n k', got {line!r}", path, number)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise MaterialDataError(f"non-numeric value in {line!r}", path, number) from None
        line_numbers.append(number)

    if len(rows) < 2:
        raise MaterialDataError("at least two samples are required", path)

    data = np.array(rows)
    # Locate the first bad row so the message can name the line
    for i, (wavelength, n, k) in enumerate(data):
        problem = None
        if not np.isfinite([wavelength, n, k]).all():
            problem = "non-finite value"
        elif wavelength <= 0:
            problem = "wavelength must be positive"
        elif i > 0 and wavelength <= data[i - 1, 0]:
            problem = "wavelengths must be strictly increasing"
        elif n <= 0:
            problem = "n must be positive"
        elif k < 0:
            problem = "k must be non-negative"
        if problem:
            raise MaterialDataError(problem, path, line_numbers[i])

    return fields["name"], category, DispersionTable(data[:, 0], data[:, 1], data[:, 2])


def load_database(path) -> MaterialDb:
    directory = Path(path)
    if not directory.is_dir():
        raise MaterialDataError(f"catalog directory not found: {directory}")

    files = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix in DISPERSION_SUFFIXES and not p.name.startswith(".")
    )
    if not files:
        raise MaterialDataError(f"no materials found in {directory}")

    records = []
    names = {}
    for material_id, file in enumerate(files):
        name, category, table = parse_dispersion_text(file.read_text(), file)
        if name in names:
            raise DuplicateMaterialError(f"duplicate material name {name!r} (also in {names[name]})", file)
        names[name] = file.name
        records.append(MaterialRecord(material_id, name, category, table))

    db = MaterialDb.from_records(records)
    logger.info(
        "Loaded %d materials from %s, support [%g, %g] nm",
        len(db), directory, *db.wavelength_support,
    )
    return db


def format_dispersion(record: MaterialRecord) -> str:
    table = record.dispersion
    lines = [f"# name={record.name} category={record.category.value}"]
    for wavelength, n, k in zip(table.wavelengths_nm, table.n, table.k):
        lines.append(f"{float(wavelength)!r} {float(n)!r} {float(k)!r}")
    return "\n".join(lines) + "\n"


def save_database(db: MaterialDb, path):
    """
    Write one file per record. File names sort in id order, so loading the directory
    again reproduces the same ids.
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(max(db.ids))))
    for record in db:
        safe = re.sub(r"[^\w.+-]", "_", record.name)
        (directory / f"{record.id:0{width}d}_{safe}.nk").write_text(format_dispersion(record))
    return directory


def _check_range(record, wavelengths):
    low, high = record.dispersion.span
    bad = (wavelengths < low) | (wavelengths > high) | ~np.isfinite(wavelengths)
    if np.any(bad):
        first = float(wavelengths[np.argmax(bad)])
        raise WavelengthRangeError(
            f"wavelength {first:g} nm outside the table of {record.name} [{low:g}, {high:g}] nm"
        )


def refractive_index(record: MaterialRecord, wavelength_nm) -> complex:
    wavelength = np.array([wavelength_nm], dtype=float)
    _check_range(record, wavelength)
    table = record.dispersion
    n = np.interp(wavelength, table.wavelengths_nm, table.n)[0]
    k = np.interp(wavelength, table.wavelengths_nm, table.k)[0]
    return complex(n, k)


def resample(record: MaterialRecord, grid):
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        return np.empty(0), np.empty(0)
    _check_range(record, grid)
    table = record.dispersion
    return (
        np.interp(grid, table.wavelengths_nm, table.n),
        np.interp(grid, table.wavelengths_nm, table.k),
    )


def complex_index(record: MaterialRecord, grid):
    n, k = resample(record, grid)
    return n + 1j * k
