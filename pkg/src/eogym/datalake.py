"""Metadata index over the multimodal data lake.

The index is built once from a line-delimited JSON manifest and is read-only
afterwards. Lookups (temporal neighbours, nearest geolocated record, band
folders, optical/SAR companions) are plain in-memory scans.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0088

MODALITIES = ("optical_rgb", "sar", "multispectral_scene")


class DataLakeError(Exception):
    """Base class for index errors."""


class ManifestError(DataLakeError):
    """The manifest could not be read or parsed."""


class IndexBuildError(DataLakeError):
    """Raised by strict builds when any record violates an invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.record_id}: {v.code}" for v in self.violations[:10])
        super().__init__(f"{len(self.violations)} manifest violation(s): {lines}")


class UnknownRecordError(DataLakeError, KeyError):
    pass


class NoTemporalGroupError(DataLakeError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_deg <= 90.0) or not (-180.0 <= self.lon_deg <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat_deg}, {self.lon_deg})")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius ``EARTH_RADIUS_KM``."""
    for p in (a, b):
        if not isinstance(p, GeoPoint):
            raise TypeError("haversine_km expects GeoPoint arguments")
    phi1, phi2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon_deg - a.lon_deg)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class DataLakeRecord:
    record_id: str
    modality: str
    path: str
    sensor: str = ""
    location: GeoPoint | None = None
    capture_time: datetime | None = None
    gsd_m: float | None = None
    sequence_id: str | None = None
    frame_index: int | None = None
    companion_id: str | None = None
    base_image_id: str | None = None
    base_offset: tuple[int, int] | None = None
    band_files: tuple[tuple[str, str], ...] = ()

    @property
    def order_key(self):
        return (self.capture_time, -1 if self.frame_index is None else self.frame_index)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "record_id": self.record_id,
            "modality": self.modality,
            "path": self.path,
            "sensor": self.sensor,
        }
        if self.location is not None:
            d["location"] = {"lat_deg": self.location.lat_deg, "lon_deg": self.location.lon_deg}
        if self.capture_time is not None:
            d["capture_time"] = format_time(self.capture_time)
        for name in ("gsd_m", "sequence_id", "frame_index", "companion_id", "base_image_id"):
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        if self.base_offset is not None:
            d["base_offset"] = list(self.base_offset)
        if self.band_files:
            d["band_files"] = [list(b) for b in self.band_files]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DataLakeRecord":
        loc = d.get("location")
        if isinstance(loc, Mapping):
            location = GeoPoint(float(loc["lat_deg"]), float(loc["lon_deg"]))
        elif loc is None:
            location = None
        else:
            location = GeoPoint(float(loc[0]), float(loc[1]))
        ts = d.get("capture_time")
        offset = d.get("base_offset")
        gsd = d.get("gsd_m")
        return cls(
            record_id=str(d["record_id"]),
            modality=str(d["modality"]),
            path=str(d.get("path", "")),
            sensor=str(d.get("sensor", "")),
            location=location,
            capture_time=parse_time(ts) if ts else None,
            gsd_m=float(gsd) if gsd is not None else None,
            sequence_id=d.get("sequence_id"),
            frame_index=d.get("frame_index"),
            companion_id=d.get("companion_id"),
            base_image_id=d.get("base_image_id"),
            base_offset=(int(offset[0]), int(offset[1])) if offset is not None else None,
            band_files=tuple((str(n), str(p)) for n, p in d.get("band_files") or ()),
        )


def parse_time(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_time(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Violation:
    record_id: str
    code: str
    detail: str = ""


def _location_key(p: GeoPoint) -> tuple[float, float]:
    return (round(p.lat_deg, 6), round(p.lon_deg, 6))


class DataLakeIndex:
    """Immutable, queryable view over validated records."""

    def __init__(self, records: Iterable[DataLakeRecord], root: Path | None = None,
                 violations: Sequence[Violation] = ()):
        recs = {r.record_id: r for r in records}
        self._records = MappingProxyType(recs)
        self.root = Path(root) if root is not None else None
        self.violations = tuple(violations)
        groups: dict[tuple, list[DataLakeRecord]] = defaultdict(list)
        for r in recs.values():
            key = self._group_key(r)
            if key is not None:
                groups[key].append(r)
        self._groups = MappingProxyType(
            {k: tuple(sorted(v, key=lambda r: r.order_key)) for k, v in groups.items()}
        )

    @staticmethod
    def _group_key(r: DataLakeRecord):
        if r.sequence_id is not None:
            return ("seq", r.sequence_id)
        if r.modality == "multispectral_scene" and r.location is not None:
            return ("loc",) + _location_key(r.location)
        return None

    def __len__(self):
        return len(self._records)

    def __contains__(self, record_id):
        return record_id in self._records

    def __iter__(self):
        return iter(sorted(self._records))

    @property
    def records(self) -> Mapping[str, DataLakeRecord]:
        return self._records

    def get(self, record_id: str) -> DataLakeRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise UnknownRecordError(record_id) from None

    def counts(self) -> dict[str, int]:
        c = Counter(r.modality for r in self._records.values())
        return {
            "optical": c.get("optical_rgb", 0),
            "sar": c.get("sar", 0),
            "scenes": c.get("multispectral_scene", 0),
        }

    def resolve_path(self, relpath: str) -> Path:
        return (self.root / relpath) if self.root is not None else Path(relpath)

    def group_of(self, record_id: str) -> tuple[DataLakeRecord, ...] | None:
        key = self._group_key(self.get(record_id))
        return self._groups.get(key) if key is not None else None


def _validate(records: list[DataLakeRecord]) -> tuple[list[DataLakeRecord], list[Violation]]:
    violations: list[Violation] = []
    rejected: set[int] = set()  # positions in `records`

    seen: dict[str, int] = {}
    for i, r in enumerate(records):
        if r.record_id in seen:
            violations.append(Violation(r.record_id, "duplicate-record-id"))
            rejected.add(i)
            continue
        seen[r.record_id] = i
        if r.modality not in MODALITIES:
            violations.append(Violation(r.record_id, "unknown-modality", r.modality))
            rejected.add(i)
        elif r.modality == "multispectral_scene" and not r.band_files:
            violations.append(Violation(r.record_id, "missing-band-files"))
            rejected.add(i)
        elif r.modality != "multispectral_scene" and r.band_files:
            violations.append(Violation(r.record_id, "unexpected-band-files"))
            rejected.add(i)
        elif r.gsd_m is not None and not r.gsd_m > 0:
            violations.append(Violation(r.record_id, "non-positive-gsd"))
            rejected.add(i)

    live = {r.record_id: r for i, r in enumerate(records) if i not in rejected}

    # Companion links must be symmetric and cross-modal; repeat until stable
    # because rejecting one side can orphan the other.
    changed = True
    while changed:
        changed = False
        for rid in sorted(live):
            r = live[rid]
            if r.companion_id is None:
                continue
            partner = live.get(r.companion_id)
            if partner is None:
                code = "dangling-companion"
            elif partner.companion_id != rid:
                code = "asymmetric-companion"
            elif {r.modality, partner.modality} != {"optical_rgb", "sar"}:
                code = "companion-modality"
            else:
                continue
            violations.append(Violation(rid, code, f"companion_id={r.companion_id}"))
            del live[rid]
            changed = True

    for rid in sorted(live):
        r = live[rid]
        if r.base_image_id is not None and r.base_image_id not in live:
            violations.append(Violation(rid, "dangling-base-image", r.base_image_id))
            del live[rid]

    by_seq: dict[str, list[DataLakeRecord]] = defaultdict(list)
    for r in live.values():
        if r.sequence_id is not None:
            by_seq[r.sequence_id].append(r)
    for seq, members in sorted(by_seq.items()):
        for r in members:
            if r.capture_time is None:
                violations.append(Violation(r.record_id, "sequence-missing-time", seq))
                del live[r.record_id]
        keys = Counter(r.order_key for r in members if r.record_id in live)
        for r in sorted(members, key=lambda r: r.record_id):
            if r.record_id in live and keys[r.order_key] > 1:
                violations.append(Violation(r.record_id, "duplicate-sequence-order", seq))
                del live[r.record_id]

    # Unsequenced scenes grouped by location need distinct capture times too.
    by_loc: dict[tuple, list[DataLakeRecord]] = defaultdict(list)
    for r in live.values():
        if r.sequence_id is None and r.modality == "multispectral_scene" and r.location is not None:
            by_loc[_location_key(r.location)].append(r)
    for loc, members in sorted(by_loc.items()):
        keys = Counter(r.order_key for r in members)
        for r in sorted(members, key=lambda r: r.record_id):
            if r.capture_time is None or keys[r.order_key] > 1:
                violations.append(Violation(r.record_id, "duplicate-location-order", str(loc)))
                del live[r.record_id]

    kept = [r for r in records if live.get(r.record_id) is r]
    return kept, violations


def read_manifest(manifest_path: str | Path) -> list[DataLakeRecord]:
    path = Path(manifest_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            records.append(DataLakeRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_manifest(records: Iterable[DataLakeRecord], manifest_path: str | Path) -> None:
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def build_index(manifest_path: str | Path, root: str | Path | None = None,
                strict: bool = False) -> DataLakeIndex:
    """Read and validate a manifest.

    Offending records are dropped and listed in ``index.violations``. With
    ``strict=True`` any violation raises :class:`IndexBuildError` instead.
    Paths resolve against ``root``, defaulting to the manifest's directory.
    """
    records = read_manifest(manifest_path)
    kept, violations = _validate(records)
    if strict and violations:
        raise IndexBuildError(violations)
    root = Path(root) if root is not None else Path(manifest_path).resolve().parent
    return DataLakeIndex(kept, root=root, violations=violations)


def index_from_records(records: Iterable[DataLakeRecord], root=None) -> DataLakeIndex:
    kept, violations = _validate(list(records))
    return DataLakeIndex(kept, root=root, violations=violations)


def temporal_list(index: DataLakeIndex, record_id: str) -> list[DataLakeRecord]:
    group = index.group_of(record_id)
    if group is None:
        return [index.get(record_id)]
    return list(group)


def temporal_neighbor(index: DataLakeIndex, record_id: str, direction: str) -> DataLakeRecord | None:
    if direction not in ("previous", "next"):
        raise ValueError(f"direction must be 'previous' or 'next', got {direction!r}")
    group = index.group_of(record_id)
    if group is None:
        raise NoTemporalGroupError(record_id)
    pos = [r.record_id for r in group].index(record_id)
    j = pos - 1 if direction == "previous" else pos + 1
    if 0 <= j < len(group):
        return group[j]
    return None


def nearest_record(index: DataLakeIndex, point: GeoPoint, modalities: Iterable[str] | None = None,
                   candidates: Iterable[str] | None = None) -> tuple[DataLakeRecord, float] | None:
    """Closest geolocated record to ``point``; ties go to the smaller record_id."""
    allowed = set(modalities) if modalities is not None else None
    ids = sorted(candidates) if candidates is not None else sorted(index.records)
    best = None
    for rid in ids:
        r = index.get(rid)
        if r.location is None or (allowed is not None and r.modality not in allowed):
            continue
        d = haversine_km(point, r.location)
        if best is None or d < best[1]:
            best = (r, d)
    return best


def companion(index: DataLakeIndex, record_id: str) -> DataLakeRecord | None:
    r = index.get(record_id)
    if r.companion_id is None:
        return None
    return index.records.get(r.companion_id)


@dataclass(frozen=True)
class LeakageAudit:
    n_train: int
    n_test: int
    median_km: float
    p90_km: float
    frac_within_1km: float
    distances_km: tuple[float, ...] = field(repr=False, default=())


def leakage_audit(index: DataLakeIndex, train_ids: Iterable[str], test_ids: Iterable[str]) -> LeakageAudit:
    """Nearest-train haversine distance for every geolocated test record."""
    train = [rid for rid in sorted(set(train_ids)) if index.get(rid).location is not None]
    test = [rid for rid in sorted(set(test_ids)) if index.get(rid).location is not None]
    if not train or not test:
        raise ValueError("leakage audit needs geolocated train and test records")
    dists = []
    for rid in test:
        _, d = nearest_record(index, index.get(rid).location, candidates=train)
        dists.append(d)
    arr = np.asarray(dists)
    return LeakageAudit(
        n_train=len(train),
        n_test=len(test),
        median_km=float(np.median(arr)),
        p90_km=float(np.percentile(arr, 90)),
        frac_within_1km=float(np.mean(arr < 1.0)),
        distances_km=tuple(dists),
    )
