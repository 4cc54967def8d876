"""Data ingestion, cleaning, encoding, sample assembly, and synthesis.

Records are long-form: one index observation per CSV line. Segment-level
rows (empty unit/lane) supply the k-year history; unit-level rows (unit
and lane set) supply next-year lane targets for each 100 m unit. Auxiliary
road attributes ride on every row.

The synthetic generator stands in for the private inspection dataset: it
draws per-segment decay curves, lane offsets (outer lanes decay faster),
and unit jitter, and keeps a ledger of every latent parameter so tests can
reconstruct the emitted ground truth exactly.
"""

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

INDEX_KINDS = ("PCI", "PQI", "RQI")

CSV_COLUMNS = [
    "segment_id", "unit_id", "year", "index_kind", "value",
    "code", "direction", "level", "city", "town",
    "speed_limit", "aadt", "surface_material", "lane",
]

CATEGORICAL_FEATURES = ("code", "direction", "level", "city", "town",
                        "surface_material")
CONTINUOUS_FEATURES = ("speed_limit", "aadt")
FEATURE_BLOCKS = CATEGORICAL_FEATURES + CONTINUOUS_FEATURES

UNITS_PER_SEGMENT = 10  # assumed 100 m units per ~1000 m segment
DEFAULT_SEGMENTS = {2: 54, 3: 80, 4: 85}


@dataclass
class RoadAttrs:
    """Static auxiliary attributes of one road segment."""

    code: str
    direction: str
    level: int
    city: str
    town: str
    speed_limit: float
    aadt: float
    surface_material: str


@dataclass
class PerformanceRecord:
    """One observation of one index on a segment-year or lane-unit-year."""

    segment_id: str
    unit_id: str | None
    year: int
    lane: int | None
    index_kind: str
    value: float
    code: str
    direction: str
    level: int
    city: str
    town: str
    speed_limit: float
    aadt: float
    surface_material: str

    @property
    def is_unit_level(self) -> bool:
        return self.unit_id is not None

    @property
    def attrs(self) -> RoadAttrs:
        return RoadAttrs(code=self.code, direction=self.direction,
                         level=self.level, city=self.city, town=self.town,
                         speed_limit=self.speed_limit, aadt=self.aadt,
                         surface_material=self.surface_material)


@dataclass
class ParseIssue:
    line: int
    message: str


def _parse_line(row: dict) -> PerformanceRecord:
    segment_id = row["segment_id"].strip()
    if not segment_id:
        raise DataError("empty segment_id")
    unit_id = row["unit_id"].strip() or None
    lane_raw = row["lane"].strip()
    lane = int(lane_raw) if lane_raw else None
    if (unit_id is None) != (lane is None):
        raise DataError("lane must be present exactly on unit-level rows")
    if lane is not None and not 1 <= lane <= 9:
        raise DataError(f"lane {lane} out of range 1..9")
    year = int(row["year"])
    kind = row["index_kind"].strip().upper()
    if kind not in INDEX_KINDS:
        raise DataError(f"unknown index kind {row['index_kind']!r}")
    value = float(row["value"])
    if not 0.0 <= value <= 100.0:
        raise DataError(f"index value {value} outside range 0..100")
    level = int(row["level"])
    if not 1 <= level <= 4:
        raise DataError(f"road level {level} outside range 1..4")
    speed = float(row["speed_limit"])
    if not 60.0 <= speed <= 120.0:
        raise DataError(f"speed limit {speed} outside range 60..120")
    aadt = float(row["aadt"])
    if not 50.0 <= aadt <= 3000.0:
        raise DataError(f"AADT {aadt} outside range 50..3000")
    for name in ("code", "direction", "city", "town", "surface_material"):
        if not row[name].strip():
            raise DataError(f"empty {name}")
    return PerformanceRecord(
        segment_id=segment_id, unit_id=unit_id, year=year, lane=lane,
        index_kind=kind, value=value, code=row["code"].strip(),
        direction=row["direction"].strip(), level=level,
        city=row["city"].strip(), town=row["town"].strip(),
        speed_limit=speed, aadt=aadt,
        surface_material=row["surface_material"].strip())


def parse_records(source):
    """Read records from a CSV path or file object.

    Returns (records, issues): typed records for well-formed lines and a
    ParseIssue per malformed line. Raises DataError if the source cannot
    be read or the header does not match the schema.
    """
    if hasattr(source, "read"):
        return _parse_stream(source)
    try:
        with open(source, "r", encoding="utf-8", newline="") as f:
            return _parse_stream(f)
    except OSError as err:
        raise DataError(f"cannot read {source}: {err}") from err


def _parse_stream(f):
    reader = csv.reader(f)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: header row required") from None
    if [h.strip() for h in header] != CSV_COLUMNS:
        raise DataError(
            f"header mismatch: expected {CSV_COLUMNS}, got {header}")
    records, issues = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            issues.append(ParseIssue(line=line_no,
                                     message=f"expected {len(CSV_COLUMNS)} fields"))
            continue
        try:
            records.append(_parse_line(dict(zip(CSV_COLUMNS, row))))
        except (DataError, ValueError) as err:
            issues.append(ParseIssue(line=line_no, message=str(err)))
    return records, issues


def _fmt(x) -> str:
    return repr(float(x))


def records_to_csv(records) -> str:
    """Render records in the schema parse_records reads (exact round trip)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([
            r.segment_id, r.unit_id or "", r.year, r.index_kind, _fmt(r.value),
            r.code, r.direction, r.level, r.city, r.town,
            _fmt(r.speed_limit), _fmt(r.aadt), r.surface_material,
            "" if r.lane is None else r.lane,
        ])
    return buf.getvalue()


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(records_to_csv(records))


@dataclass
class Removal:
    segment_id: str
    index_kind: str | None  # None: whole segment (maintenance)
    rule: str               # "maintenance" or "fluctuation"
    detail: str


def clean(records, epsilon_rise: float = 2.0, maintained=()):
    """Drop maintained segments and series violating year-by-year decline.

    A (segment, index) series is removed when any year-over-year rise of
    its segment-level values exceeds epsilon_rise. Returns
    (kept_records, removals). Idempotent.
    """
    maintained = set(maintained)
    removals = []
    removed_pairs = set()
    for sid in sorted(maintained):
        removals.append(Removal(segment_id=sid, index_kind=None,
                                rule="maintenance",
                                detail="listed as maintained"))

    series = {}
    for r in records:
        if r.segment_id in maintained or r.is_unit_level:
            continue
        series.setdefault((r.segment_id, r.index_kind), []).append((r.year, r.value))

    for (sid, kind), points in sorted(series.items()):
        points.sort()
        years = [y for y, _ in points]
        if years != list(range(years[0], years[0] + len(years))):
            raise DataError(
                f"segment {sid} {kind}: segment-level years {years} "
                "are not consecutive")
        for (y0, v0), (y1, v1) in zip(points, points[1:]):
            rise = v1 - v0
            if rise > epsilon_rise:
                removed_pairs.add((sid, kind))
                removals.append(Removal(
                    segment_id=sid, index_kind=kind, rule="fluctuation",
                    detail=f"rise {rise:.3f} from {y0} to {y1} exceeds "
                           f"{epsilon_rise}"))
                break

    kept = [r for r in records
            if r.segment_id not in maintained
            and (r.segment_id, r.index_kind) not in removed_pairs]
    return kept, removals


@dataclass
class EncoderSpec:
    """One-hot maps and Z-score statistics, fit on the training split only."""

    vocabs: dict            # categorical feature -> sorted category list
    stats: dict             # continuous feature -> (mean, std)
    excluded: tuple = ()
    lane_vocab: int | None = None  # append a lane one-hot of this width
    _warned: set = field(default_factory=set, repr=False, compare=False)

    def feature_names(self):
        names = []
        for feat in CATEGORICAL_FEATURES:
            if feat in self.vocabs:
                names.extend(f"{feat}={cat}" for cat in self.vocabs[feat])
        for feat in CONTINUOUS_FEATURES:
            if feat in self.stats:
                names.append(feat)
        if self.lane_vocab:
            names.extend(f"lane={n}" for n in range(1, self.lane_vocab + 1))
        return names

    @property
    def width(self) -> int:
        return len(self.feature_names())


def fit_encoder(items, exclude=(), lane_vocab: int | None = None) -> EncoderSpec:
    """Build an EncoderSpec from attribute-bearing items (records or attrs).

    exclude drops whole feature blocks (used by the feature ablation).
    lane_vocab reserves a lane one-hot block for pooled single-task
    training, where lane identity becomes an input feature.
    """
    items = list(items)
    if not items:
        raise DataError("cannot fit encoder on empty input")
    unknown = set(exclude) - set(FEATURE_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown feature blocks: {sorted(unknown)}")
    vocabs = {}
    for feat in CATEGORICAL_FEATURES:
        if feat in exclude:
            continue
        vocabs[feat] = sorted({getattr(it, feat) for it in items}, key=str)
    stats = {}
    for feat in CONTINUOUS_FEATURES:
        if feat in exclude:
            continue
        vals = np.array([float(getattr(it, feat)) for it in items])
        mean = float(vals.mean())
        std = float(vals.std())
        if std == 0.0:
            std = 1.0  # constant column: pass through centered
        stats[feat] = (mean, std)
    return EncoderSpec(vocabs=vocabs, stats=stats, excluded=tuple(exclude),
                       lane_vocab=lane_vocab)


def encode(item, spec: EncoderSpec, lane: int | None = None) -> np.ndarray:
    """Encode one item's attributes into the auxiliary vector.

    Unseen categories map to an all-zero block (and are logged). The lane
    argument is required exactly when the spec carries a lane block.
    """
    parts = []
    for feat in CATEGORICAL_FEATURES:
        if feat not in spec.vocabs:
            continue
        cats = spec.vocabs[feat]
        block = np.zeros(len(cats))
        val = getattr(item, feat)
        try:
            block[cats.index(val)] = 1.0
        except ValueError:
            if (feat, val) not in spec._warned:
                spec._warned.add((feat, val))
                log.warning("unseen %s category %r mapped to zeros", feat, val)
        parts.append(block)
    for feat in CONTINUOUS_FEATURES:
        if feat not in spec.stats:
            continue
        mean, std = spec.stats[feat]
        parts.append(np.array([(float(getattr(item, feat)) - mean) / std]))
    if spec.lane_vocab:
        if lane is None or not 1 <= lane <= spec.lane_vocab:
            raise DataError(f"lane in 1..{spec.lane_vocab} required")
        block = np.zeros(spec.lane_vocab)
        block[lane - 1] = 1.0
        parts.append(block)
    elif lane is not None:
        raise DataError("encoder has no lane block")
    return np.concatenate(parts) if parts else np.zeros(0)


def encoder_to_dict(spec: EncoderSpec) -> dict:
    return {
        "vocabs": {k: list(v) for k, v in spec.vocabs.items()},
        "stats": {k: [m, s] for k, (m, s) in spec.stats.items()},
        "excluded": list(spec.excluded),
        "lane_vocab": spec.lane_vocab,
    }


def encoder_from_dict(d: dict) -> EncoderSpec:
    return EncoderSpec(
        vocabs={k: list(v) for k, v in d["vocabs"].items()},
        stats={k: (float(m), float(s)) for k, (m, s) in d["stats"].items()},
        excluded=tuple(d.get("excluded", ())),
        lane_vocab=d.get("lane_vocab"))


@dataclass
class Sample:
    """One prediction unit: k-year segment series, attrs, per-lane targets."""

    unit_id: str
    segment_id: str
    index_kind: str
    series: np.ndarray        # (k,) raw index values, oldest first
    attrs: RoadAttrs
    targets: np.ndarray       # (num_lanes,) next-year values, lane 1 first
    aux: np.ndarray | None = None  # encoded; filled by encode_samples


@dataclass
class Drop:
    segment_id: str
    unit_id: str | None
    index_kind: str
    reason: str


def build_samples(records, k: int = 3, num_lanes: int | None = None,
                  index_kinds=None):
    """Assemble one Sample per 100 m unit from cleaned records.

    Each unit inherits its parent segment's k-year series and attributes.
    Units missing any lane target, or with a nonpositive target, and
    segments without a complete series are dropped with a report entry.
    Returns (samples, drops) sorted by (kind, segment, unit).
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    index_kinds = tuple(index_kinds) if index_kinds else INDEX_KINDS
    seg_years = sorted({r.year for r in records if not r.is_unit_level})
    if len(seg_years) < k:
        raise DataError(f"need {k} segment-level years, found {len(seg_years)}")
    series_years = seg_years[-k:]
    target_year = series_years[-1] + 1

    if num_lanes is None:
        lanes = [r.lane for r in records if r.is_unit_level]
        if not lanes:
            raise DataError("no unit-level rows: cannot infer lane count")
        num_lanes = max(lanes)

    seg_values = {}   # (segment, kind) -> {year: value}
    seg_attrs = {}    # segment -> (year, RoadAttrs)
    unit_targets = {} # (segment, unit, kind) -> {lane: value}
    for r in records:
        if r.is_unit_level:
            if r.year == target_year and r.index_kind in index_kinds:
                unit_targets.setdefault(
                    (r.segment_id, r.unit_id, r.index_kind), {})[r.lane] = r.value
        else:
            if r.index_kind in index_kinds:
                seg_values.setdefault(
                    (r.segment_id, r.index_kind), {})[r.year] = r.value
            prev = seg_attrs.get(r.segment_id)
            if prev is None or r.year < prev[0]:
                seg_attrs[r.segment_id] = (r.year, r.attrs)

    samples, drops = [], []
    for (sid, uid, kind) in sorted(unit_targets):
        if kind not in index_kinds:
            continue
        values = seg_values.get((sid, kind), {})
        if any(y not in values for y in series_years):
            drops.append(Drop(segment_id=sid, unit_id=uid, index_kind=kind,
                              reason="incomplete_series"))
            continue
        lanes = unit_targets[(sid, uid, kind)]
        if any(n not in lanes for n in range(1, num_lanes + 1)):
            drops.append(Drop(segment_id=sid, unit_id=uid, index_kind=kind,
                              reason="missing_lane_target"))
            continue
        targets = np.array([lanes[n] for n in range(1, num_lanes + 1)])
        if (targets <= 0).any():
            drops.append(Drop(segment_id=sid, unit_id=uid, index_kind=kind,
                              reason="nonpositive_target"))
            continue
        samples.append(Sample(
            unit_id=uid, segment_id=sid, index_kind=kind,
            series=np.array([values[y] for y in series_years]),
            attrs=seg_attrs[sid][1], targets=targets))
    samples.sort(key=lambda s: (s.index_kind, s.segment_id, s.unit_id))
    return samples, drops


def encode_samples(samples, spec: EncoderSpec):
    """Return copies of the samples with aux vectors filled in."""
    return [replace(s, aux=encode(s.attrs, spec)) for s in samples]


@dataclass
class PredictionUnit:
    """A unit to predict: series and attrs present, targets unknown."""

    unit_id: str
    segment_id: str
    index_kind: str
    series: np.ndarray
    attrs: RoadAttrs
    aux: np.ndarray | None = None


def build_prediction_units(records, index_kind: str, k: int = 3):
    """Enumerate prediction units from a records file without targets.

    Units are the distinct (segment, unit) pairs appearing on unit-level
    rows of the index kind; each needs its segment's last k years of
    segment-level values. Returns (units, drops).
    """
    if index_kind not in INDEX_KINDS:
        raise ConfigError(f"index_kind must be one of {INDEX_KINDS}")
    seg_years = sorted({r.year for r in records if not r.is_unit_level})
    if len(seg_years) < k:
        raise DataError(f"need {k} segment-level years, found {len(seg_years)}")
    series_years = seg_years[-k:]
    seg_values, seg_attrs, unit_ids = {}, {}, set()
    for r in records:
        if r.is_unit_level:
            if r.index_kind == index_kind:
                unit_ids.add((r.segment_id, r.unit_id))
        else:
            if r.index_kind == index_kind:
                seg_values.setdefault(r.segment_id, {})[r.year] = r.value
            prev = seg_attrs.get(r.segment_id)
            if prev is None or r.year < prev[0]:
                seg_attrs[r.segment_id] = (r.year, r.attrs)
    units, drops = [], []
    for sid, uid in sorted(unit_ids):
        values = seg_values.get(sid, {})
        if any(y not in values for y in series_years):
            drops.append(Drop(segment_id=sid, unit_id=uid,
                              index_kind=index_kind,
                              reason="incomplete_series"))
            continue
        units.append(PredictionUnit(
            unit_id=uid, segment_id=sid, index_kind=index_kind,
            series=np.array([values[y] for y in series_years]),
            attrs=seg_attrs[sid][1]))
    return units, drops


def split(samples, ratio: float = 0.7, seed: int = 0,
          group_by_segment: bool = True):
    """Seeded deterministic train/test split.

    With group_by_segment, all units of a segment land on one side
    (leakage guard); sizes track the ratio at the grouping granularity.
    """
    if not samples:
        raise DataError("cannot split an empty sample list")
    if not 0.0 < ratio < 1.0:
        raise ConfigError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    if group_by_segment:
        groups = sorted({s.segment_id for s in samples})
        perm = rng.permutation(len(groups))
        n_train = int(round(ratio * len(groups)))
        if len(groups) >= 2:
            n_train = min(max(n_train, 1), len(groups) - 1)
        train_ids = {groups[i] for i in perm[:n_train]}
        train = [s for s in samples if s.segment_id in train_ids]
        test = [s for s in samples if s.segment_id not in train_ids]
    else:
        perm = rng.permutation(len(samples))
        n_train = int(round(ratio * len(samples)))
        if len(samples) >= 2:
            n_train = min(max(n_train, 1), len(samples) - 1)
        chosen = set(perm[:n_train].tolist())
        train = [s for i, s in enumerate(samples) if i in chosen]
        test = [s for i, s in enumerate(samples) if i not in chosen]
    return train, test


_CITY_TOWNS = {
    "Zhengzhou": ["Jinshui", "Erqi", "Zhongyuan"],
    "Luoyang": ["Xigong", "Chanhe"],
    "Jiaozuo": ["Jiefang", "Shanyang"],
}
_ROAD_CODES = ["G107", "G207", "G310", "S237", "S312", "S323"]


def norm_scenario(scenario) -> int:
    if isinstance(scenario, str):
        s = scenario.lower().replace("-", "").replace("_", "")
        table = {"2lane": 2, "3lane": 3, "4lane": 4}
        if s not in table:
            raise ConfigError(f"unknown scenario {scenario!r}")
        return table[s]
    if scenario in (2, 3, 4):
        return int(scenario)
    raise ConfigError(f"unknown scenario {scenario!r}")


def synth_generate(scenario, n_segments: int | None = None, seed: int = 0):
    """Generate a synthetic desk-scale dataset for one road scenario.

    Shared structure: each segment follows a decaying curve whose rate is
    modulated by AADT, road level, and surface material. Lane-specific
    structure: outer lanes decay faster, with per-segment randomness and
    rare heavy-tailed offsets. Unit-level ground truth at the target year
    adds per-unit effects and jitter. Fully deterministic per seed.

    Returns (records, ledger); the ledger holds every latent parameter and
    the emitted truth values.
    """
    num_lanes = norm_scenario(scenario)
    if n_segments is None:
        n_segments = DEFAULT_SEGMENTS[num_lanes]
    if n_segments < 1:
        raise ConfigError("n_segments must be >= 1")
    rng = np.random.default_rng(seed)
    year0 = 2020
    k = 3
    records = []
    ledger = {
        "scenario": f"{num_lanes}lane", "num_lanes": num_lanes,
        "n_segments": n_segments, "units_per_segment": UNITS_PER_SEGMENT,
        "seed": int(seed), "history_years": [year0 + y for y in range(k)],
        "target_year": year0 + k,
        "expected_units": n_segments * UNITS_PER_SEGMENT,
        "segments": [],
    }

    for si in range(n_segments):
        sid = f"SEG{si:04d}"
        city = str(rng.choice(list(_CITY_TOWNS)))
        attrs = RoadAttrs(
            code=str(rng.choice(_ROAD_CODES)),
            direction=str(rng.choice(["upstream", "downstream"])),
            level=int(rng.integers(1, 5)),
            city=city,
            town=str(rng.choice(_CITY_TOWNS[city])),
            speed_limit=float(rng.choice([60.0, 80.0, 100.0, 120.0])),
            aadt=float(np.round(rng.uniform(50.0, 3000.0), 1)),
            surface_material=str(rng.choice(["asphalt", "concrete"], p=[0.8, 0.2])),
        )
        aadt_norm = (attrs.aadt - 50.0) / 2950.0
        level_norm = (attrs.level - 1) / 3.0
        is_asphalt = 1.0 if attrs.surface_material == "asphalt" else 0.0
        extra_drop = 1.2 * aadt_norm + 0.6 * level_norm + 0.4 * is_asphalt

        offset_scale = 0.8 + 1.0 * aadt_norm
        scale_jit = rng.uniform(0.9, 1.3)
        base_offsets = []
        for n in range(num_lanes):
            off = -n * offset_scale * scale_jit + rng.normal(0.0, 1.0)
            if rng.random() < 0.01:
                off += rng.normal(0.0, 15.0)
            base_offsets.append(off)
        unit_effects = rng.normal(0.0, 0.9, size=UNITS_PER_SEGMENT)

        seg_entry = {"segment_id": sid, "attrs": vars(attrs).copy(),
                     "extra_drop": extra_drop,
                     "unit_effects": unit_effects.tolist(), "kinds": {}}
        for kind in INDEX_KINDS:
            v0 = rng.uniform(85.0, 98.0)
            d = 1.0 + 2.2 * rng.random() + 1.5 * aadt_norm \
                + 0.8 * level_norm + 0.5 * is_asphalt
            q = rng.uniform(0.0, 0.25)
            offsets = [off + rng.normal(0.0, 0.4) for off in base_offsets]
            meas_noise = rng.normal(0.0, 0.25, size=k)
            jitter = rng.normal(0.0, 0.7, size=(UNITS_PER_SEGMENT, num_lanes))

            def curve(y):
                return v0 - d * y - q * y * y

            seg_series = []
            for y in range(k):
                lane_vals = [curve(y) + offsets[n] * (y / k) for n in range(num_lanes)]
                val = float(np.clip(round(
                    float(np.mean(lane_vals) + meas_noise[y]), 1), 1.0, 100.0))
                seg_series.append(val)
                records.append(PerformanceRecord(
                    segment_id=sid, unit_id=None, year=year0 + y, lane=None,
                    index_kind=kind, value=val, **vars(attrs)))

            truth = []
            for u in range(UNITS_PER_SEGMENT):
                uid = f"{sid}-U{u:02d}"
                row = []
                for n in range(num_lanes):
                    raw = curve(k) + offsets[n] - extra_drop \
                        + unit_effects[u] + jitter[u, n]
                    val = float(np.clip(round(raw, 1), 5.0, 100.0))
                    row.append(val)
                    records.append(PerformanceRecord(
                        segment_id=sid, unit_id=uid, year=year0 + k,
                        lane=n + 1, index_kind=kind, value=val, **vars(attrs)))
                truth.append(row)
            seg_entry["kinds"][kind] = {
                "v0": v0, "decay": d, "curvature": q,
                "offsets": offsets, "segment_series": seg_series,
                "jitter": jitter.tolist(), "unit_truth": truth,
            }
        ledger["segments"].append(seg_entry)
    return records, ledger


@dataclass
class PreparedData:
    train: list
    test: list
    encoder: EncoderSpec
    removals: list
    drops: list
    num_lanes: int
    index_kind: str


def prepare_dataset(records, index_kind: str, num_lanes: int | None = None,
                    k: int = 3, split_seed: int = 0, ratio: float = 0.7,
                    group_by_segment: bool = True, epsilon_rise: float = 2.0,
                    maintained=(), exclude=()) -> PreparedData:
    """Full pipeline: clean, build samples for one index, split, encode."""
    if index_kind not in INDEX_KINDS:
        raise ConfigError(f"index_kind must be one of {INDEX_KINDS}")
    kept, removals = clean(records, epsilon_rise=epsilon_rise,
                           maintained=maintained)
    samples, drops = build_samples(kept, k=k, num_lanes=num_lanes,
                                   index_kinds=(index_kind,))
    if not samples:
        raise DataError(f"no usable samples for {index_kind}")
    n_lanes = samples[0].targets.shape[0]
    train, test = split(samples, ratio=ratio, seed=split_seed,
                        group_by_segment=group_by_segment)
    spec = fit_encoder((s.attrs for s in train), exclude=exclude)
    return PreparedData(
        train=encode_samples(train, spec), test=encode_samples(test, spec),
        encoder=spec, removals=removals, drops=drops,
        num_lanes=n_lanes, index_kind=index_kind)
