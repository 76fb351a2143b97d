"""Startup records and their four modality vectors (text, numeric, categorical, structural)."""

from __future__ import annotations

import csv
import enum
import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .graph import Kind, NodeId, startup
from .node2vec import EmbeddingTable, mean_embedding

NUMERIC_ATTRIBUTES = ("age", "employees", "cumulative_funding")
LOG_SCALED = frozenset({"employees", "cumulative_funding"})
PLACEHOLDER_TEXT = "no information available"


@dataclass
class StartupRecord:
    id: NodeId
    numericals: dict[int, dict[str, float]] = field(default_factory=dict)
    description: str | None = None
    tags: frozenset[str] = frozenset()
    stage: str | None = None
    location: str | None = None

    def __post_init__(self):
        if self.id.kind is not Kind.STARTUP:
            raise ValueError(f"startup record needs a Startup id, got {self.id}")
        self.tags = frozenset(self.tags)
        for year, values in self.numericals.items():
            for attr, v in values.items():
                if attr not in NUMERIC_ATTRIBUTES:
                    raise ValueError(f"{self.id}: unknown numeric attribute {attr!r}")
                if v is not None and (not math.isfinite(v) or v < 0):
                    raise ValueError(f"{self.id}: {attr} in {year} must be finite and >= 0, got {v}")

    def latest(self, attribute: str, year: int) -> float | None:
        """Most recent observed value at or before ``year``."""
        best_year, best = None, None
        for y, values in self.numericals.items():
            v = values.get(attribute)
            if v is not None and y <= year and (best_year is None or y > best_year):
                best_year, best = y, v
        return best


class Provenance(str, enum.Enum):
    OBSERVED = "observed"
    IMPUTED_MEAN = "imputed_mean"
    ZEROED = "zeroed"


@dataclass
class ModalBundle:
    text_vec: np.ndarray
    num_vec: np.ndarray
    cat_vec: np.ndarray
    struct_vec: np.ndarray
    struct_provenance: Provenance

    def __post_init__(self):
        for name in ("text_vec", "num_vec", "cat_vec", "struct_vec"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} is not finite")


# --------------------------------------------------------------------------
# numerical features


def geometric_mean(values: Iterable[float]) -> float:
    """Geometric mean over the strictly positive values; zeros are skipped."""
    logs = [math.log(v) for v in values if v > 0]
    if not logs:
        raise ValueError("geometric mean undefined: no strictly positive values")
    return math.exp(math.fsum(logs) / len(logs))


def impute_numerical(records: Sequence[StartupRecord], attribute: str, year: int) -> dict[NodeId, float]:
    """Per-startup value of ``attribute`` in ``year``.

    Observed value, else the latest earlier value, else the geometric mean of
    the attribute over every startup that has a value by ``year``.
    """
    if attribute not in NUMERIC_ATTRIBUTES:
        raise ValueError(f"unknown numeric attribute {attribute!r}")
    latest = {r.id: r.latest(attribute, year) for r in records}
    observed = [v for v in latest.values() if v is not None]
    if not observed:
        raise ValueError(f"no observations of {attribute!r} up to {year}; cannot impute")
    default = None
    out = {}
    for node, v in latest.items():
        if v is None:
            if default is None:
                default = geometric_mean(observed)
            v = default
        out[node] = v
    return out


@dataclass(frozen=True)
class NumericScaler:
    """ln(1+x) on size attributes, then z-score with fixed statistics."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    @staticmethod
    def transform_raw(raw: np.ndarray) -> np.ndarray:
        out = np.array(raw, dtype=np.float64, copy=True)
        for j, attr in enumerate(NUMERIC_ATTRIBUTES):
            if attr in LOG_SCALED:
                out[..., j] = np.log1p(out[..., j])
        return out

    @classmethod
    def fit(cls, raw: np.ndarray) -> "NumericScaler":
        x = cls.transform_raw(raw)
        std = x.std(axis=0)
        std[std == 0] = 1.0
        return cls(tuple(x.mean(axis=0)), tuple(std))

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        return (self.transform_raw(raw) - np.asarray(self.mean)) / np.asarray(self.std)


# --------------------------------------------------------------------------
# text


class TextEncoder(Protocol):
    output_dim: int

    def encode(self, text: str) -> np.ndarray: ...


_WORD = re.compile(r"\w+", re.UNICODE)


class HashingTextEncoder:
    """Signed feature hashing of lowercase word tokens, L2-normalised."""

    def __init__(self, output_dim: int = 256):
        if output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        self.output_dim = output_dim
        self._cache: dict[str, np.ndarray] = {}

    def encode(self, text: str) -> np.ndarray:
        hit = self._cache.get(text)
        if hit is not None:
            return hit.copy()
        vec = np.zeros(self.output_dim)
        for token in _WORD.findall(text.lower()):
            h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
            vec[h % self.output_dim] += 1.0 if (h >> 63) & 1 == 0 else -1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        self._cache[text] = vec
        return vec.copy()


def encode_text(encoder: TextEncoder, description: str | None) -> np.ndarray:
    text = description if description and description.strip() else PLACEHOLDER_TEXT
    vec = np.asarray(encoder.encode(text), dtype=np.float64)
    if vec.shape != (encoder.output_dim,):
        raise ValueError(f"text encoder returned shape {vec.shape}, expected ({encoder.output_dim},)")
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


# --------------------------------------------------------------------------
# categorical


@dataclass(frozen=True)
class CategoricalVocab:
    tags: tuple[str, ...]
    stages: tuple[str, ...]
    locations: tuple[str, ...]
    stage_mode: str | None
    location_mode: str | None
    mode: str = "multihot"

    @classmethod
    def fit(cls, records: Iterable[StartupRecord], mode: str = "multihot") -> "CategoricalVocab":
        if mode not in ("multihot", "embedding"):
            raise ValueError(f"categorical mode must be multihot or embedding, got {mode!r}")
        records = list(records)
        tags = sorted({t for r in records for t in r.tags})
        stage_counts = Counter(r.stage for r in records if r.stage)
        loc_counts = Counter(r.location for r in records if r.location)
        return cls(tuple(tags), tuple(sorted(stage_counts)), tuple(sorted(loc_counts)),
                   _mode_of(stage_counts), _mode_of(loc_counts), mode)

    @property
    def dim(self) -> int:
        # every block carries one trailing "no tag" slot
        return len(self.tags) + len(self.stages) + len(self.locations) + 3


def _mode_of(counts: Counter) -> str | None:
    if not counts:
        return None
    top = max(counts.values())
    return min(k for k, c in counts.items() if c == top)


def _one_hot_block(value: str | None, vocab: Sequence[str], fallback: str | None) -> np.ndarray:
    block = np.zeros(len(vocab) + 1)
    if value is None:
        value = fallback
    try:
        block[vocab.index(value)] = 1.0
    except ValueError:
        block[-1] = 1.0
    return block


def encode_categorical(tags: Iterable[str], stage: str | None, location: str | None,
                       vocab: CategoricalVocab) -> np.ndarray:
    """Multi-hot tags + one-hot stage + one-hot location, each with a "no tag" slot.

    Missing stage/location fall back to the corpus mode; a field with no mode,
    an unknown value, or an empty tag set lands in the block's "no tag" slot.
    In ``embedding`` mode each block is mean-normalised, which makes the
    model's linear projection an averaged trainable embedding lookup.
    """
    tag_block = np.zeros(len(vocab.tags) + 1)
    index = {t: i for i, t in enumerate(vocab.tags)}
    tags = set(tags)
    for t in tags:
        tag_block[index.get(t, len(vocab.tags))] = 1.0
    if not tags:
        tag_block[-1] = 1.0
    blocks = [tag_block,
              _one_hot_block(stage, vocab.stages, vocab.stage_mode),
              _one_hot_block(location, vocab.locations, vocab.location_mode)]
    if vocab.mode == "embedding":
        blocks = [b / b.sum() for b in blocks]
    return np.concatenate(blocks)


# --------------------------------------------------------------------------
# bundle assembly


class FeatureEncoder:
    """Frozen encoders and vocabularies for one training run."""

    def __init__(self, records: Iterable[StartupRecord], vocab: CategoricalVocab,
                 text_encoder: TextEncoder | None = None, struct_dim: int = 128):
        self.records = {r.id: r for r in records}
        self.vocab = vocab
        self.text_encoder = text_encoder or HashingTextEncoder()
        self.struct_dim = struct_dim
        self._numeric: dict[int, dict[NodeId, np.ndarray]] = {}
        self._scalers: dict[int, NumericScaler] = {}
        self._means: dict[int, np.ndarray] = {}

    @property
    def dims(self) -> dict[str, int]:
        return {"text": self.text_encoder.output_dim, "num": len(NUMERIC_ATTRIBUTES),
                "cat": self.vocab.dim, "struct": self.struct_dim}

    def record(self, node: NodeId) -> StartupRecord:
        # startups without a feature row still get a fully imputed bundle
        rec = self.records.get(node)
        if rec is None:
            rec = StartupRecord(node)
            self._register(rec)
        return rec

    def _register(self, rec: StartupRecord) -> None:
        self.records[rec.id] = rec
        self._numeric.clear()

    def raw_numeric(self, year: int) -> dict[NodeId, np.ndarray]:
        if year not in self._numeric:
            recs = list(self.records.values())
            cols = [impute_numerical(recs, attr, year) for attr in NUMERIC_ATTRIBUTES]
            self._numeric[year] = {r.id: np.array([c[r.id] for c in cols]) for r in recs}
        return self._numeric[year]

    def fit_scaler(self, year: int, past_startups: Iterable[NodeId]) -> NumericScaler:
        raw = self.raw_numeric(year)
        rows = [raw[n] for n in past_startups if n in raw]
        if not rows:
            rows = list(raw.values())
        scaler = NumericScaler.fit(np.stack(rows))
        self._scalers[year] = scaler
        return scaler

    def structural_mean(self, table: EmbeddingTable) -> np.ndarray:
        key = id(table)
        if key not in self._means:
            past = [n for n in table.vectors if n.kind is Kind.STARTUP]
            self._means[key] = mean_embedding(table, past)
        return self._means[key]

    def assemble_bundle(self, record: StartupRecord, year: int, embeddings: EmbeddingTable | None,
                        fallback: Provenance = Provenance.IMPUTED_MEAN, zero_all: bool = False) -> ModalBundle:
        if fallback not in (Provenance.IMPUTED_MEAN, Provenance.ZEROED):
            raise ValueError(f"fallback must be imputed_mean or zeroed, got {fallback}")
        text_vec = encode_text(self.text_encoder, record.description)
        if record.id not in self.records:
            self._register(record)
        scaler = self._scalers.get(year)
        if scaler is None:
            scaler = self.fit_scaler(year, self.records)
        num_vec = scaler(self.raw_numeric(year)[record.id][None, :])[0]
        cat_vec = encode_categorical(record.tags, record.stage, record.location, self.vocab)

        if zero_all or embeddings is None:
            struct_vec, prov = np.zeros(self.struct_dim), Provenance.ZEROED
        elif record.id in embeddings:
            struct_vec, prov = np.array(embeddings[record.id]), Provenance.OBSERVED
        elif fallback is Provenance.IMPUTED_MEAN:
            struct_vec, prov = self.structural_mean(embeddings).copy(), Provenance.IMPUTED_MEAN
        else:
            struct_vec, prov = np.zeros(self.struct_dim), Provenance.ZEROED
        if struct_vec.shape != (self.struct_dim,):
            raise ValueError(f"structural vector has shape {struct_vec.shape}, expected ({self.struct_dim},)")
        return ModalBundle(text_vec, num_vec, cat_vec, struct_vec, prov)


# --------------------------------------------------------------------------
# feature files

FEATURE_COLUMNS = ("startup_id", "year", "age", "employees", "cumulative_funding",
                   "description", "tags", "stage", "location")


def write_features(path: str | Path, records: Iterable[StartupRecord], fingerprint: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(FEATURE_COLUMNS)
        for rec in sorted(records, key=lambda r: r.id):
            static = [rec.description or "", "|".join(sorted(rec.tags)), rec.stage or "", rec.location or ""]
            years = sorted(rec.numericals) or [None]
            for y in years:
                vals = rec.numericals.get(y, {}) if y is not None else {}
                nums = ["" if vals.get(a) is None else repr(float(vals[a])) for a in NUMERIC_ATTRIBUTES]
                writer.writerow([rec.id.key, "" if y is None else y, *nums, *static])


def read_features(path: str | Path) -> list[StartupRecord]:
    """Parse a feature file; static fields take the last non-empty value per startup."""
    by_id: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or "startup_id" not in reader.fieldnames:
            raise ValueError(f"{path}: missing header with a startup_id column")
        for line_no, row in enumerate(reader, start=2):
            sid = (row.get("startup_id") or "").strip()
            if not sid:
                raise ValueError(f"{path}:{line_no}: empty startup_id")
            acc = by_id.setdefault(sid, {"numericals": {}, "description": None, "tags": frozenset(),
                                         "stage": None, "location": None})
            year_text = (row.get("year") or "").strip()
            if year_text:
                try:
                    year = int(year_text)
                    vals = {a: float(row[a]) for a in NUMERIC_ATTRIBUTES if (row.get(a) or "").strip()}
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: {exc}") from None
                acc["numericals"].setdefault(year, {}).update(vals)
            for key in ("description", "stage", "location"):
                value = (row.get(key) or "").strip()
                if value:
                    acc[key] = value
            tags = (row.get("tags") or "").strip()
            if tags:
                acc["tags"] = frozenset(t for t in tags.split("|") if t)
    return [StartupRecord(startup(sid), **acc) for sid, acc in by_id.items()]
