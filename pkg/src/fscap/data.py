"""Dataset ingestion, episode sampling, and synthetic assay generation.

Activities are stored as log10 nanomolar values clipped to [-2.5, 6.5]
(100 mM down to about 3 pM). Ingest reads a TSV with header columns
smiles, assay_id, activity_nm and applies, in order: SMILES parse,
heavy-atom window, positivity, log transform, clip. Duplicate
(assay, smiles) pairs keep the last value; assays with fewer than
min_assay_compounds survivors are dropped whole. Every input row lands
in exactly one provenance counter, so the counters sum to the row count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .fingerprint import Fingerprint, morgan_fingerprint
from .model import Episode, context_feature_matrix
from .smiles import SmilesParseError, parse_smiles

__all__ = [
    "ACTIVITY_CLIP_RANGE",
    "AssayTruth",
    "Dataset",
    "Entry",
    "IngestError",
    "IngestOptions",
    "InsufficientContextsError",
    "SyntheticSpec",
    "WEAK_CONTEXT_THRESHOLD_LOG10_NM",
    "dump_dataset",
    "format_provenance",
    "generate_synthetic",
    "ingest_tsv",
    "load_dataset",
    "sample_episode",
    "split_assays",
]

ACTIVITY_CLIP_RANGE = (-2.5, 6.5)

# contexts with activity above this (log10 nM) count as weak binders;
# 4.0 is 10 uM, the usual screening cutoff for "inactive"
WEAK_CONTEXT_THRESHOLD_LOG10_NM = 4.0

CONSTRAINTS = ("none", "weak_only")

_REQUIRED_COLUMNS = ("smiles", "assay_id", "activity_nm")

_PROVENANCE_KEYS = (
    "rows_stored",
    "rows_unparseable_smiles",
    "rows_too_few_atoms",
    "rows_too_many_atoms",
    "rows_missing_fields",
    "rows_bad_activity",
    "rows_duplicate_pair",
    "rows_in_dropped_assays",
)


class IngestError(ValueError):
    """Malformed input file (header or structure, not row contents)."""


class InsufficientContextsError(ValueError):
    """Assay cannot supply any eligible context compound."""


class Entry(NamedTuple):
    smiles: str
    fingerprint: Fingerprint
    activity: float


@dataclass
class Dataset:
    """Assay id -> compound entries, plus the fingerprint recipe used."""

    assays: dict[str, list[Entry]]
    nbits: int
    radius: int
    provenance: dict[str, int] = field(default_factory=dict)
    binary_labels: bool = False

    def assay_ids(self) -> list[str]:
        return sorted(self.assays)

    @property
    def n_assays(self) -> int:
        return len(self.assays)

    @property
    def n_compounds(self) -> int:
        return sum(len(v) for v in self.assays.values())


@dataclass(frozen=True)
class IngestOptions:
    nbits: int = 2048
    radius: int = 3
    min_heavy_atoms: int = 10
    max_heavy_atoms: int = 70
    min_assay_compounds: int = 10
    binary_labels: bool = False

    def __post_init__(self):
        if self.min_heavy_atoms < 1 or self.max_heavy_atoms < self.min_heavy_atoms:
            raise ValueError("bad heavy-atom window")
        if self.min_assay_compounds < 1:
            raise ValueError("min_assay_compounds must be >= 1")


def ingest_tsv(path: str | Path, options: IngestOptions = IngestOptions()) -> Dataset:
    """Read a measurement TSV into a Dataset.

    Row filters apply in a fixed order and each dropped row increments
    exactly one counter: unparseable SMILES, too few heavy atoms, too
    many, missing fields, non-positive or non-numeric activity (for
    binary labels: anything but 0 or 1). Survivors are deduplicated by
    (assay_id, smiles), last value wins, and assays left with fewer than
    min_assay_compounds entries are dropped row by row into
    rows_in_dropped_assays. Raises IngestError if the header is missing
    any required column.
    """
    lo, hi = ACTIVITY_CLIP_RANGE
    counters = dict.fromkeys(_PROVENANCE_KEYS, 0)
    kept: dict[tuple[str, str], tuple] = {}

    try:
        f = open(path, newline="")
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e}") from e
    with f:
        reader = csv.DictReader(f, delimiter="\t")
        header = reader.fieldnames
        if header is None:
            raise IngestError(f"{path}: empty file, expected a TSV header")
        missing = [c for c in _REQUIRED_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"{path}: header lacks columns {missing}")

        for row in reader:
            smiles = (row.get("smiles") or "").strip()
            assay_id = (row.get("assay_id") or "").strip()
            raw_activity = (row.get("activity_nm") or "").strip()

            try:
                mol = parse_smiles(smiles)
            except SmilesParseError:
                counters["rows_unparseable_smiles"] += 1
                continue
            heavy = mol.heavy_atom_count()
            if heavy < options.min_heavy_atoms:
                counters["rows_too_few_atoms"] += 1
                continue
            if heavy > options.max_heavy_atoms:
                counters["rows_too_many_atoms"] += 1
                continue
            if not assay_id or not raw_activity:
                counters["rows_missing_fields"] += 1
                continue
            if options.binary_labels:
                if raw_activity not in ("0", "1"):
                    counters["rows_bad_activity"] += 1
                    continue
                activity = float(raw_activity)
            else:
                try:
                    nanomolar = float(raw_activity)
                except ValueError:
                    counters["rows_bad_activity"] += 1
                    continue
                if not np.isfinite(nanomolar) or nanomolar <= 0:
                    counters["rows_bad_activity"] += 1
                    continue
                activity = float(np.clip(np.log10(nanomolar), lo, hi))

            key = (assay_id, smiles)
            if key in kept:
                counters["rows_duplicate_pair"] += 1
                # last occurrence wins, position of the first is kept
                kept[key] = (mol, activity)
            else:
                kept[key] = (mol, activity)

    by_assay: dict[str, list[tuple[str, tuple]]] = {}
    for (assay_id, smiles), payload in kept.items():
        by_assay.setdefault(assay_id, []).append((smiles, payload))

    assays: dict[str, list[Entry]] = {}
    for assay_id, rows in by_assay.items():
        if len(rows) < options.min_assay_compounds:
            counters["rows_in_dropped_assays"] += len(rows)
            continue
        assays[assay_id] = [
            Entry(smiles, morgan_fingerprint(mol, options.radius, options.nbits),
                  activity)
            for smiles, (mol, activity) in rows
        ]
        counters["rows_stored"] += len(rows)

    return Dataset(
        assays=assays,
        nbits=options.nbits,
        radius=options.radius,
        provenance=counters,
        binary_labels=options.binary_labels,
    )


def format_provenance(dataset: Dataset) -> str:
    lines = [f"{k}\t{dataset.provenance.get(k, 0)}" for k in _PROVENANCE_KEYS]
    total = sum(dataset.provenance.get(k, 0) for k in _PROVENANCE_KEYS)
    lines.append(f"rows_total\t{total}")
    lines.append(f"assays_stored\t{dataset.n_assays}")
    return "\n".join(lines)


# ---- persistence ----

_DATASET_FORMAT_VERSION = 1


def dump_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as versioned JSON; exact bytes for exact reloads.

    Activities serialize through repr, which round-trips floats, and
    fingerprints as hex, so load(dump(d)) == d bit for bit.
    """
    doc = {
        "format_version": _DATASET_FORMAT_VERSION,
        "nbits": dataset.nbits,
        "radius": dataset.radius,
        "binary_labels": dataset.binary_labels,
        "provenance": dataset.provenance,
        "assays": {
            assay_id: [
                [e.smiles, e.fingerprint.to_bytes().hex(), e.activity]
                for e in entries
            ]
            for assay_id, entries in dataset.assays.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IngestError(f"cannot read dataset {path}: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise IngestError(f"{path} is not a dataset file")
    if doc["format_version"] != _DATASET_FORMAT_VERSION:
        raise IngestError(
            f"unsupported dataset format version {doc['format_version']} "
            f"(expected {_DATASET_FORMAT_VERSION})"
        )
    try:
        nbits = doc["nbits"]
        assays = {
            assay_id: [
                Entry(smiles, Fingerprint.from_bytes(bytes.fromhex(fp_hex), nbits),
                      float(activity))
                for smiles, fp_hex, activity in entries
            ]
            for assay_id, entries in doc["assays"].items()
        }
        return Dataset(
            assays=assays,
            nbits=nbits,
            radius=doc["radius"],
            provenance=dict(doc.get("provenance", {})),
            binary_labels=bool(doc.get("binary_labels", False)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise IngestError(f"invalid dataset {path}: {e}") from e


# ---- splitting and episode sampling ----


def split_assays(dataset: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint train/test split over whole assays, seeded permutation."""
    ids = dataset.assay_ids()
    if not 0 <= n_test < len(ids):
        raise ValueError(
            f"n_test must be in [0, {len(ids) - 1}], got {n_test} "
            f"for {len(ids)} assays"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    test_ids = {ids[i] for i in order[:n_test]}

    def subset(keep_test: bool) -> Dataset:
        return Dataset(
            assays={
                a: entries
                for a, entries in dataset.assays.items()
                if (a in test_ids) == keep_test
            },
            nbits=dataset.nbits,
            radius=dataset.radius,
            provenance=dict(dataset.provenance),
            binary_labels=dataset.binary_labels,
        )

    return subset(False), subset(True)


def eligible_context_indices(entries: list[Entry], constraint: str) -> list[int]:
    if constraint not in CONSTRAINTS:
        raise ValueError(f"unknown constraint {constraint!r}, expected {CONSTRAINTS}")
    if constraint == "weak_only":
        return [
            i for i, e in enumerate(entries)
            if e.activity > WEAK_CONTEXT_THRESHOLD_LOG10_NM
        ]
    return list(range(len(entries)))


def sample_episode(
    dataset: Dataset,
    assay_id: str,
    n_context: int,
    rng: np.random.Generator,
    constraint: str = "none",
    query_index: int | None = None,
) -> Episode:
    """Draw one episode from an assay.

    The query is uniform over the assay (or the given index); contexts
    come from the rest of the assay after the constraint filter, without
    replacement when the pool is large enough, with replacement when it
    is smaller but nonempty. weak_only additionally requires the assay
    to hold at least n_context weak compounds.

    Raises KeyError for an unknown assay and InsufficientContextsError
    when no eligible context exists (callers skip the assay and count
    the diagnostic).
    """
    if n_context < 1:
        raise ValueError(f"n_context must be >= 1, got {n_context}")
    entries = dataset.assays[assay_id]
    eligible = eligible_context_indices(entries, constraint)
    if constraint == "weak_only" and len(eligible) < n_context:
        raise InsufficientContextsError(
            f"assay {assay_id}: {len(eligible)} weak compounds, "
            f"need {n_context}"
        )

    if query_index is None:
        query_index = int(rng.integers(len(entries)))
    elif not 0 <= query_index < len(entries):
        raise ValueError(f"query_index {query_index} out of range")

    pool = [i for i in eligible if i != query_index]
    if not pool:
        raise InsufficientContextsError(
            f"assay {assay_id}: no eligible context besides the query"
        )
    replace = len(pool) < n_context
    picks = rng.choice(len(pool), size=n_context, replace=replace)
    contexts = [
        (entries[pool[i]].fingerprint, entries[pool[i]].activity) for i in picks
    ]
    q = entries[query_index]
    return Episode(
        query_fp=q.fingerprint,
        contexts=contexts,
        target=q.activity,
        assay_id=assay_id,
    )


# ---- synthetic assays with known structure ----


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the synthetic benchmark generator.

    Each assay has a hidden sparse weight vector over fingerprint bits;
    a compound's activity is an affine function of its fingerprint dotted
    with those weights, plus Gaussian noise, clipped to the storage
    range. Molecules within an assay share a random scaffold and differ
    in decorations, so same-assay compounds look alike to the
    fingerprint, the way series in one assay do.

    shared_pool reuses one molecule set for every assay, which removes
    any assay-identity signal from the query alone. shared_support
    additionally draws one global support set (per-assay weights still
    differ), restricted to bits that actually vary across the pool;
    without it a fresh support is drawn per assay. Few-shot inference
    from a handful of context pairs is only well posed when the support
    is small and shared, so benchmarks that grade context use should set
    both flags.
    """

    n_assays: int = 200
    molecules_per_assay: int = 60
    nbits: int = 256
    radius: int = 2
    weight_sparsity: float = 0.1
    noise_sd: float = 0.25
    scale: float = 1.2
    offset_low: float = 1.0
    offset_high: float = 3.0
    shared_pool: bool = False
    shared_support: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_assays < 1 or self.molecules_per_assay < 2:
            raise ValueError("need at least 1 assay and 2 molecules per assay")
        if not 0.0 <= self.weight_sparsity <= 1.0:
            raise ValueError("weight_sparsity must be in [0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.offset_high < self.offset_low:
            raise ValueError("offset range inverted")
        if self.shared_support and not self.shared_pool:
            raise ValueError("shared_support requires shared_pool")


@dataclass
class AssayTruth:
    """Hidden generating function of one synthetic assay."""

    support: np.ndarray
    weights: np.ndarray
    scale: float
    offset: float
    noise_sd: float

    def expected_activity(self, fp: Fingerprint) -> float:
        """Noise-free activity for a fingerprint under this assay."""
        lo, hi = ACTIVITY_CLIP_RANGE
        raw = float(fp.to_float(np.float64)[self.support] @ self.weights)
        return float(np.clip(self.scale * raw + self.offset, lo, hi))


_BRANCHES = ("(C)", "(O)", "(CC)", "(OC)", "(c1ccccc1)")
_BRANCH_HEAVY = (1, 1, 2, 2, 6)

# keep generated molecules safely inside the 10..70 heavy-atom window
_SCAFFOLD_RANGE = (10, 17)
_HEAVY_CAP = 60


def _random_scaffold(rng: np.random.Generator) -> list[str]:
    length = int(rng.integers(*_SCAFFOLD_RANGE))
    units = []
    for i in range(length):
        if i > 0 and units[-1] == "C" and rng.random() < 0.15:
            units.append("O")
        else:
            units.append("C")
    return units


def _decorate(scaffold: list[str], rng: np.random.Generator) -> str:
    """One molecule: the assay scaffold with random branch decorations."""
    tokens: list[str] = []
    heavy = 0
    for unit in scaffold:
        # occasional backbone swap keeps within-assay variation alive
        if unit == "C" and rng.random() < 0.06:
            unit = "O"
        elif unit == "O" and rng.random() < 0.2:
            unit = "C"
        tokens.append(unit)
        heavy += 1
        # branch only at carbon; a branch on chain oxygen would give it
        # three bonds
        if unit == "C" and rng.random() < 0.3:
            b = int(rng.integers(len(_BRANCHES)))
            if heavy + _BRANCH_HEAVY[b] <= _HEAVY_CAP:
                tokens.append(_BRANCHES[b])
                heavy += _BRANCH_HEAVY[b]
    for _ in range(int(rng.integers(0, 4))):
        if heavy >= _HEAVY_CAP:
            break
        tokens.append("C")
        heavy += 1
    return "".join(tokens)


def _assay_molecules(scaffold: list[str], count: int,
                     rng: np.random.Generator) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        smiles = _decorate(scaffold, rng)
        # force uniqueness; the appended atoms stay under the window cap
        while smiles in seen:
            smiles += "C"
        seen.add(smiles)
        out.append(smiles)
    return out


def generate_synthetic(
    spec: SyntheticSpec, seed: int | None = None
) -> tuple[Dataset, dict[str, AssayTruth]]:
    """Build a synthetic dataset plus its hidden per-assay truth.

    Deterministic in the seed: the same spec and seed give byte-identical
    dumps. With noise_sd 0 each stored activity equals
    truth.expected_activity of its fingerprint exactly.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    lo, hi = ACTIVITY_CLIP_RANGE
    # sparsity 0 means no signal at all: every activity collapses to the
    # assay offset, which the standardization guard below preserves
    n_support = int(round(spec.weight_sparsity * spec.nbits))
    if spec.weight_sparsity > 0:
        n_support = max(1, n_support)

    shared: list[tuple[str, Fingerprint]] | None = None
    if spec.shared_pool:
        scaffold = _random_scaffold(rng)
        molecules = _assay_molecules(scaffold, spec.molecules_per_assay, rng)
        shared = [
            (s, morgan_fingerprint(parse_smiles(s), spec.radius, spec.nbits))
            for s in molecules
        ]

    global_support: np.ndarray | None = None
    if spec.shared_support:
        # only bits that vary over the pool can carry signal; a constant
        # support bit would fold into the offset and leave pure noise.
        # prefer balanced bits (set in 20-80% of the pool) so a small
        # context sample usually observes both values of each bit
        pool_bits = np.stack([fp.to_float(np.float64) for _, fp in shared])
        freq = pool_bits.mean(axis=0)
        candidates = np.flatnonzero((freq >= 0.2) & (freq <= 0.8))
        if len(candidates) < n_support:
            candidates = np.flatnonzero(pool_bits.std(axis=0) > 0)
        if len(candidates) < n_support:
            raise IngestError(
                f"pool has only {len(candidates)} varying bits, "
                f"need {n_support} for the shared support"
            )
        picks = rng.choice(len(candidates), size=n_support, replace=False)
        global_support = np.sort(candidates[picks])

    assays: dict[str, list[Entry]] = {}
    truths: dict[str, AssayTruth] = {}
    width = len(str(spec.n_assays - 1))
    for k in range(spec.n_assays):
        assay_id = f"synth-{k:0{width}d}"
        if shared is not None:
            pairs = shared
        else:
            scaffold = _random_scaffold(rng)
            molecules = _assay_molecules(scaffold, spec.molecules_per_assay, rng)
            pairs = [
                (s, morgan_fingerprint(parse_smiles(s), spec.radius, spec.nbits))
                for s in molecules
            ]

        if global_support is not None:
            support = global_support
        else:
            support = np.sort(rng.choice(spec.nbits, size=n_support, replace=False))
        weights = rng.standard_normal(n_support)
        offset = float(rng.uniform(spec.offset_low, spec.offset_high))

        bits = np.stack([fp.to_float(np.float64) for _, fp in pairs])
        raw = bits[:, support] @ weights
        sd = float(raw.std())
        if sd < 1e-12:
            eff_scale, eff_offset = 0.0, offset
        else:
            # standardize the raw signal, then fold the standardization
            # into the recorded truth so expected_activity is affine in fp
            mean = float(raw.mean())
            eff_scale = spec.scale / sd
            eff_offset = offset - eff_scale * mean
        noise = spec.noise_sd * rng.standard_normal(len(pairs))
        activities = np.clip(eff_scale * raw + eff_offset + noise, lo, hi)

        assays[assay_id] = [
            Entry(smiles, fp, float(a))
            for (smiles, fp), a in zip(pairs, activities)
        ]
        truths[assay_id] = AssayTruth(
            support=support,
            weights=weights,
            scale=eff_scale,
            offset=eff_offset,
            noise_sd=spec.noise_sd,
        )

    counters = dict.fromkeys(_PROVENANCE_KEYS, 0)
    counters["rows_stored"] = sum(len(v) for v in assays.values())
    return (
        Dataset(
            assays=assays,
            nbits=spec.nbits,
            radius=spec.radius,
            provenance=counters,
        ),
        truths,
    )


# ---- fast batched sampling for the training loop ----


class BatchSampler:
    """Episode batches as dense arrays, skipping Episode objects.

    Follows the same rules as sample_episode (query excluded from its
    own contexts, constraint filter, without replacement when the pool
    allows it). Assays that can never yield an episode are skipped up
    front and listed in ``skipped`` as (assay_id, reason) pairs.
    """

    def __init__(self, dataset: Dataset, n_context: int,
                 variant: str = "full", constraint: str = "none"):
        if constraint not in CONSTRAINTS:
            raise ValueError(
                f"unknown constraint {constraint!r}, expected {CONSTRAINTS}"
            )
        self.n_context = n_context
        self.variant = variant
        self.skipped: list[tuple[str, str]] = []

        self._bits: list[np.ndarray] = []
        self._acts: list[np.ndarray] = []
        self._eligible: list[np.ndarray] = []
        self.assay_ids: list[str] = []
        for assay_id in dataset.assay_ids():
            entries = dataset.assays[assay_id]
            eligible = eligible_context_indices(entries, constraint)
            if constraint == "weak_only" and len(eligible) < n_context:
                self.skipped.append(
                    (assay_id,
                     f"{len(eligible)} weak compounds, need {n_context}")
                )
                continue
            if len(entries) < 2 or not eligible:
                self.skipped.append((assay_id, "fewer than 2 usable compounds"))
                continue
            self.assay_ids.append(assay_id)
            self._bits.append(
                np.stack([e.fingerprint.to_float(np.float32) for e in entries])
            )
            self._acts.append(
                np.asarray([e.activity for e in entries], dtype=np.float32)
            )
            self._eligible.append(np.asarray(eligible, dtype=np.int64))
        if not self.assay_ids:
            raise InsufficientContextsError(
                "no assay can supply episodes under the given constraint"
            )

    def sample_batch(
        self, batch_size: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """Draw (query_bits, context_feats, targets) for one step."""
        n = self.n_context
        n_assays = len(self.assay_ids)
        q_rows = np.empty((batch_size, self._bits[0].shape[1]), dtype=np.float32)
        y = np.empty(batch_size, dtype=np.float32)
        ctx_rows = None
        ctx_acts = None
        if self.variant != "no_context":
            ctx_rows = np.empty(
                (batch_size, n, self._bits[0].shape[1]), dtype=np.float32
            )
            ctx_acts = np.empty((batch_size, n), dtype=np.float32)

        assay_picks = rng.integers(0, n_assays, size=batch_size)
        for b in range(batch_size):
            a = int(assay_picks[b])
            bits, acts, eligible = self._bits[a], self._acts[a], self._eligible[a]
            m = len(acts)
            for _ in range(100):
                qi = int(rng.integers(m))
                pool = eligible[eligible != qi]
                if pool.size:
                    break
            else:
                raise InsufficientContextsError(
                    f"assay {self.assay_ids[a]}: cannot place a query "
                    "with a nonempty context pool"
                )
            q_rows[b] = bits[qi]
            y[b] = acts[qi]
            if ctx_rows is not None:
                picks = rng.choice(pool.size, size=n, replace=pool.size < n)
                chosen = pool[picks]
                ctx_rows[b] = bits[chosen]
                ctx_acts[b] = acts[chosen]

        if ctx_rows is None:
            return q_rows, None, y
        return q_rows, context_feature_matrix(self.variant, ctx_rows, ctx_acts), y

    def batches(self, batch_size: int, steps: int,
                rng: np.random.Generator):
        for _ in range(steps):
            yield self.sample_batch(batch_size, rng)
