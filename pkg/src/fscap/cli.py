"""Command line interface: ingest, synth, train, eval, probe, predict.

Every command is deterministic given its inputs, config, and seed.
Diagnostics go to stderr; result tables are TSV with a header row.

Exit codes:
    0  success
    2  input error (bad file, bad flag, malformed config, incompatible data)
    3  empty result (nothing survived filtering or evaluation)
    4  numeric failure (training diverged)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass

import numpy as np

from .data import (
    CONSTRAINTS,
    BatchSampler,
    Dataset,
    IngestError,
    IngestOptions,
    InsufficientContextsError,
    SyntheticSpec,
    dump_dataset,
    format_provenance,
    generate_synthetic,
    ingest_tsv,
    load_dataset,
    sample_episode,
    split_assays,
)
from .fingerprint import morgan_fingerprint
from .metrics import (
    ConstantInputError,
    SingleClassError,
    enrichment,
    logistic_probe,
    mean_per_group_r,
    roc_auc,
)
from .model import (
    Episode,
    FSCAPConfig,
    FSCAPModel,
    ModelFileError,
    TrainingDivergedError,
    VARIANTS,
    encode_context_set,
    load_model,
    predict_batch,
    save_model,
    train_epoch,
)
from .nn import AdamState, LRSchedule, lr_at
from .smiles import SmilesParseError, parse_smiles

__all__ = ["RunConfig", "main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_NUMERIC = 4

# Distinct per-purpose rng streams derived from one user seed, so that e.g.
# model init and episode sampling never replay the same number sequence.
_STREAM_INIT = 0
_STREAM_TRAIN = 1
_STREAM_EVAL = 2
_STREAM_SCREEN = 3
_STREAM_PROBE = 4


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


class CliError(Exception):
    """User-facing error with an exit code."""

    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Flat training configuration: model hyperparameters plus run settings.

    Serialized as a single flat JSON object. Unknown keys are rejected so a
    typo cannot silently fall back to a default. ``nbits``/``radius`` default
    to None, meaning "take them from the dataset"; setting them explicitly
    asserts they match.

    ``total_episodes`` counts training episodes seen; the optimizer runs
    ``total_episodes // batch_size`` steps.
    """

    # model
    nbits: int | None = None
    radius: int | None = None
    encoding_dim: int = 512
    n_layers: int = 6
    mlp_width: int = 2048
    dropout_p: float = 0.1
    n_context: int = 8
    variant: str = "full"
    attention_layers: int = 4
    attention_heads: int = 4
    # optimization
    batch_size: int = 1024
    base_lr: float = 5e-5
    warmup_steps: int = 128
    total_episodes: int = 2**20
    steps_per_epoch: int = 500
    seed: int = 0
    constraint: str = "none"
    # data handling
    n_test_assays: int = 0
    n_validation_assays: int = 0
    # optional paths (flags override)
    dataset: str | None = None
    out: str | None = None
    log: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_episodes < 1:
            raise ValueError("total_episodes must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}")
        if self.n_test_assays < 0 or self.n_validation_assays < 0:
            raise ValueError("assay split sizes must be >= 0")

    @property
    def total_steps(self) -> int:
        return max(1, self.total_episodes // self.batch_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def model_config(self, dataset: Dataset) -> FSCAPConfig:
        nbits = self.nbits if self.nbits is not None else dataset.nbits
        radius = self.radius if self.radius is not None else dataset.radius
        if nbits != dataset.nbits:
            raise CliError(
                f"config nbits={nbits} but dataset was fingerprinted at {dataset.nbits}"
            )
        if radius != dataset.radius:
            raise CliError(
                f"config radius={radius} but dataset was fingerprinted at {dataset.radius}"
            )
        return FSCAPConfig(
            nbits=nbits,
            radius=radius,
            encoding_dim=self.encoding_dim,
            n_layers=self.n_layers,
            mlp_width=self.mlp_width,
            dropout_p=self.dropout_p,
            n_context=self.n_context,
            variant=self.variant,
            attention_layers=self.attention_layers,
            attention_heads=self.attention_heads,
        )


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """CLI flags beat config-file values; only flags the user passed apply."""
    updates = {}
    for flag, key in (
        ("variant", "variant"),
        ("n_context", "n_context"),
        ("constraint", "constraint"),
        ("seed", "seed"),
        ("batch_size", "batch_size"),
        ("base_lr", "base_lr"),
        ("total_episodes", "total_episodes"),
        ("dataset", "dataset"),
        ("out", "out"),
        ("log", "log"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if not updates:
        return cfg
    return RunConfig.from_dict({**cfg.to_dict(), **updates})


def _fingerprint_smiles(smiles: str, config: FSCAPConfig):
    mol = parse_smiles(smiles)
    return morgan_fingerprint(mol, radius=config.radius, nbits=config.nbits)


def _read_context_pairs(path: str, config: FSCAPConfig) -> list[tuple]:
    """Parse a context TSV with columns smiles, activity_log10_nm."""
    import csv

    pairs = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            raise CliError(f"{path}: empty context file")
        missing = {"smiles", "activity_log10_nm"} - set(reader.fieldnames)
        if missing:
            raise CliError(f"{path}: missing context columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            smiles = (row.get("smiles") or "").strip()
            raw = (row.get("activity_log10_nm") or "").strip()
            if not smiles or not raw:
                raise CliError(f"{path}:{lineno}: incomplete context row")
            try:
                activity = float(raw)
            except ValueError:
                raise CliError(f"{path}:{lineno}: bad activity {raw!r}") from None
            if not np.isfinite(activity):
                raise CliError(f"{path}:{lineno}: non-finite activity")
            try:
                fp = _fingerprint_smiles(smiles, config)
            except SmilesParseError as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
            pairs.append((fp, activity))
    return pairs


def _read_assay_context_pairs(path: str, config: FSCAPConfig) -> dict[str, list]:
    """Parse a screening context TSV: assay_id, smiles, activity_log10_nm."""
    import csv

    by_assay: dict[str, list] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            raise CliError(f"{path}: empty context file")
        missing = {"assay_id", "smiles", "activity_log10_nm"} - set(reader.fieldnames)
        if missing:
            raise CliError(f"{path}: missing context columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            assay = (row.get("assay_id") or "").strip()
            smiles = (row.get("smiles") or "").strip()
            raw = (row.get("activity_log10_nm") or "").strip()
            if not assay or not smiles or not raw:
                raise CliError(f"{path}:{lineno}: incomplete context row")
            try:
                activity = float(raw)
            except ValueError:
                raise CliError(f"{path}:{lineno}: bad activity {raw!r}") from None
            try:
                fp = _fingerprint_smiles(smiles, config)
            except SmilesParseError as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
            by_assay.setdefault(assay, []).append((fp, activity))
    return by_assay


def _predict_episodes(model: FSCAPModel, episodes: list[Episode]) -> np.ndarray:
    """Batched eval-mode predictions over an arbitrary episode list."""
    out = np.empty(len(episodes), dtype=np.float64)
    chunk = 512
    for lo in range(0, len(episodes), chunk):
        part = episodes[lo : lo + chunk]
        out[lo : lo + len(part)] = predict_batch(model, part)
    return out


# ---------------------------------------------------------------------------
# evaluation protocols (score_fn injectable for testing)


def evaluate_pearson(
    model_or_scorer,
    dataset: Dataset,
    n_context: int,
    rng: np.random.Generator,
    episodes_per_query: int = 1,
    constraint: str = "none",
):
    """Per-assay correlation protocol.

    Every compound of every assay is used as the query exactly once, with
    ``episodes_per_query`` freshly sampled context sets (its predictions are
    averaged). Returns (GroupReport, sampling_skips) where sampling_skips
    maps assay_id -> reason for assays where no episode could be built.
    """
    score_fn = (
        model_or_scorer
        if callable(model_or_scorer)
        else lambda eps: _predict_episodes(model_or_scorer, eps)
    )
    if episodes_per_query < 1:
        raise ValueError("episodes_per_query must be >= 1")
    records = []
    sampling_skips: dict[str, str] = {}
    for assay_id in dataset.assay_ids():
        entries = dataset.assays[assay_id]
        episodes: list[Episode] = []
        try:
            for qi in range(len(entries)):
                for _ in range(episodes_per_query):
                    episodes.append(
                        sample_episode(
                            dataset,
                            assay_id,
                            n_context,
                            rng,
                            constraint=constraint,
                            query_index=qi,
                        )
                    )
        except InsufficientContextsError as exc:
            sampling_skips[assay_id] = str(exc)
            continue
        preds = np.asarray(score_fn(episodes), dtype=np.float64)
        preds = preds.reshape(len(entries), episodes_per_query).mean(axis=1)
        for entry, pred in zip(entries, preds):
            records.append((assay_id, float(pred), entry.activity))
    report = mean_per_group_r(records)
    return report, sampling_skips


def evaluate_screen(
    model_or_scorer,
    dataset: Dataset,
    contexts_by_assay: dict[str, list],
    n_context: int,
    ks: list[float],
    rng: np.random.Generator,
    episodes_per_query: int = 1,
):
    """Virtual screening protocol over a binary-labeled dataset.

    Context compounds come from ``contexts_by_assay`` (never from the
    labeled screening set itself). Scores are averaged over
    ``episodes_per_query`` context draws, then ranked with low predicted
    log10 nM first. Returns (rows, skipped) where each row is a dict with
    roc_auc and one enrichment value per k.
    """
    score_fn = (
        model_or_scorer
        if callable(model_or_scorer)
        else lambda eps: _predict_episodes(model_or_scorer, eps)
    )
    if episodes_per_query < 1:
        raise ValueError("episodes_per_query must be >= 1")
    rows = []
    skipped: dict[str, str] = {}
    for assay_id in dataset.assay_ids():
        pool = contexts_by_assay.get(assay_id)
        if not pool:
            skipped[assay_id] = "no context compounds supplied"
            continue
        if len(pool) < n_context:
            skipped[assay_id] = (
                f"{len(pool)} context compounds supplied, model needs {n_context}"
            )
            continue
        entries = dataset.assays[assay_id]
        labels = np.array([int(e.activity) for e in entries])
        if labels.min() == labels.max():
            skipped[assay_id] = "single-class labels"
            continue
        scores = np.zeros(len(entries), dtype=np.float64)
        for _ in range(episodes_per_query):
            picks = rng.choice(len(pool), size=n_context, replace=False)
            contexts = [pool[int(i)] for i in picks]
            episodes = [
                Episode(query_fp=e.fingerprint, contexts=contexts, target=0.0)
                for e in entries
            ]
            scores += np.asarray(score_fn(episodes), dtype=np.float64)
        scores /= episodes_per_query
        row = {
            "assay_id": assay_id,
            "n": len(entries),
            "n_active": int(labels.sum()),
            "roc_auc": roc_auc(scores, labels, invert=True),
        }
        for k in ks:
            row[f"enrichment_{k:g}"] = enrichment(scores, labels, k, invert=True)
        rows.append(row)
    return rows, skipped


def probe_instances(
    model: FSCAPModel,
    dataset: Dataset,
    class_ids: list[str],
    n_context: int,
    trials: int,
    rng: np.random.Generator,
):
    """Build (encoding, class) pairs from compounds shared across classes.

    Each trial draws one set of shared compounds; every class contributes
    the encoding of that same compound set under its own activity values,
    so the only signal separating classes is what the activities impose
    on the encoding.
    """
    shared: set[str] | None = None
    for assay_id in class_ids:
        smiles_set = {e.smiles for e in dataset.assays[assay_id]}
        shared = smiles_set if shared is None else shared & smiles_set
    shared_sorted = sorted(shared or ())
    if len(shared_sorted) < n_context:
        raise CliError(
            f"classes share only {len(shared_sorted)} compounds, "
            f"need at least n_context={n_context}"
        )
    lookup = {
        assay_id: {e.smiles: (e.fingerprint, e.activity) for e in dataset.assays[assay_id]}
        for assay_id in class_ids
    }
    encodings = []
    labels = []
    for _ in range(trials):
        picks = rng.choice(len(shared_sorted), size=n_context, replace=False)
        chosen = [shared_sorted[int(i)] for i in picks]
        for label, assay_id in enumerate(class_ids):
            contexts = [lookup[assay_id][s] for s in chosen]
            encodings.append(encode_context_set(model, contexts))
            labels.append(label)
    return np.stack(encodings), np.array(labels)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    options = IngestOptions(
        nbits=args.nbits,
        radius=args.radius,
        min_heavy_atoms=args.min_heavy,
        max_heavy_atoms=args.max_heavy,
        min_assay_compounds=args.min_assay_compounds,
        binary_labels=args.labels == "binary",
    )
    dataset = ingest_tsv(args.input, options)
    report = format_provenance(dataset)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    else:
        print(report)
    if dataset.n_assays == 0:
        print("no assays survived filters", file=sys.stderr)
        return EXIT_EMPTY
    dump_dataset(dataset, args.output)
    print(
        f"wrote {dataset.n_assays} assays / {dataset.n_compounds} compounds to {args.output}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_assays=args.n_assays,
        molecules_per_assay=args.molecules_per_assay,
        nbits=args.nbits,
        radius=args.radius,
        weight_sparsity=args.weight_sparsity,
        noise_sd=args.noise_sd,
        scale=args.scale,
        offset_low=args.offset_low,
        offset_high=args.offset_high,
        shared_pool=args.shared_pool,
        shared_support=args.shared_support,
        seed=args.seed,
    )
    dataset, truths = generate_synthetic(spec)
    dump_dataset(dataset, args.out)
    if args.truth_out:
        payload = {
            assay_id: {
                "support": [int(i) for i in truth.support],
                "weights": [float(w) for w in truth.weights],
                "scale": truth.scale,
                "offset": truth.offset,
                "noise_sd": truth.noise_sd,
            }
            for assay_id, truth in truths.items()
        }
        with open(args.truth_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")
    print(
        f"wrote {dataset.n_assays} synthetic assays / {dataset.n_compounds} compounds to {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_split(args) -> int:
    dataset = load_dataset(args.input)
    train, test = split_assays(dataset, args.n_test, args.seed)
    if train.n_assays == 0 or test.n_assays == 0:
        print("split left one side empty", file=sys.stderr)
        return EXIT_EMPTY
    dump_dataset(train, args.train_out)
    dump_dataset(test, args.test_out)
    print(
        f"split {dataset.n_assays} assays into {train.n_assays} train / "
        f"{test.n_assays} test",
        file=sys.stderr,
    )
    return EXIT_OK


def _mean_val_r(model, dataset, cfg, rng) -> float | None:
    try:
        report, _ = evaluate_pearson(
            model, dataset, cfg.n_context, rng, episodes_per_query=1,
            constraint=cfg.constraint,
        )
        return report.mean_r
    except (ValueError, InsufficientContextsError):
        return None


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = _apply_overrides(cfg, args)
    if cfg.dataset is None:
        raise CliError("no dataset: pass --dataset or set it in the config")
    if cfg.out is None:
        raise CliError("no output path: pass --out or set it in the config")
    dataset = load_dataset(cfg.dataset)
    if dataset.binary_labels:
        raise CliError("training needs continuous activities, got binary labels")
    model_cfg = cfg.model_config(dataset)
    # model_config validated nbits/radius against the dataset; freeze the
    # resolved values so a dumped config is self-contained.
    cfg = RunConfig.from_dict(
        {**cfg.to_dict(), "nbits": model_cfg.nbits, "radius": model_cfg.radius}
    )
    if args.dump_config:
        with open(args.dump_config, "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    train_set = dataset
    if cfg.n_test_assays > 0:
        train_set, _test = split_assays(train_set, cfg.n_test_assays, cfg.seed)
    val_set = None
    if cfg.n_validation_assays > 0:
        train_set, val_set = split_assays(
            train_set, cfg.n_validation_assays, cfg.seed + 1
        )

    sampler = BatchSampler(
        train_set, cfg.n_context, variant=model_cfg.variant, constraint=cfg.constraint
    )

    model = FSCAPModel(model_cfg, rng=_rng(cfg.seed, _STREAM_INIT))
    optimizer = AdamState()
    schedule = LRSchedule(
        base_lr=cfg.base_lr,
        total_steps=cfg.total_steps,
        warmup_steps=min(cfg.warmup_steps, cfg.total_steps),
    )
    train_rng = _rng(cfg.seed, _STREAM_TRAIN)

    log_fh = open(cfg.log, "w", encoding="utf-8") if cfg.log else sys.stderr
    try:
        # comment-prefixed so the log stays machine-readable as a TSV
        for assay_id, reason in sampler.skipped:
            print(f"# skipped assay {assay_id}: {reason}", file=log_fh)
        columns = "epoch\tsteps_done\tmean_loss\tlr"
        if val_set is not None:
            columns += "\tval_mean_r"
        print(columns, file=log_fh, flush=True)
        steps_left = cfg.total_steps
        epoch = 0
        while steps_left > 0:
            steps = min(cfg.steps_per_epoch, steps_left)
            batches = sampler.batches(cfg.batch_size, steps, train_rng)
            mean_loss = train_epoch(model, batches, optimizer, schedule, train_rng)
            steps_left -= steps
            epoch += 1
            lr_now = lr_at(schedule, min(optimizer.t, cfg.total_steps - 1))
            line = f"{epoch}\t{optimizer.t}\t{mean_loss:.6f}\t{lr_now:.8g}"
            if val_set is not None:
                val_r = _mean_val_r(model, val_set, cfg, _rng(cfg.seed, _STREAM_EVAL))
                line += "\t" + ("nan" if val_r is None else f"{val_r:.4f}")
            print(line, file=log_fh, flush=True)
    finally:
        if log_fh is not sys.stderr:
            log_fh.close()

    save_model(model, cfg.out)
    print(f"saved model to {cfg.out}", file=sys.stderr)
    return EXIT_OK


def _print_table(rows: list[dict], columns: list[str], out_path: str | None):
    def fmt(v) -> str:
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    lines = ["\t".join(columns)]
    lines.extend("\t".join(fmt(row[c]) for c in columns) for row in rows)
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    if dataset.nbits != model.config.nbits or dataset.radius != model.config.radius:
        raise CliError(
            f"model fingerprints ({model.config.nbits} bits, radius "
            f"{model.config.radius}) do not match dataset "
            f"({dataset.nbits} bits, radius {dataset.radius})"
        )
    n_context = model.config.n_context

    if args.protocol == "pearson":
        if dataset.binary_labels:
            raise CliError("pearson protocol needs continuous activities")
        report, sampling_skips = evaluate_pearson(
            model,
            dataset,
            n_context,
            _rng(args.seed, _STREAM_EVAL),
            episodes_per_query=args.episodes_per_query,
            constraint=args.constraint,
        )
        for assay_id, reason in sorted(sampling_skips.items()):
            print(f"skipped assay {assay_id}: {reason}", file=sys.stderr)
        for assay_id, reason in sorted(report.skipped.items()):
            print(f"skipped assay {assay_id}: {reason}", file=sys.stderr)
        if not report.per_group:
            print("no assay produced a valid correlation", file=sys.stderr)
            return EXIT_EMPTY
        rows = [
            {"assay_id": a, "n": len(dataset.assays[a]), "pearson_r": r}
            for a, r in sorted(report.per_group.items())
        ]
        rows.append(
            {"assay_id": "MEAN", "n": sum(r["n"] for r in rows), "pearson_r": report.mean_r}
        )
        _print_table(rows, ["assay_id", "n", "pearson_r"], args.out)
        print(
            f"mean r {report.mean_r:.4f} over {len(report.per_group)} assays",
            file=sys.stderr,
        )
        return EXIT_OK

    # screening protocol
    if not dataset.binary_labels:
        raise CliError("screen protocol needs a binary-labeled dataset")
    if not args.contexts:
        raise CliError("screen protocol needs --contexts")
    ks = _parse_ks(args.k)
    contexts_by_assay = _read_assay_context_pairs(args.contexts, model.config)
    rows, skipped = evaluate_screen(
        model,
        dataset,
        contexts_by_assay,
        n_context,
        ks,
        _rng(args.seed, _STREAM_SCREEN),
        episodes_per_query=args.episodes_per_query,
    )
    for assay_id, reason in sorted(skipped.items()):
        print(f"skipped assay {assay_id}: {reason}", file=sys.stderr)
    if not rows:
        print("no assay could be screened", file=sys.stderr)
        return EXIT_EMPTY
    columns = ["assay_id", "n", "n_active", "roc_auc"]
    columns += [f"enrichment_{k:g}" for k in ks]
    mean_row = {"assay_id": "MEAN", "n": sum(r["n"] for r in rows),
                "n_active": sum(r["n_active"] for r in rows)}
    for c in columns[3:]:
        mean_row[c] = float(np.mean([r[c] for r in rows]))
    _print_table(rows + [mean_row], columns, args.out)
    return EXIT_OK


def _parse_ks(raw: str) -> list[float]:
    ks = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            k = float(part)
        except ValueError:
            raise CliError(f"bad enrichment percentage {part!r}") from None
        if not 0 < k <= 100:
            raise CliError(f"enrichment percentage {k:g} outside (0, 100]")
        ks.append(k)
    if not ks:
        raise CliError("no enrichment percentages given")
    return ks


def cmd_probe(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    if dataset.nbits != model.config.nbits or dataset.radius != model.config.radius:
        raise CliError("model and dataset fingerprint settings do not match")
    n_context = args.n_context if args.n_context else model.config.n_context
    if args.classes < 2:
        raise CliError("need at least 2 classes")
    if args.trials < 1:
        raise CliError("need at least 1 trial")
    all_ids = dataset.assay_ids()
    if args.classes > len(all_ids):
        raise CliError(f"dataset has {len(all_ids)} assays, asked for {args.classes} classes")
    rng = _rng(args.seed, _STREAM_PROBE)
    picks = rng.choice(len(all_ids), size=args.classes, replace=False)
    class_ids = [all_ids[int(i)] for i in picks]
    encodings, labels = probe_instances(
        model, dataset, class_ids, n_context, args.trials, rng
    )
    if args.shuffle_labels:
        labels = labels[rng.permutation(len(labels))]
    if args.export_encodings:
        dim = encodings.shape[1]
        with open(args.export_encodings, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("group\t" + "\t".join(f"enc_{i}" for i in range(dim)) + "\n")
            for label, enc in zip(labels, encodings):
                fh.write(
                    class_ids[int(label)]
                    + "\t"
                    + "\t".join(repr(float(v)) for v in enc)
                    + "\n"
                )
    result = logistic_probe(encodings, labels, train_frac=0.8, seed=args.seed)
    chance = 100.0 / args.classes
    print("classes\ttrials\tn_train\tn_test\ttrain_accuracy_pct\ttest_accuracy_pct\tchance_pct")
    print(
        f"{args.classes}\t{args.trials}\t{result.n_train}\t{result.n_test}"
        f"\t{100 * result.train_accuracy:.2f}\t{100 * result.test_accuracy:.2f}"
        f"\t{chance:.2f}"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    contexts = _read_context_pairs(args.contexts, model.config)
    if len(contexts) != model.config.n_context:
        raise CliError(
            f"{args.contexts}: {len(contexts)} context rows, "
            f"model needs exactly {model.config.n_context}"
        )
    kept: list[tuple[str, Episode]] = []
    with open(args.queries, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            smiles = line.strip()
            if not smiles:
                continue
            try:
                fp = _fingerprint_smiles(smiles, model.config)
            except SmilesParseError as exc:
                print(f"{args.queries}:{lineno}: skipped: {exc}", file=sys.stderr)
                continue
            kept.append((smiles, Episode(query_fp=fp, contexts=contexts, target=0.0)))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("smiles\tpredicted_activity_log10_nm\n")
        if kept:
            preds = _predict_episodes(model, [ep for _, ep in kept])
            for (smiles, _), pred in zip(kept, preds):
                fh.write(f"{smiles}\t{pred:.4f}\n")
    print(f"wrote {len(kept)} predictions to {args.out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fscap",
        description="Few-shot compound activity prediction toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert an activity TSV into a dataset file")
    p.add_argument("--input", required=True, help="TSV with smiles/assay_id/activity_nm")
    p.add_argument("--output", required=True, help="dataset JSON to write")
    p.add_argument("--report", help="write the provenance report here instead of stdout")
    p.add_argument("--nbits", type=int, default=2048)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--min-heavy", type=int, default=10)
    p.add_argument("--max-heavy", type=int, default=70)
    p.add_argument("--min-assay-compounds", type=int, default=10)
    p.add_argument(
        "--labels",
        choices=("continuous", "binary"),
        default="continuous",
        help="binary: activity column holds 0/1 screening labels",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="write per-assay generating parameters here")
    p.add_argument("--n-assays", type=int, default=200)
    p.add_argument("--molecules-per-assay", type=int, default=60)
    p.add_argument("--nbits", type=int, default=256)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--weight-sparsity", type=float, default=0.1)
    p.add_argument("--noise-sd", type=float, default=0.25)
    p.add_argument("--scale", type=float, default=1.2)
    p.add_argument("--offset-low", type=float, default=1.0)
    p.add_argument("--offset-high", type=float, default=3.0)
    p.add_argument("--shared-pool", action="store_true")
    p.add_argument("--shared-support", action="store_true",
                   help="one global support set over pool-varying bits")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="hold out whole assays into a test dataset")
    p.add_argument("--input", required=True, help="dataset JSON to split")
    p.add_argument("--n-test", type=int, required=True, dest="n_test")
    p.add_argument("--train-out", required=True, dest="train_out")
    p.add_argument("--test-out", required=True, dest="test_out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", help="dataset JSON (overrides config)")
    p.add_argument("--config", help="flat JSON run config")
    p.add_argument("--out", help="model file to write (overrides config)")
    p.add_argument("--log", help="training log TSV (default: stderr)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--n-context", type=int, dest="n_context")
    p.add_argument(
        "--constraint",
        choices=("weak-only", "none"),
        type=lambda s: s.replace("-", "_"),
        help="episode sampling constraint",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--total-episodes", type=int, dest="total_episodes")
    p.add_argument("--dump-config", help="write the effective config JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", required=True, choices=("pearson", "screen"))
    p.add_argument("--contexts", help="screen protocol: context TSV (assay_id, smiles, activity_log10_nm)")
    p.add_argument("--k", default="0.5,1,2", help="enrichment percentages, comma separated")
    p.add_argument("--episodes-per-query", type=int, default=1, dest="episodes_per_query")
    p.add_argument(
        "--constraint",
        choices=("weak-only", "none"),
        type=lambda s: s.replace("-", "_"),
        default="none",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the result table here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="classify assay identity from context encodings")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--trials", type=int, default=15, help="context draws per class")
    p.add_argument("--n-context", type=int, dest="n_context")
    p.add_argument("--shuffle-labels", action="store_true", help="chance-level control")
    p.add_argument("--export-encodings", help="write probe encodings TSV here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("predict", help="score query compounds against one context set")
    p.add_argument("--model", required=True)
    p.add_argument("--contexts", required=True, help="TSV (smiles, activity_log10_nm), exactly n_context rows")
    p.add_argument("--queries", required=True, help="file with one SMILES per line")
    p.add_argument("--out", required=True, help="TSV of predictions to write")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        IngestError,
        ModelFileError,
        SmilesParseError,
        InsufficientContextsError,
        ConstantInputError,
        SingleClassError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
