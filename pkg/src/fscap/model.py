"""Few-shot activity prediction from context compounds.

A context set is a handful of (fingerprint, activity) measurements from
one assay. Context compounds are featurized (bits scaled by activity, or
bits with the activity appended), run through the context encoder, and
averaged into a single assay encoding. The query compound's raw bits run
through the query encoder, and the predictor maps the concatenated pair
to one activity value in log10 nM.

Variants (ablations of the full architecture):

* full: as above.
* no_query_encoding: the predictor sees the assay encoding next to the
  query's raw bits; there is no query encoder.
* concatenated_context: context featurization appends the activity as an
  extra input column instead of scaling the bits.
* no_context: the predictor sees only the query bits; a plain
  one-compound-at-a-time regressor, the transfer-free baseline.
* attentive_aggregation: a self-attention stack mixes the context
  encodings before the average.

Context aggregation sorts the encoded rows into a canonical byte order
before attention and the mean, and backward undoes the sort. The model
is therefore bit-exactly invariant to context ordering, not merely up to
float rounding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fingerprint import Fingerprint
from .nn import (
    MLP,
    AdamState,
    BatchNorm,
    Dropout,
    Linear,
    LRSchedule,
    Param,
    ReLU,
    SelfAttentionStack,
    adam_step,
    lr_at,
    mse_loss,
)

__all__ = [
    "Episode",
    "FSCAPConfig",
    "FSCAPModel",
    "ModelFileError",
    "ModelFormatError",
    "TrainingDivergedError",
    "VARIANTS",
    "encode_context_set",
    "episodes_to_arrays",
    "featurize_context",
    "load_model",
    "predict",
    "predict_batch",
    "save_model",
    "train_epoch",
]

VARIANTS = (
    "full",
    "no_query_encoding",
    "concatenated_context",
    "no_context",
    "attentive_aggregation",
)

MODEL_FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Unreadable or structurally invalid model file."""


class ModelFormatError(ModelFileError):
    """Model file with an unsupported format version."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class FSCAPConfig:
    """Architecture plus the fingerprint recipe the model expects.

    nbits and radius travel with the model so a saved model can
    fingerprint raw SMILES consistently at prediction time.
    """

    nbits: int = 2048
    radius: int = 3
    encoding_dim: int = 512
    n_layers: int = 6
    mlp_width: int = 2048
    dropout_p: float = 0.1
    n_context: int = 8
    variant: str = "full"
    attention_layers: int = 4
    attention_heads: int = 4

    def __post_init__(self):
        if self.nbits < 64 or self.nbits & (self.nbits - 1):
            raise ValueError(f"nbits must be a power of two >= 64, got {self.nbits}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        for name in ("encoding_dim", "n_layers", "mlp_width", "n_context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}, expected one of {VARIANTS}"
            )
        if self.variant == "attentive_aggregation":
            if self.attention_layers < 1 or self.attention_heads < 1:
                raise ValueError("attention_layers and attention_heads must be >= 1")
            if self.encoding_dim % self.attention_heads:
                raise ValueError(
                    f"encoding_dim {self.encoding_dim} not divisible by "
                    f"attention_heads {self.attention_heads}"
                )

    @property
    def context_input_dim(self) -> int:
        return self.nbits + 1 if self.variant == "concatenated_context" else self.nbits

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FSCAPConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Episode:
    """One few-shot task instance: contexts from an assay plus a query."""

    query_fp: Fingerprint
    contexts: list[tuple[Fingerprint, float]]
    target: float
    assay_id: str = ""


def featurize_context(fp: Fingerprint, activity: float,
                      variant: str = "full", dtype=np.float32) -> np.ndarray:
    """Featurize one context compound for the context encoder."""
    bits = fp.to_float(dtype)
    if variant == "concatenated_context":
        return np.concatenate([bits, np.asarray([activity], dtype=dtype)])
    return bits * dtype(activity)


def context_feature_matrix(variant: str, bit_rows: np.ndarray,
                           activities: np.ndarray) -> np.ndarray:
    """Vectorized featurize_context over the leading axes.

    bit_rows is (..., nbits) of 0/1 floats and activities matches its
    leading shape.
    """
    acts = activities.astype(bit_rows.dtype)[..., None]
    if variant == "concatenated_context":
        return np.concatenate([bit_rows, acts], axis=-1)
    return bit_rows * acts


def _build_encoder(name: str, in_dim: int, width: int, out_dim: int,
                   n_layers: int, rng: np.random.Generator, dtype) -> MLP:
    layers: list = []
    d = in_dim
    for i in range(n_layers):
        last = i == n_layers - 1
        out = out_dim if last else width
        layers.append(Linear(d, out, rng, f"{name}.{i}.linear", dtype))
        if not last:
            layers.append(ReLU())
        d = out
    return MLP(layers)


def _build_predictor(name: str, in_dim: int, width: int, n_layers: int,
                     dropout_p: float, rng: np.random.Generator, dtype) -> MLP:
    # hidden blocks are Linear -> BatchNorm -> ReLU -> Dropout; the last
    # two layers carry neither batch norm nor dropout
    layers: list = []
    d = in_dim
    for i in range(n_layers):
        last = i == n_layers - 1
        out = 1 if last else width
        layers.append(Linear(d, out, rng, f"{name}.{i}.linear", dtype))
        if not last:
            if i < n_layers - 2:
                layers.append(BatchNorm(out, f"{name}.{i}.bn", dtype=dtype))
            layers.append(ReLU())
            if i < n_layers - 2:
                layers.append(Dropout(dropout_p))
        d = out
    return MLP(layers)


class FSCAPModel:
    """The few-shot regressor. Components depend on the variant.

    Initialization order is fixed (context encoder, query encoder,
    attention stack, predictor), so one seed pins every weight.
    """

    def __init__(self, config: FSCAPConfig, seed: int = 0,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        if rng is None:
            rng = np.random.default_rng(seed)

        c = config
        self.context_encoder: MLP | None = None
        self.query_encoder: MLP | None = None
        self.attention: SelfAttentionStack | None = None

        if c.variant != "no_context":
            self.context_encoder = _build_encoder(
                "context_encoder", c.context_input_dim, c.mlp_width,
                c.encoding_dim, c.n_layers, rng, dtype,
            )
        if c.variant in ("full", "concatenated_context", "attentive_aggregation"):
            self.query_encoder = _build_encoder(
                "query_encoder", c.nbits, c.mlp_width, c.encoding_dim,
                c.n_layers, rng, dtype,
            )
        if c.variant == "attentive_aggregation":
            self.attention = SelfAttentionStack(
                c.encoding_dim, c.attention_layers, c.attention_heads,
                rng, name="attention", dtype=dtype,
            )

        if c.variant == "no_context":
            predictor_in = c.nbits
        elif c.variant == "no_query_encoding":
            predictor_in = c.encoding_dim + c.nbits
        else:
            predictor_in = 2 * c.encoding_dim
        self.predictor = _build_predictor(
            "predictor", predictor_in, c.mlp_width, c.n_layers,
            c.dropout_p, rng, dtype,
        )

    # ---- parameters and state ----

    def params(self) -> list[Param]:
        out: list[Param] = []
        for part in (self.context_encoder, self.query_encoder,
                     self.attention, self.predictor):
            if part is not None:
                out.extend(part.params())
        return out

    @property
    def num_params(self) -> int:
        return sum(p.value.size for p in self.params())

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All persistent tensors: params plus batch-norm running stats."""
        out = {p.name: p.value for p in self.params()}
        for layer in self.predictor.layers:
            if isinstance(layer, BatchNorm):
                name = layer.gamma.name.rsplit(".", 1)[0]
                out[f"{name}.running_mean"] = layer.running_mean
                out[f"{name}.running_var"] = layer.running_var
        return out

    def _set_state_tensor(self, name: str, value: np.ndarray) -> None:
        for p in self.params():
            if p.name == name:
                p.value[...] = value
                return
        for layer in self.predictor.layers:
            if isinstance(layer, BatchNorm):
                base = layer.gamma.name.rsplit(".", 1)[0]
                if name == f"{base}.running_mean":
                    layer.running_mean[...] = value
                    return
                if name == f"{base}.running_var":
                    layer.running_var[...] = value
                    return
        raise ModelFileError(f"unknown tensor {name!r}")

    # ---- forward / backward ----

    def _aggregate(self, encodings: np.ndarray, mode: str,
                   rng: np.random.Generator | None) -> np.ndarray:
        """Mean over context encodings in a canonical order.

        Rows are sorted by their raw byte patterns first. Sorting is a
        permutation, and the attention stack is permutation equivariant,
        so this changes nothing mathematically; it makes the float result
        independent of the caller's context order, bit for bit.
        """
        b, n, d = encodings.shape
        as_uint = np.ascontiguousarray(encodings).view(
            np.uint32 if encodings.dtype == np.float32 else np.uint64
        )
        order = np.lexsort(
            tuple(as_uint[:, :, c] for c in reversed(range(d))), axis=-1
        )
        ordered = np.take_along_axis(encodings, order[:, :, None], axis=1)
        if self.attention is not None:
            ordered = self.attention.forward(ordered, mode, rng)
        self._agg_order = order
        self._agg_n = n
        return ordered.sum(axis=1) / n

    def _aggregate_backward(self, d_pooled: np.ndarray) -> np.ndarray:
        b, d = d_pooled.shape
        n = self._agg_n
        spread = np.broadcast_to(d_pooled[:, None, :] / n, (b, n, d))
        if self.attention is None:
            # uniform across rows, so undoing the sort changes nothing
            return np.ascontiguousarray(spread)
        d_ordered = self.attention.backward(np.ascontiguousarray(spread))
        out = np.empty_like(d_ordered)
        np.put_along_axis(out, self._agg_order[:, :, None], d_ordered, axis=1)
        return out

    def forward_batch(self, query_bits: np.ndarray,
                      context_feats: np.ndarray | None,
                      mode: str = "eval",
                      rng: np.random.Generator | None = None) -> np.ndarray:
        """Predict a batch. query_bits is (B, nbits); context_feats is
        (B, n_context, context_input_dim), or None for no_context."""
        c = self.config
        if query_bits.ndim != 2 or query_bits.shape[1] != c.nbits:
            raise ValueError(f"query_bits must be (B, {c.nbits}), got {query_bits.shape}")
        query_bits = query_bits.astype(self.dtype, copy=False)

        if c.variant == "no_context":
            self._cache_shape = None
            return self.predictor.forward(query_bits, mode, rng)

        if context_feats is None:
            raise ValueError(f"variant {c.variant!r} needs context features")
        b, n, d = context_feats.shape
        if b != query_bits.shape[0] or d != c.context_input_dim:
            raise ValueError(
                f"context_feats must be (B, n, {c.context_input_dim}), "
                f"got {context_feats.shape}"
            )
        context_feats = context_feats.astype(self.dtype, copy=False)

        assert self.context_encoder is not None
        r = self.context_encoder.forward(
            context_feats.reshape(b * n, d), mode, rng
        ).reshape(b, n, c.encoding_dim)
        pooled = self._aggregate(r, mode, rng)

        if c.variant == "no_query_encoding":
            h = np.concatenate([pooled, query_bits], axis=1)
        else:
            assert self.query_encoder is not None
            h = np.concatenate(
                [pooled, self.query_encoder.forward(query_bits, mode, rng)], axis=1
            )
        self._cache_shape = (b, n)
        return self.predictor.forward(h, mode, rng)

    def backward_batch(self, d_out: np.ndarray) -> None:
        c = self.config
        dh = self.predictor.backward(d_out)
        if c.variant == "no_context":
            return
        b, n = self._cache_shape
        d_pooled = dh[:, : c.encoding_dim]
        if c.variant != "no_query_encoding":
            assert self.query_encoder is not None
            self.query_encoder.backward(dh[:, c.encoding_dim :])
        dr = self._aggregate_backward(d_pooled)
        assert self.context_encoder is not None
        self.context_encoder.backward(dr.reshape(b * n, c.encoding_dim))


# ---- episode plumbing ----


def episodes_to_arrays(
    config: FSCAPConfig, episodes: Sequence[Episode], dtype=np.float32
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Stack episodes into (query_bits, context_feats, targets)."""
    if not episodes:
        raise ValueError("no episodes")
    q = np.stack([ep.query_fp.to_float(dtype) for ep in episodes])
    y = np.asarray([ep.target for ep in episodes], dtype=dtype)
    if config.variant == "no_context":
        return q, None, y
    n = config.n_context
    feats = np.empty((len(episodes), n, config.context_input_dim), dtype=dtype)
    for i, ep in enumerate(episodes):
        if len(ep.contexts) != n:
            raise ValueError(
                f"episode {i} has {len(ep.contexts)} contexts, expected {n}"
            )
        bit_rows = np.stack([fp.to_float(dtype) for fp, _ in ep.contexts])
        acts = np.asarray([a for _, a in ep.contexts], dtype=dtype)
        feats[i] = context_feature_matrix(config.variant, bit_rows, acts)
    return q, feats, y


def predict_batch(model: FSCAPModel, episodes: Sequence[Episode]) -> np.ndarray:
    q, feats, _ = episodes_to_arrays(model.config, episodes, model.dtype)
    return model.forward_batch(q, feats, "eval")[:, 0]


def predict(model: FSCAPModel, episode: Episode) -> float:
    return float(predict_batch(model, [episode])[0])


def encode_context_set(
    model: FSCAPModel, contexts: Sequence[tuple[Fingerprint, float]]
) -> np.ndarray:
    """Encode one context set into the assay encoding vector."""
    if model.context_encoder is None:
        raise ValueError("variant 'no_context' has no context encoder")
    if not contexts:
        raise ValueError("empty context set")
    bit_rows = np.stack([fp.to_float(model.dtype) for fp, _ in contexts])
    acts = np.asarray([a for _, a in contexts], dtype=model.dtype)
    feats = context_feature_matrix(model.config.variant, bit_rows, acts)
    r = model.context_encoder.forward(feats, "eval", None)
    return model._aggregate(r[None], "eval", None)[0]


# ---- training ----


def train_epoch(
    model: FSCAPModel,
    batches: Iterable,
    optimizer: AdamState,
    schedule: LRSchedule,
    rng: np.random.Generator,
) -> float:
    """Run MSE training steps over the given batches; returns mean loss.

    Each batch is either a list of Episodes or a prebuilt
    (query_bits, context_feats, targets) triple. The optimizer's update
    count doubles as the global step for the learning-rate schedule.
    """
    params = model.params()
    losses = []
    for batch in batches:
        if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Episode):
            q, feats, y = episodes_to_arrays(model.config, batch, model.dtype)
        else:
            q, feats, y = batch
        preds = model.forward_batch(q, feats, "train", rng)
        loss, d_pred = mse_loss(preds, y.reshape(-1, 1).astype(preds.dtype))
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {optimizer.t}"
            )
        model.zero_grad()
        model.backward_batch(d_pred)
        adam_step(params, optimizer, lr_at(schedule, optimizer.t))
        losses.append(loss)
    if not losses:
        raise ValueError("no batches")
    return float(np.mean(losses))


# ---- serialization ----


def save_model(model: FSCAPModel, path: str | Path) -> None:
    """Write the model as versioned JSON with exact tensor bytes.

    Tensors are hex-encoded little-endian raw bytes, keys are sorted:
    equal models produce byte-identical files.
    """
    code = "<f8" if model.dtype == np.float64 else "<f4"
    tensors = {
        name: {
            "shape": list(value.shape),
            "data": value.astype(code).tobytes().hex(),
        }
        for name, value in model.state_tensors().items()
    }
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "dtype": str(model.dtype),
        "tensors": tensors,
    }
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_model(path: str | Path) -> FSCAPModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"cannot read model file {path}: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFileError(f"{path} is not a model file")
    version = doc["format_version"]
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        config = FSCAPConfig.from_dict(doc["config"])
        dtype = np.dtype(doc["dtype"])
        tensors = doc["tensors"]
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"invalid model file {path}: {e}") from e

    model = FSCAPModel(config, seed=0, dtype=dtype)
    expected = model.state_tensors()
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ModelFileError(
            f"tensor names do not match config: missing {missing}, extra {extra}"
        )
    code = "<f8" if dtype == np.float64 else "<f4"
    for name, entry in tensors.items():
        shape = tuple(entry["shape"])
        if shape != expected[name].shape:
            raise ModelFileError(
                f"tensor {name}: shape {shape} != expected {expected[name].shape}"
            )
        try:
            raw = bytes.fromhex(entry["data"])
        except ValueError as e:
            raise ModelFileError(f"tensor {name}: bad hex data") from e
        value = np.frombuffer(raw, dtype=code)
        if value.size != expected[name].size:
            raise ModelFileError(
                f"tensor {name}: {value.size} values for shape {shape}"
            )
        model._set_state_tensor(name, value.reshape(shape).astype(dtype))
    return model
