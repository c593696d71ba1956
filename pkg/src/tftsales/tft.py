"""Temporal Fusion Transformer built on the ``tensor`` autodiff core.

Block order: per-variable projections -> variable selection (encoder and
decoder, conditioned on the store context) -> LSTM encoder/decoder seeded by
static state -> gate/add/norm -> static enrichment -> interpretable
multi-head attention (shared values, causal mask) -> gate/add/norm ->
position-wise GRN -> gate/add/norm with the LSTM features -> quantile head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .ingest import DECODER_FEATURES, ENCODER_FEATURES, ScalerSet, WindowSet
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class UnknownStore(KeyError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TftConfig:
    hidden_size: int = 64
    attention_heads: int = 4
    dropout: float = 0.2
    encoder_len: int = 52
    horizon: int = 5
    quantiles: tuple[float, ...] = (0.1, 0.5, 0.9)
    store_ids: tuple[int, ...] = tuple(range(1, 46))
    encoder_vars: tuple[str, ...] = ENCODER_FEATURES
    decoder_vars: tuple[str, ...] = DECODER_FEATURES
    lstm_layers: int = 1

    def __post_init__(self):
        if self.hidden_size % self.attention_heads:
            raise ValueError("hidden_size must be divisible by attention_heads")
        q = list(self.quantiles)
        if q != sorted(q) or len(set(q)) != len(q) or not all(0.0 < v < 1.0 for v in q):
            raise ValueError("quantiles must be sorted, distinct and inside (0, 1)")
        if self.lstm_layers != 1:
            raise ValueError("only single-layer LSTMs are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not set(self.decoder_vars) <= set(self.encoder_vars):
            raise ValueError("decoder variables must be a subset of encoder variables")

    @property
    def n_static_categories(self) -> int:
        return len(self.store_ids)

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.attention_heads

    @property
    def median_index(self) -> int:
        return int(np.argmin(np.abs(np.asarray(self.quantiles) - 0.5)))


def _grn_count(n_in: int, hidden: int, n_out: int, context: int = 0) -> int:
    skip = n_in * n_out + n_out if n_in != n_out else 0
    return (n_in * hidden + hidden + context * hidden + hidden * hidden + hidden
            + 2 * (hidden * n_out + n_out) + skip + 2 * n_out)


def expected_param_count(config: TftConfig) -> int:
    """Closed-form parameter count.

    embedding S*H; per-variable projections 2H each (shared between encoder
    and decoder); 4 static GRNs; two selection networks, each one flat GRN
    (V*H -> V, with context) plus V per-variable GRNs; two LSTMs
    8H^2 + 4H each; three gate/add/norm blocks 2H^2 + 4H each; enrichment
    GRN with context; attention 2*heads*(H*d + d) + (H*d + d) + (d*H + H);
    position-wise GRN; quantile head H*Q + Q.
    """
    H, d = config.hidden_size, config.head_size
    Ve, Vd = len(config.encoder_vars), len(config.decoder_vars)
    n = config.n_static_categories * H
    n += 2 * H * len(config.encoder_vars)
    n += 4 * _grn_count(H, H, H)
    for V in (Ve, Vd):
        n += _grn_count(V * H, H, V, H) + V * _grn_count(H, H, H)
    n += 2 * (8 * H * H + 4 * H)
    n += 3 * (2 * H * H + 4 * H)
    n += _grn_count(H, H, H, H)
    n += 2 * config.attention_heads * (H * d + d) + (H * d + d) + (d * H + H)
    n += _grn_count(H, H, H)
    n += H * len(config.quantiles) + len(config.quantiles)
    return n


class _Builder:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = T.parameter(arr.astype(self.dtype), name)

    def weight(self, name: str, n_in: int, n_out: int) -> None:
        limit = math.sqrt(6.0 / (n_in + n_out))
        self._add(name, self.rng.uniform(-limit, limit, size=(n_in, n_out)))

    def zeros(self, name: str, *shape: int) -> None:
        self._add(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> None:
        self._add(name, np.ones(shape))

    def glu(self, prefix: str, n_in: int, n_out: int) -> None:
        self.weight(f"{prefix}.gate.w", n_in, n_out)
        self.zeros(f"{prefix}.gate.b", n_out)
        self.weight(f"{prefix}.value.w", n_in, n_out)
        self.zeros(f"{prefix}.value.b", n_out)

    def norm(self, prefix: str, n: int) -> None:
        self.ones(f"{prefix}.gamma", n)
        self.zeros(f"{prefix}.beta", n)

    def grn(self, prefix: str, n_in: int, hidden: int, n_out: int, context: int = 0) -> None:
        self.weight(f"{prefix}.fc1.w", n_in, hidden)
        self.zeros(f"{prefix}.fc1.b", hidden)
        if context:
            self.weight(f"{prefix}.context.w", context, hidden)
        self.weight(f"{prefix}.fc2.w", hidden, hidden)
        self.zeros(f"{prefix}.fc2.b", hidden)
        self.glu(f"{prefix}.glu", hidden, n_out)
        if n_in != n_out:
            self.weight(f"{prefix}.skip.w", n_in, n_out)
            self.zeros(f"{prefix}.skip.b", n_out)
        self.norm(f"{prefix}.norm", n_out)

    def gate_norm(self, prefix: str, n: int) -> None:
        self.glu(f"{prefix}.glu", n, n)
        self.norm(f"{prefix}.norm", n)

    def lstm(self, prefix: str, n_in: int, hidden: int) -> None:
        self.weight(f"{prefix}.w_x", n_in, 4 * hidden)
        self.weight(f"{prefix}.w_h", hidden, 4 * hidden)
        self.zeros(f"{prefix}.b", 4 * hidden)


@dataclass
class TftModel:
    config: TftConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: TftConfig, seed: int = 0, dtype=None) -> "TftModel":
        """Glorot-uniform weights, zero biases, unit layer-norm gains."""
        dtype = np.dtype(dtype or T.default_dtype())
        b = _Builder(np.random.default_rng(seed), dtype)
        H, d = config.hidden_size, config.head_size
        b.weight("static.embedding", config.n_static_categories, H)
        for name in config.encoder_vars:
            b.weight(f"proj.{name}.w", 1, H)
            b.zeros(f"proj.{name}.b", H)
        for ctx in ("selection", "state_h", "state_c", "enrichment"):
            b.grn(f"static.{ctx}", H, H, H)
        for side, names in (("enc_vsn", config.encoder_vars), ("dec_vsn", config.decoder_vars)):
            b.grn(f"{side}.flat", len(names) * H, H, len(names), context=H)
            for name in names:
                b.grn(f"{side}.var.{name}", H, H, H)
        b.lstm("lstm.encoder", H, H)
        b.lstm("lstm.decoder", H, H)
        b.gate_norm("post_lstm", H)
        b.grn("enrichment", H, H, H, context=H)
        for h in range(config.attention_heads):
            b.weight(f"attn.query.{h}.w", H, d)
            b.zeros(f"attn.query.{h}.b", d)
            b.weight(f"attn.key.{h}.w", H, d)
            b.zeros(f"attn.key.{h}.b", d)
        b.weight("attn.value.w", H, d)
        b.zeros("attn.value.b", d)
        b.weight("attn.out.w", d, H)
        b.zeros("attn.out.b", H)
        b.gate_norm("post_attn", H)
        b.grn("positionwise", H, H, H)
        b.gate_norm("pre_output", H)
        b.weight("head.w", H, len(config.quantiles))
        b.zeros("head.b", len(config.quantiles))
        return cls(config, b.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "TftModel":
        return TftModel(self.config, {k: T.parameter(v.data.astype(dtype), k) for k, v in self.params.items()})

    def copy(self) -> "TftModel":
        return self.astype(self.dtype)

    def store_index(self, stores) -> np.ndarray:
        lookup = {s: i for i, s in enumerate(self.config.store_ids)}
        try:
            return np.array([lookup[int(s)] for s in np.atleast_1d(stores)], dtype=np.int64)
        except KeyError as exc:
            raise UnknownStore(f"store {exc.args[0]} is not in the model's store list") from None

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "TftModel":
        return load_checkpoint(path)[0]


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


class _Ctx:
    """Per-call forward state: parameters, mode, and the dropout stream."""

    def __init__(self, params: dict[str, Tensor], training: bool, rate: float, rng):
        self.p = params
        self.training = training
        self.rate = rate
        self.rng = rng

    def drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.training, self.rng)

    def lin(self, x: Tensor, prefix: str) -> Tensor:
        return T.linear(x, self.p[f"{prefix}.w"], self.p[f"{prefix}.b"])


def _expand_context(c: Tensor, like: Tensor) -> Tensor:
    # [B, H] -> [B, 1, ..., H] so it broadcasts over the time axes of ``like``
    if like.ndim == c.ndim:
        return c
    shape = (c.shape[0],) + (1,) * (like.ndim - c.ndim) + (c.shape[-1],)
    return T.reshape(c, shape)


def glu(ctx: _Ctx, x: Tensor, prefix: str) -> Tensor:
    return T.sigmoid(ctx.lin(x, f"{prefix}.gate")) * ctx.lin(x, f"{prefix}.value")


def norm(ctx: _Ctx, x: Tensor, prefix: str) -> Tensor:
    return T.layer_norm(x, ctx.p[f"{prefix}.gamma"], ctx.p[f"{prefix}.beta"])


def gate_add_norm(ctx: _Ctx, x: Tensor, residual: Tensor, prefix: str, dropout: bool = True) -> Tensor:
    if dropout:
        x = ctx.drop(x)
    return norm(ctx, glu(ctx, x, f"{prefix}.glu") + residual, f"{prefix}.norm")


def grn(ctx: _Ctx, x: Tensor, prefix: str, context: Tensor | None = None) -> Tensor:
    """LayerNorm(skip(x) + GLU(W2 ELU(W1 x + Wc c + b1) + b2))."""
    p = ctx.p
    hidden = T.linear(x, p[f"{prefix}.fc1.w"], p[f"{prefix}.fc1.b"])
    if context is not None:
        if f"{prefix}.context.w" not in p:
            raise T.ShapeMismatch(f"{prefix} takes no context")
        c = T.linear(context, p[f"{prefix}.context.w"])
        hidden = hidden + _expand_context(c, hidden)
    hidden = T.elu(hidden)
    hidden = ctx.drop(ctx.lin(hidden, f"{prefix}.fc2"))
    skip = ctx.lin(x, f"{prefix}.skip") if f"{prefix}.skip.w" in p else x
    return norm(ctx, glu(ctx, hidden, f"{prefix}.glu") + skip, f"{prefix}.norm")


def variable_select(ctx: _Ctx, embeddings: list[Tensor], names, prefix: str,
                    static_context: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum of per-variable GRN outputs.

    ``embeddings`` are V tensors of shape [..., H]. Returns the combined
    [..., H] tensor and the selection weights [..., V].
    """
    flat = T.concat(embeddings, axis=-1)
    weights = T.softmax(grn(ctx, flat, f"{prefix}.flat", static_context))
    processed = T.stack([grn(ctx, e, f"{prefix}.var.{n}") for e, n in zip(embeddings, names)], axis=-2)
    lead = weights.shape[:-1]
    w = T.reshape(weights, lead + (1, len(embeddings)))
    combined = T.reshape(T.matmul(w, processed), lead + (processed.shape[-1],))
    return combined, weights


def encode_decode(ctx: _Ctx, enc_seq: Tensor, dec_seq: Tensor, state_h: Tensor, state_c: Tensor) -> Tensor:
    """Encoder LSTM from the static state, decoder LSTM continuing from it,
    then gate/add/norm against the selected inputs. Returns [B, L + H, hidden]."""
    p = ctx.p
    H = state_h.shape[-1]
    enc = T.lstm_scan(T.linear(enc_seq, p["lstm.encoder.w_x"], p["lstm.encoder.b"]),
                      state_h, state_c, p["lstm.encoder.w_h"])
    h_last = enc[:, -1, :H]
    c_last = enc[:, -1, H:]
    dec = T.lstm_scan(T.linear(dec_seq, p["lstm.decoder.w_x"], p["lstm.decoder.b"]),
                      h_last, c_last, p["lstm.decoder.w_h"])
    lstm_out = T.concat([enc[..., :H], dec[..., :H]], axis=1)
    selected = T.concat([enc_seq, dec_seq], axis=1)
    return gate_add_norm(ctx, lstm_out, selected, "post_lstm")


def causal_mask(encoder_len: int, horizon: int) -> np.ndarray:
    """[horizon, encoder_len + horizon]; decoder step t sees absolute indices <= encoder_len + t."""
    total = encoder_len + horizon
    return np.arange(total)[None, :] <= (encoder_len + np.arange(horizon))[:, None]


def attend(ctx: _Ctx, enriched: Tensor, n_heads: int, encoder_len: int) -> tuple[Tensor, Tensor]:
    """Interpretable multi-head attention for the decoder positions.

    Heads have their own query/key projections but share one value
    projection; their attention matrices are averaged. Returns the projected
    output [B, horizon, hidden] and the averaged weights [B, horizon, total].
    """
    horizon = enriched.shape[1] - encoder_len
    queries_in = enriched[:, encoder_len:, :]
    values = ctx.lin(enriched, "attn.value")
    d = values.shape[-1]
    mask = causal_mask(encoder_len, horizon)
    heads = []
    for h in range(n_heads):
        q = ctx.lin(queries_in, f"attn.query.{h}")
        k = ctx.lin(enriched, f"attn.key.{h}")
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d))
        heads.append(T.softmax(scores, mask))
    weights = heads[0]
    for a in heads[1:]:
        weights = weights + a
    if n_heads > 1:
        weights = weights * (1.0 / n_heads)
    out = ctx.lin(T.matmul(ctx.drop(weights), values), "attn.out")
    return out, weights


@dataclass
class ModelOutput:
    predictions: Tensor  # [B, horizon, Q] scaled target space
    attention: np.ndarray  # [B, horizon, encoder_len + horizon]
    encoder_weights: np.ndarray  # [B, encoder_len, V_enc]
    decoder_weights: np.ndarray  # [B, horizon, V_dec]

    @property
    def quantiles(self) -> np.ndarray:
        return self.predictions.data


def forward(model: TftModel, windows: WindowSet, training: bool = False,
            rng: np.random.Generator | None = None) -> ModelOutput:
    cfg = model.config
    p = model.params
    dtype = model.dtype
    if windows.encoder.shape[1:] != (cfg.encoder_len, len(cfg.encoder_vars)):
        raise T.ShapeMismatch(f"encoder input {windows.encoder.shape[1:]} does not match config")
    if windows.decoder.shape[1:] != (cfg.horizon, len(cfg.decoder_vars)):
        raise T.ShapeMismatch(f"decoder input {windows.decoder.shape[1:]} does not match config")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    ctx = _Ctx(p, training, cfg.dropout, rng)

    store_vec = T.embedding(p["static.embedding"], model.store_index(windows.store))
    c_sel = grn(ctx, store_vec, "static.selection")
    c_h = grn(ctx, store_vec, "static.state_h")
    c_c = grn(ctx, store_vec, "static.state_c")
    c_enr = grn(ctx, store_vec, "static.enrichment")

    x_enc = windows.encoder.astype(dtype, copy=False)
    x_dec = windows.decoder.astype(dtype, copy=False)

    def embed(x: np.ndarray, names) -> list[Tensor]:
        return [ctx.lin(Tensor(x[..., j:j + 1]), f"proj.{n}") for j, n in enumerate(names)]

    enc_sel, enc_w = variable_select(ctx, embed(x_enc, cfg.encoder_vars), cfg.encoder_vars, "enc_vsn", c_sel)
    dec_sel, dec_w = variable_select(ctx, embed(x_dec, cfg.decoder_vars), cfg.decoder_vars, "dec_vsn", c_sel)

    temporal = encode_decode(ctx, enc_sel, dec_sel, c_h, c_c)
    enriched = grn(ctx, temporal, "enrichment", c_enr)
    attn_out, attn_w = attend(ctx, enriched, cfg.attention_heads, cfg.encoder_len)
    L = cfg.encoder_len
    x = gate_add_norm(ctx, attn_out, enriched[:, L:, :], "post_attn")
    x = grn(ctx, x, "positionwise")
    x = gate_add_norm(ctx, x, temporal[:, L:, :], "pre_output", dropout=False)
    preds = ctx.lin(x, "head")
    return ModelOutput(preds, attn_w.data, enc_w.data, dec_w.data)


def predict(model: TftModel, windows: WindowSet, batch_size: int = 256) -> ModelOutput:
    """Eval-mode forward in chunks, outside any gradient graph."""
    parts = [forward(model, windows.take(np.arange(i, min(i + batch_size, len(windows)))))
             for i in range(0, len(windows), batch_size)]
    return ModelOutput(
        Tensor(np.concatenate([o.quantiles for o in parts])),
        np.concatenate([o.attention for o in parts]),
        np.concatenate([o.encoder_weights for o in parts]),
        np.concatenate([o.decoder_weights for o in parts]),
    )


@dataclass
class QuantileForecast:
    store: np.ndarray  # [N]
    origin_t: np.ndarray  # [N]
    values: np.ndarray  # [N, horizon, Q] dollars, non-decreasing along Q
    quantiles: tuple[float, ...]

    def median(self) -> np.ndarray:
        return self.values[..., int(np.argmin(np.abs(np.asarray(self.quantiles) - 0.5)))]

    def lower(self) -> np.ndarray:
        return self.values[..., 0]

    def upper(self) -> np.ndarray:
        return self.values[..., -1]


def predict_intervals(output, scalers: ScalerSet, windows: WindowSet | None = None,
                      quantiles=(0.1, 0.5, 0.9)) -> QuantileForecast:
    """Sort quantiles (non-crossing repair), undo min-max, exponentiate to dollars."""
    scaled = output.quantiles if isinstance(output, ModelOutput) else np.asarray(output)
    ordered = np.sort(scaled.astype(np.float64), axis=-1)
    dollars = scalers.to_dollars(ordered)
    n = dollars.shape[0]
    store = windows.store if windows is not None else np.zeros(n, dtype=np.int64)
    origin = windows.origin_t if windows is not None else np.zeros(n, dtype=np.int64)
    return QuantileForecast(store, origin, dollars, tuple(quantiles))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = {"quantiles": float, "store_ids": int, "encoder_vars": str, "decoder_vars": str}


def _config_lines(config: TftConfig) -> list[str]:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        lines.append(f"config.{f.name}=" + (",".join(map(repr if f.name == "quantiles" else str, v))
                                            if f.name in _TUPLE_FIELDS else repr(v)))
    return lines


def _parse_config(items: dict[str, str]) -> TftConfig:
    kwargs = {}
    for f in fields(TftConfig):
        raw = items.get(f"config.{f.name}")
        if raw is None:
            raise CheckpointError(f"manifest lacks config.{f.name}")
        if f.name in _TUPLE_FIELDS:
            kwargs[f.name] = tuple(_TUPLE_FIELDS[f.name](x) for x in raw.split(",")) if raw else ()
        elif f.name == "dropout":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = int(raw)
    return TftConfig(**kwargs)


def save_checkpoint(model: TftModel, path, scalers: ScalerSet | None = None,
                    extra: dict[str, str] | None = None) -> tuple[Path, Path]:
    """Write ``<path>.manifest`` (key=value text) and ``<path>.bin`` (little-endian floats).

    Values are stored as float32 unless the model is float64, in which case
    the manifest says ``dtype=float64`` and the payload is 8-byte floats.
    """
    path = Path(path)
    manifest, blob = path.with_suffix(".manifest"), path.with_suffix(".bin")
    dtype = "float64" if model.dtype == np.float64 else "float32"
    le = np.dtype(dtype).newbyteorder("<")
    lines = [f"version={CHECKPOINT_VERSION}", f"dtype={dtype}", f"payload={blob.name}"]
    lines += _config_lines(model.config)
    if scalers is not None:
        for col, (mean, sd) in scalers.zscore.items():
            lines.append(f"scaler.{col}={mean!r},{sd!r}")
        lines.append(f"scaler.target={scalers.target_min!r},{scalers.target_max!r}")
    for k, v in (extra or {}).items():
        lines.append(f"extra.{k}={v}")
    offset = 0
    chunks = []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype=le)
        lines.append(f"param={name}|{'x'.join(map(str, p.shape))}|{offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest.write_text("\n".join(lines) + "\n")
    blob.write_bytes(b"".join(chunks))
    return manifest, blob


def read_manifest(path) -> tuple[dict[str, str], list[tuple[str, tuple[int, ...], int]]]:
    items, params = {}, []
    for line in Path(path).with_suffix(".manifest").read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "param":
            name, shape, offset = value.split("|")
            params.append((name, tuple(int(s) for s in shape.split("x")) if shape else (), int(offset)))
        else:
            items[key] = value
    return items, params


def load_checkpoint(path) -> tuple[TftModel, ScalerSet | None, dict[str, str]]:
    path = Path(path)
    items, entries = read_manifest(path)
    if items.get("version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {items.get('version')!r}")
    dtype = np.dtype(items.get("dtype", "float32")).newbyteorder("<")
    blob = (path.parent / items.get("payload", path.with_suffix(".bin").name)).read_bytes()
    config = _parse_config(items)
    params = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dtype, count=n, offset=offset).reshape(shape)
        params[name] = T.parameter(arr.astype(dtype.newbyteorder("=")), name)
    model = TftModel(config, params)
    reference = TftModel.init(config, dtype=np.float64)
    if set(reference.params) != set(params):
        raise CheckpointError("checkpoint parameter names do not match the configuration")
    scalers = None
    if "scaler.target" in items:
        z = {k[len("scaler."):]: tuple(float(x) for x in v.split(","))
             for k, v in items.items() if k.startswith("scaler.") and k != "scaler.target"}
        lo, hi = (float(x) for x in items["scaler.target"].split(","))
        scalers = ScalerSet(z, lo, hi)
    extra = {k[len("extra."):]: v for k, v in items.items() if k.startswith("extra.")}
    return model, scalers, extra


def config_with(config: TftConfig, **overrides) -> TftConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
