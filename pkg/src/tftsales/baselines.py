"""Point-forecast baselines (CNN-1D, LSTM, CNN-LSTM, seasonal naive) and the comparison harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import tensor as T
from .evalx import MetricSet, compute_metrics
from .ingest import ScalerSet, WindowSet
from .train import TrainConfig, TrainHistory, fit, inner_split, mse_loss

KINDS = ("cnn", "lstm", "cnn_lstm", "seasonal_naive")
SEASON = 52


class UnknownKind(ValueError):
    pass


class ProtocolMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    cnn_filters: int = 32
    cnn_kernel: int = 4
    lstm_units: int = 50
    horizon: int = 5
    learning_rate: float = 0.001

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown baseline kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.lstm_units < 1 or self.cnn_filters < 1:
            raise ValueError("units and filters must be >= 1")


@dataclass
class BaselineModel:
    config: BaselineConfig
    encoder_len: int
    n_features: int
    params: dict[str, T.Tensor] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.config.kind

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, windows: WindowSet) -> T.Tensor:
        """Scaled log-sales predictions [B, horizon]."""
        kind = self.config.kind
        if kind == "seasonal_naive":
            return T.Tensor(seasonal_naive_scaled(windows))
        p = self.params
        dtype = next(iter(p.values())).dtype
        x = T.Tensor(windows.encoder.astype(dtype, copy=False))
        if windows.encoder.shape[1:] != (self.encoder_len, self.n_features):
            raise T.ShapeMismatch(f"expected encoder input [{self.encoder_len} x {self.n_features}]")
        if kind in ("cnn", "cnn_lstm"):
            x = conv1d_same(x, p["conv.w"], p["conv.b"], self.config.cnn_kernel)
        if kind in ("lstm", "cnn_lstm"):
            B = x.shape[0]
            units = self.config.lstm_units
            zeros = T.Tensor(np.zeros((B, units), dtype=dtype))
            seq = T.lstm_scan(T.linear(x, p["lstm.w_x"], p["lstm.b"]), zeros, zeros, p["lstm.w_h"])
            x = seq[:, -1, :units]
        else:
            x = T.reshape(x, (x.shape[0], -1))
        return T.linear(x, p["dense.w"], p["dense.b"])

    def predict_scaled(self, windows: WindowSet, batch_size: int = 512) -> np.ndarray:
        return np.concatenate([self.forward(windows.take(np.arange(i, min(i + batch_size, len(windows))))).data
                               for i in range(0, len(windows), batch_size)])

    def predict_dollars(self, windows: WindowSet, scalers: ScalerSet) -> np.ndarray:
        return scalers.to_dollars(self.predict_scaled(windows))


def conv1d_same(x: T.Tensor, weight: T.Tensor, bias: T.Tensor, kernel: int) -> T.Tensor:
    """'Same'-padded 1-D convolution followed by ReLU: [B, L, F] -> [B, L, filters]."""
    return T.relu(T.linear(T.unfold_same(x, kernel), weight, bias))


def _glorot(rng, n_in, n_out, dtype):
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)


def build_baseline(config: BaselineConfig, encoder_len: int, n_features: int, seed: int = 0,
                   dtype=None) -> BaselineModel:
    dtype = np.dtype(dtype or T.default_dtype())
    rng = np.random.default_rng(seed)
    if config.cnn_kernel > encoder_len:
        raise ValueError("kernel longer than the encoder window")
    params: dict[str, np.ndarray] = {}
    width, length = n_features, encoder_len
    if config.kind in ("cnn", "cnn_lstm"):
        params["conv.w"] = _glorot(rng, config.cnn_kernel * n_features, config.cnn_filters, dtype)
        params["conv.b"] = np.zeros(config.cnn_filters, dtype)
        width = config.cnn_filters
    if config.kind in ("lstm", "cnn_lstm"):
        u = config.lstm_units
        params["lstm.w_x"] = _glorot(rng, width, 4 * u, dtype)
        params["lstm.w_h"] = _glorot(rng, u, 4 * u, dtype)
        params["lstm.b"] = np.zeros(4 * u, dtype)
        flat = u
    else:
        flat = width * length
    if config.kind != "seasonal_naive":
        params["dense.w"] = _glorot(rng, flat, config.horizon, dtype)
        params["dense.b"] = np.zeros(config.horizon, dtype)
    return BaselineModel(config, encoder_len, n_features, {k: T.parameter(v, k) for k, v in params.items()})


def seasonal_naive_scaled(windows: WindowSet, season: int = SEASON) -> np.ndarray:
    """Scaled target observed one season before each forecast week."""
    L, H = windows.encoder_len, windows.horizon
    if L < season:
        raise ValueError(f"seasonal naive needs an encoder of at least {season} weeks")
    # forecast week origin + h sits at encoder index L - 1 + h - season
    idx = L - 1 + np.arange(1, H + 1) - season
    return windows.encoder[:, idx, 0].astype(np.float64)


def seasonal_naive_forecast(windows: WindowSet, scalers: ScalerSet) -> np.ndarray:
    """Dollar forecasts [N, horizon] from the same week one year earlier."""
    return scalers.to_dollars(seasonal_naive_scaled(windows))


def train_baseline(config: BaselineConfig, windows: WindowSet, train_config: TrainConfig,
                   ) -> tuple[BaselineModel, TrainHistory | None]:
    """MSE on the scaled target with Adam at the baseline learning rate."""
    model = build_baseline(config, windows.encoder_len, windows.encoder.shape[-1], seed=train_config.seed)
    if config.kind == "seasonal_naive":
        return model, None
    tc = replace(train_config, learning_rate=config.learning_rate)
    tr, va = inner_split(windows, tc.val_fraction, gap=windows.horizon - 1)

    def loss_fn(batch, training, rng):
        return mse_loss(model.forward(batch), batch.target)

    history = fit(model.params, loss_fn, windows.take(tr), windows.take(va), tc,
                  np.random.default_rng(tc.seed + 1))
    return model, history


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


@dataclass
class ComparisonTable:
    rows: list[tuple[str, MetricSet]]

    def names(self) -> list[str]:
        return [n for n, _ in self.rows]

    def __getitem__(self, name: str) -> MetricSet:
        for n, m in self.rows:
            if n == name:
                return m
        raise KeyError(name)

    def table(self) -> list[list[str]]:
        out = [["Models", "RMSE", "MAE", "R^2", "SMAPE"]]
        for n, m in self.rows:
            out.append([n, f"{m.rmse:.2f}", f"{m.mae:.2f}", f"{m.r2:.4f}", f"{m.smape:.2f}%"])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.table())

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({n: m.to_dict() for n, m in self.rows}, fh, indent=2)


def read_external_forecast(path, windows: WindowSet) -> np.ndarray:
    """Align a ``store,origin_t,horizon,prediction`` CSV with ``windows``.

    Raises ProtocolMismatch unless the file covers exactly the windows'
    (store, origin_t, horizon) keys.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    need = {"store", "origin_t", "horizon", "prediction"}
    if not need <= {c.lower() for c in df.columns}:
        raise ProtocolMismatch(f"{path}: expected columns store,origin_t,horizon,prediction")
    df.columns = [c.lower() for c in df.columns]
    if df.duplicated(["store", "origin_t", "horizon"]).any():
        raise ProtocolMismatch(f"{path}: duplicate (store, origin_t, horizon) rows")
    H = windows.horizon
    want = pd.MultiIndex.from_arrays([np.repeat(windows.store, H), np.repeat(windows.origin_t, H),
                                      np.tile(np.arange(1, H + 1), len(windows))])
    got = df.set_index(["store", "origin_t", "horizon"])["prediction"]
    if len(got) != len(want) or not want.isin(got.index).all():
        raise ProtocolMismatch(f"{path}: forecasts do not cover exactly the evaluation windows")
    return got.reindex(want).to_numpy(dtype=np.float64).reshape(len(windows), H)


def compare_models(predictions: dict[str, np.ndarray], windows: WindowSet) -> ComparisonTable:
    """Score each model's dollar forecasts [N, horizon] on the same windows."""
    rows = []
    for name, pred in predictions.items():
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != windows.actual.shape:
            raise ProtocolMismatch(f"{name}: predictions {pred.shape} vs windows {windows.actual.shape}")
        rows.append((name, compute_metrics(pred, windows.actual)))
    return ComparisonTable(rows)
