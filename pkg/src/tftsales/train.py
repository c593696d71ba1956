"""Quantile-loss training: Adam, plateau scheduling, early stopping, hold-out and CV protocols."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .evalx import CalibrationReport, MetricSet, compute_metrics, interval_coverage
from .ingest import (PanelTable, ScalerSet, WindowSet, build_windows, chronological_split, cv_folds,
                     fit_scalers, holdout_windows)
from .tft import QuantileForecast, TftConfig, TftModel, forward, predict, predict_intervals

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    pass


class NoWindows(TrainError):
    pass


class DivergedLoss(TrainError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.01
    max_epochs: int = 100
    early_stop_patience: int = 10
    lr_plateau_factor: float = 0.5
    lr_plateau_patience: int = 5
    grad_clip_norm: float | None = 1.0
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.early_stop_patience < 1 or self.lr_plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def quantile_loss(pred: T.Tensor, target, quantiles) -> T.Tensor:
    """Mean pinball loss over batch, horizon and quantiles.

    rho_q(e) = max(q e, (q - 1) e) with e = target - pred, written as
    q e + relu(-e) so it stays inside the primitive set.
    """
    target = np.asarray(target)
    q = np.asarray(quantiles, dtype=pred.dtype)
    if pred.shape != target.shape + (len(q),):
        raise T.ShapeMismatch(f"predictions {pred.shape} vs targets {target.shape} x {len(q)} quantiles")
    e = T.Tensor(target[..., None].astype(pred.dtype)) - pred
    return (e * q + T.relu(-e)).mean()


def pinball(pred: np.ndarray, target: np.ndarray, quantiles) -> float:
    """Numpy pinball loss, same reduction as :func:`quantile_loss`."""
    q = np.asarray(quantiles, dtype=np.float64)
    e = np.asarray(target, dtype=np.float64)[..., None] - np.asarray(pred, dtype=np.float64)
    return float(np.mean(np.maximum(q * e, (q - 1.0) * e)))


def mse_loss(pred: T.Tensor, target) -> T.Tensor:
    d = pred - T.Tensor(np.asarray(target).astype(pred.dtype))
    return (d * d).mean()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[dict[str, np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, norm before clipping)."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              max_norm: float | None = 1.0) -> float:
    """Bias-corrected Adam update, in place, after global-norm clipping.

    Returns the pre-clip gradient norm.
    """
    grads, norm = clip_grad_norm(grads, max_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise T.ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return norm


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    max_grad_norm_after_clip: list[float] = field(default_factory=list)
    best_epoch: int = 0  # zero-based index into the lists

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self) -> list[tuple]:
        return [(i + 1, self.train_loss[i], self.val_loss[i], self.lr[i], self.seconds[i])
                for i in range(self.epochs)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
            for r in self.rows():
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])


def inner_split(windows: WindowSet, val_fraction: float = 0.1, gap: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per store, the last ``val_fraction`` of origins validate.

    ``gap`` origins just before the validation block are dropped so no
    training target week reaches into the validation forecast weeks.
    """
    train_idx, val_idx = [], []
    for s in np.unique(windows.store):
        idx = np.flatnonzero(windows.store == s)
        idx = idx[np.argsort(windows.origin_t[idx], kind="stable")]
        n_val = min(len(idx) - 1, max(1, int(round(val_fraction * len(idx))))) if len(idx) > 1 else 0
        if n_val == 0:
            train_idx.append(idx)
            continue
        cut = len(idx) - n_val
        val_idx.append(idx[cut:])
        train_idx.append(idx[: max(1, cut - gap)])
    return np.concatenate(train_idx), (np.concatenate(val_idx) if val_idx else np.array([], dtype=int))


LossFn = Callable[[WindowSet, bool, "np.random.Generator | None"], T.Tensor]


def fit(params: dict[str, T.Tensor], loss_fn: LossFn, train: WindowSet, val: WindowSet,
        config: TrainConfig, rng: np.random.Generator) -> TrainHistory:
    """Mini-batch Adam with plateau LR decay and early stopping on validation loss.

    ``params`` are updated in place and end at the best-validation values.
    """
    if len(train) == 0:
        raise NoWindows("no training windows")
    history = TrainHistory()
    state = AdamState()
    lr = config.learning_rate
    best = math.inf
    best_params = {k: p.data.copy() for k, p in params.items()}
    since_best = 0
    since_improve_lr = 0
    plateau_best = math.inf

    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train))
        total, count, clip_max = 0.0, 0, 0.0
        for i in range(0, len(order), config.batch_size):
            batch = train.take(order[i:i + config.batch_size])
            try:
                with T.GradGraph() as graph:
                    loss = loss_fn(batch, True, rng)
                grads = T.backward(graph, loss, params)
            except T.NonFiniteResult as exc:
                raise DivergedLoss(f"epoch {epoch + 1}: {exc}") from exc
            grads, _ = clip_grad_norm(grads, config.grad_clip_norm)
            clip_max = max(clip_max, clip_grad_norm(grads, None)[1])
            adam_step(params, grads, state, lr, max_norm=None)
            total += float(loss.data) * len(batch)
            count += len(batch)
        train_loss = total / count
        val_loss = evaluate_loss(loss_fn, val) if len(val) else train_loss
        if not math.isfinite(val_loss) or not math.isfinite(train_loss):
            raise DivergedLoss(f"epoch {epoch + 1}: non-finite loss")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.lr.append(lr)
        history.max_grad_norm_after_clip.append(clip_max)
        history.seconds.append(time.perf_counter() - start)
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch + 1, train_loss, val_loss, lr)

        if val_loss < best:
            best = val_loss
            history.best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.early_stop_patience:
            break
        if val_loss < plateau_best * (1 - 1e-4):
            plateau_best = val_loss
            since_improve_lr = 0
        else:
            since_improve_lr += 1
            if since_improve_lr >= config.lr_plateau_patience:
                lr *= config.lr_plateau_factor
                since_improve_lr = 0

    for k, p in params.items():
        p.data[...] = best_params[k]
    return history


def evaluate_loss(loss_fn: LossFn, windows: WindowSet, batch_size: int = 256) -> float:
    total = 0.0
    for i in range(0, len(windows), batch_size):
        batch = windows.take(np.arange(i, min(i + batch_size, len(windows))))
        total += float(loss_fn(batch, False, None).data) * len(batch)
    return total / len(windows)


def tft_config_for(windows: WindowSet, base: TftConfig | None = None, store_ids=None) -> TftConfig:
    base = base or TftConfig()
    ids = tuple(int(s) for s in (store_ids if store_ids is not None else np.unique(windows.store)))
    return replace(base, encoder_len=windows.encoder_len, horizon=windows.horizon, store_ids=ids,
                   encoder_vars=tuple(windows.encoder_names), decoder_vars=tuple(windows.decoder_names))


def train_model(windows: WindowSet, tft_config: TftConfig, train_config: TrainConfig,
                val_windows: WindowSet | None = None) -> tuple[TftModel, TrainHistory]:
    """Train a TFT on ``windows``; the last origins per store validate unless ``val_windows`` is given."""
    if len(windows) == 0:
        raise NoWindows("no windows to train on")
    if val_windows is None:
        tr, va = inner_split(windows, train_config.val_fraction, gap=windows.horizon - 1)
        train, val = windows.take(tr), windows.take(va)
    else:
        train, val = windows, val_windows
    model = TftModel.init(tft_config, seed=train_config.seed)
    rng = np.random.default_rng(train_config.seed + 1)
    q = tft_config.quantiles

    def loss_fn(batch, training, r):
        out = forward(model, batch, training=training, rng=r)
        return quantile_loss(out.predictions, batch.target, q)

    history = fit(model.params, loss_fn, train, val, train_config, rng)
    return model, history


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------


@dataclass
class HoldoutResult:
    model: TftModel
    history: TrainHistory
    scalers: ScalerSet
    train_windows: WindowSet
    test_windows: WindowSet
    forecast: QuantileForecast
    metrics: MetricSet
    calibration: CalibrationReport
    attention: np.ndarray
    encoder_weights: np.ndarray
    decoder_weights: np.ndarray


def evaluate_tft(model: TftModel, windows: WindowSet, scalers: ScalerSet):
    out = predict(model, windows)
    fc = predict_intervals(out, scalers, windows, model.config.quantiles)
    metrics = compute_metrics(fc.median(), windows.actual)
    cal = interval_coverage(fc.lower(), fc.upper(), windows.actual)
    return out, fc, metrics, cal


def holdout_split(panel: PanelTable, train_fraction: float = 0.8, encoder_len: int = 52, horizon: int = 5):
    """Scalers plus train/test windows for the chronological hold-out protocol."""
    train_panel, _ = chronological_split(panel, train_fraction)
    scalers = fit_scalers(train_panel)
    train = build_windows(train_panel, scalers, encoder_len, horizon)
    test = holdout_windows(panel, train_panel, scalers, encoder_len, horizon)
    return scalers, train, test


def run_holdout(panel: PanelTable, tft_config: TftConfig | None = None, train_config: TrainConfig | None = None,
                train_fraction: float = 0.8) -> HoldoutResult:
    tft_config = tft_config or TftConfig()
    train_config = train_config or TrainConfig()
    scalers, train, test = holdout_split(panel, train_fraction, tft_config.encoder_len, tft_config.horizon)
    cfg = tft_config_for(train, tft_config, panel.stores)
    model, history = train_model(train, cfg, train_config)
    out, fc, metrics, cal = evaluate_tft(model, test, scalers)
    return HoldoutResult(model, history, scalers, train, test, fc, metrics, cal,
                         out.attention, out.encoder_weights, out.decoder_weights)


@dataclass
class CvReport:
    folds: list[MetricSet]
    coverage: list[float]
    epochs: list[int]

    def _agg(self, attr: str) -> tuple[float, float]:
        vals = np.array([getattr(m, attr) for m in self.folds], dtype=np.float64)
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        return float(vals.mean()), sd

    @property
    def mean(self) -> dict[str, float]:
        return {a: self._agg(a)[0] for a in ("rmse", "mae", "r2", "smape")}

    @property
    def sd(self) -> dict[str, float]:
        return {a: self._agg(a)[1] for a in ("rmse", "mae", "r2", "smape")}

    def table(self) -> list[list[str]]:
        """Rows shaped like the published CV table: one per fold, then ``Ave`` as mean ± SD."""
        rows = [["Folds", "RMSE", "MAE", "R^2", "SMAPE"]]
        for i, m in enumerate(self.folds, start=1):
            rows.append([str(i), f"{m.rmse:.2f}", f"{m.mae:.2f}", f"{m.r2:.4f}", f"{m.smape:.2f}%"])
        mu, sd = self.mean, self.sd
        rows.append(["Ave", f"{mu['rmse']:.2f} ± {sd['rmse']:.2f}", f"{mu['mae']:.2f} ± {sd['mae']:.2f}",
                     f"{mu['r2']:.4f} ± {sd['r2']:.4f}", f"{mu['smape']:.2f} ± {sd['smape']:.2f}%"])
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.table())

    def to_dict(self) -> dict:
        return {
            "folds": [dict(fold=i, **m.to_dict(), coverage=c, epochs=e)
                      for i, (m, c, e) in enumerate(zip(self.folds, self.coverage, self.epochs), start=1)],
            "mean": self.mean,
            "sd": self.sd,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _run_fold(args):
    fold, tft_config, train_config, store_ids = args
    cfg = tft_config_for(fold.train, tft_config, store_ids)
    model, history = train_model(fold.train, cfg, train_config)
    _, _, metrics, cal = evaluate_tft(model, fold.test, fold.scalers)
    return metrics, cal.coverage, history.epochs


def run_cv(panel: PanelTable, k: int = 5, tft_config: TftConfig | None = None,
           train_config: TrainConfig | None = None, workers: int = 1,
           min_train_weeks: int | None = None) -> CvReport:
    """Fresh scalers and a fresh model per expanding-origin fold, scored in dollars."""
    tft_config = tft_config or TftConfig()
    train_config = train_config or TrainConfig()
    folds = cv_folds(panel, k, tft_config.encoder_len, tft_config.horizon, min_train_weeks)
    jobs = [(f, tft_config, train_config, panel.stores) for f in folds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    return CvReport([r[0] for r in results], [r[1] for r in results], [r[2] for r in results])
