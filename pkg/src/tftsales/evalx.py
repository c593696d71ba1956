"""Dollar-space metrics, interval calibration, residuals and interpretability summaries.

Every model is scored through :func:`compute_metrics`; nothing else in the
package computes RMSE/MAE/R^2/SMAPE.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np


class MetricError(ValueError):
    pass


class ConstantActuals(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class NoPairs(MetricError):
    pass


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    mae: float
    r2: float
    smape: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != actual.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {actual.size} actuals")
    return pred, actual


def compute_metrics(pred, actual) -> MetricSet:
    """RMSE, MAE, R^2 (against the mean of ``actual``) and SMAPE in percent.

    SMAPE uses the halved denominator ``(|y| + |yhat|) / 2`` so it is bounded
    by 200. A point where both are zero contributes zero.
    """
    pred, actual = _pair(pred, actual)
    n = pred.size
    if n < 2:
        raise LengthMismatch("need at least two points")
    err = actual - pred
    sse = float(np.sum(err * err))
    sst = float(np.sum((actual - actual.mean()) ** 2))
    if sst == 0.0:
        raise ConstantActuals("R^2 is undefined for constant actuals")
    denom = (np.abs(actual) + np.abs(pred)) / 2.0
    ratio = np.divide(np.abs(err), denom, out=np.zeros_like(denom), where=denom > 0)
    return MetricSet(
        rmse=float(np.sqrt(sse / n)),
        mae=float(np.mean(np.abs(err))),
        r2=1.0 - sse / sst,
        smape=float(100.0 * ratio.mean()),
        n=n,
    )


@dataclass(frozen=True)
class CalibrationReport:
    nominal: float
    coverage: float
    per_horizon: tuple[float, ...]
    mean_width: float
    width_per_horizon: tuple[float, ...]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["horizon", "coverage", "mean_width"])
            for h, (c, wd) in enumerate(zip(self.per_horizon, self.width_per_horizon), start=1):
                w.writerow([h, repr(c), repr(wd)])
            w.writerow(["all", repr(self.coverage), repr(self.mean_width)])


def interval_coverage(lower, upper, actual, nominal: float = 0.9) -> CalibrationReport:
    """Fraction of actuals inside [lower, upper], endpoints inclusive.

    Inputs are [N, horizon] (or [N], treated as a single horizon).
    """
    lower, upper, actual = (np.asarray(a, dtype=np.float64) for a in (lower, upper, actual))
    if lower.shape != upper.shape or lower.shape != actual.shape:
        raise LengthMismatch("lower, upper and actual must share a shape")
    if actual.size == 0:
        raise NoPairs("no forecast/actual pairs")
    if actual.ndim == 1:
        lower, upper, actual = lower[:, None], upper[:, None], actual[:, None]
    inside = (lower <= actual) & (actual <= upper)
    width = upper - lower
    return CalibrationReport(
        nominal=nominal,
        coverage=float(inside.mean()),
        per_horizon=tuple(float(v) for v in inside.mean(axis=0)),
        mean_width=float(width.mean()),
        width_per_horizon=tuple(float(v) for v in width.mean(axis=0)),
    )


def attention_by_lag(attention: np.ndarray, encoder_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Average attention weight per lag (query position minus key position).

    ``attention`` is [N, horizon, encoder_len + horizon]. Each decoder row's
    weights are re-indexed by lag and summed into a per-row lag profile; the
    profiles are then averaged over samples and decoder positions, so the
    result sums to one. Returns (lags, mean_weight).
    """
    attention = np.asarray(attention, dtype=np.float64)
    n, horizon, total = attention.shape
    profile = np.zeros(total)
    for t in range(horizon):
        q = encoder_len + t
        lags = q - np.arange(q + 1)
        profile[lags] += attention[:, t, : q + 1].sum(axis=0)
    profile /= n * horizon
    return np.arange(total), profile


def variable_importance(weights: np.ndarray, names) -> dict[str, float]:
    """Mean selection weight per variable over samples and time steps."""
    weights = np.asarray(weights, dtype=np.float64)
    means = weights.reshape(-1, weights.shape[-1]).mean(axis=0)
    return dict(zip(names, (float(v) for v in means)))


@dataclass
class ResidualSummary:
    residuals: np.ndarray
    mean: float
    sd: float
    lag1_autocorr: float


def residual_diagnostics(pred, actual) -> ResidualSummary:
    """Residuals ``actual - pred`` (in the given time order) and their summary.

    Lag-1 autocorrelation is reported as 0 when the residuals are constant.
    """
    pred, actual = _pair(pred, actual)
    e = actual - pred
    centered = e - e.mean()
    denom = float(np.sum(centered ** 2))
    ac = float(np.sum(centered[1:] * centered[:-1]) / denom) if denom > 0 and e.size > 1 else 0.0
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    return ResidualSummary(e, float(e.mean()), sd, ac)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
