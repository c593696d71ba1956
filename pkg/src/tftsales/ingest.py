"""Weekly store-sales panel: parsing, validation, scaling and windowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

RAW_COLUMNS = ("Store", "Date", "Weekly_Sales", "Holiday_Flag", "Temperature",
               "Fuel_Price", "CPI", "Unemployment")
PANEL_COLUMNS = ("store", "date", "weekly_sales", "holiday_flag", "temperature",
                 "fuel_price", "cpi", "unemployment", "t_idx", "log_sales")
ZSCORE_COLUMNS = ("temperature", "fuel_price", "cpi", "unemployment", "t_idx")
COVARIATES = ("holiday_flag", "temperature", "fuel_price", "cpi", "unemployment", "t_idx")
ENCODER_FEATURES = ("target",) + COVARIATES
DECODER_FEATURES = COVARIATES


class IngestError(ValueError):
    pass


class MissingColumn(IngestError):
    pass


class BadDate(IngestError):
    pass


class NonPositiveSales(IngestError):
    pass


class DuplicateStoreWeek(IngestError):
    pass


class MissingValue(IngestError):
    pass


class InvalidValue(IngestError):
    pass


class IrregularCadence(IngestError):
    pass


class EmptyPanel(IngestError):
    pass


class DegenerateSplit(IngestError):
    pass


class ConstantColumn(IngestError):
    pass


class SeriesTooShort(IngestError):
    pass


class InsufficientHistory(IngestError):
    pass


@dataclass(frozen=True)
class PanelTable:
    """Validated store-week panel, sorted by (store, date).

    ``frame`` holds the eight raw columns plus ``t_idx`` (weeks since the
    earliest date in the file) and ``log_sales``.
    """

    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def stores(self) -> list[int]:
        return sorted(self.frame["store"].unique().tolist())

    def weeks_per_store(self) -> dict[int, int]:
        return self.frame.groupby("store").size().to_dict()

    def store_frame(self, store: int) -> pd.DataFrame:
        return self.frame[self.frame["store"] == store]

    def subset(self, mask) -> "PanelTable":
        return PanelTable(self.frame[np.asarray(mask)].reset_index(drop=True))


def _parse_dates(raw: pd.Series) -> pd.Series:
    raw = raw.astype(str).str.strip()
    for fmt in ("%d-%m-%Y", "%Y-%m-%d"):
        parsed = pd.to_datetime(raw, format=fmt, errors="coerce")
        if parsed.notna().all():
            return parsed
    bad = raw[pd.to_datetime(raw, format="%d-%m-%Y", errors="coerce").isna()].iloc[0]
    raise BadDate(f"unparseable date {bad!r} (expected DD-MM-YYYY or YYYY-MM-DD)")


def panel_from_frame(df: pd.DataFrame) -> PanelTable:
    """Validate a frame with the raw columns (lower-case names) and derive t_idx/log_sales."""
    df = df.copy()
    numeric = ["weekly_sales", "holiday_flag", "temperature", "fuel_price", "cpi", "unemployment"]
    if df[["store", "date"] + numeric].isna().any().any():
        col = df.columns[df.isna().any()][0]
        raise MissingValue(f"column {col!r} has missing values")
    if not np.issubdtype(df["date"].dtype, np.datetime64):
        df["date"] = _parse_dates(df["date"])
    df["store"] = df["store"].astype(np.int64)
    for col in numeric:
        df[col] = df[col].astype(np.float64)
    if not df["holiday_flag"].isin([0.0, 1.0]).all():
        raise InvalidValue("holiday_flag must be 0 or 1")
    if (df["weekly_sales"] <= 0).any():
        row = df.loc[df["weekly_sales"] <= 0].iloc[0]
        raise NonPositiveSales(f"store {row['store']} on {row['date'].date()}: sales {row['weekly_sales']}")
    dup = df.duplicated(["store", "date"])
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise DuplicateStoreWeek(f"store {row['store']} has two rows for {row['date'].date()}")

    df = df.sort_values(["store", "date"], kind="mergesort").reset_index(drop=True)
    days = (df["date"] - df["date"].min()).dt.days
    if (days % 7 != 0).any():
        raise IrregularCadence("dates are not on a common weekly grid")
    df["t_idx"] = (days // 7).astype(np.int64)
    steps = df.groupby("store")["t_idx"].diff().dropna()
    if (steps != 1).any():
        raise IrregularCadence("a store skips weeks; the panel must have no gaps")
    df["log_sales"] = np.log(df["weekly_sales"])
    return PanelTable(df[list(PANEL_COLUMNS)])


def parse_csv(path) -> PanelTable:
    """Read the weekly-sales CSV (header names case-insensitive, any column order)."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"Date": str, "date": str, "DATE": str})
    except pd.errors.EmptyDataError as exc:
        raise MissingColumn(f"{path}: empty file, expected columns {', '.join(RAW_COLUMNS)}") from exc
    lower = {c.strip().lower(): c for c in df.columns}
    missing = [c for c in RAW_COLUMNS if c.lower() not in lower]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    df = df[[lower[c.lower()] for c in RAW_COLUMNS]]
    df.columns = [c.lower() for c in RAW_COLUMNS]
    if df.empty:
        raise EmptyPanel(f"{path}: no data rows")
    return panel_from_frame(df)


STAT_COLUMNS = {
    "Store": "store",
    "Sales": "weekly_sales",
    "Holiday": "holiday_flag",
    "Temp": "temperature",
    "FP": "fuel_price",
    "CPI": "cpi",
    "UEMP": "unemployment",
}
STAT_ROWS = ("Count", "Mean", "SD", "Min", "25%", "50%", "75%", "Max")


def descriptive_stats(panel: PanelTable) -> pd.DataFrame:
    """Count/mean/sample SD/min/quartiles/max for each raw numeric column.

    Quartiles use linear interpolation between order statistics.
    """
    if len(panel) == 0:
        raise EmptyPanel("cannot describe an empty panel")
    out = {}
    for label, col in STAT_COLUMNS.items():
        x = panel.frame[col].to_numpy(dtype=np.float64)
        sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        q25, q50, q75 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
        out[label] = [float(len(x)), x.mean(), sd, x.min(), q25, q50, q75, x.max()]
    return pd.DataFrame(out, index=list(STAT_ROWS))


# printed decimals per column and row, mirroring the published table layout
_STORE_DECIMALS = {"SD": 1}
_DECIMALS = {"Store": 0, "Sales": 1}


def format_stats(stats: pd.DataFrame) -> pd.DataFrame:
    """Round each cell to the precision used in the published summary table."""
    cells = {}
    for col in stats.columns:
        values = []
        for row in stats.index:
            if row == "Count":
                d = 0
            elif col == "Store":
                d = _STORE_DECIMALS.get(row, 0)
            else:
                d = _DECIMALS.get(col, 2)
            values.append(f"{stats.at[row, col]:.{d}f}")
        cells[col] = values
    return pd.DataFrame(cells, index=stats.index)


def chronological_split(panel: PanelTable, train_fraction: float = 0.8) -> tuple[PanelTable, PanelTable]:
    """Per store, the earliest floor(n * fraction) weeks train, the rest are held out."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    df = panel.frame
    pos = df.groupby("store").cumcount().to_numpy()
    n = df.groupby("store")["store"].transform("size").to_numpy()
    n_train = np.floor(n * train_fraction).astype(int)
    if ((n_train == 0) | (n_train == n)).any():
        store = int(df["store"].to_numpy()[(n_train == 0) | (n_train == n)][0])
        raise DegenerateSplit(f"store {store}: split leaves one side empty")
    is_train = pos < n_train
    return panel.subset(is_train), panel.subset(~is_train)


@dataclass(frozen=True)
class ScalerSet:
    """Z-score parameters for real covariates and min-max parameters for log sales."""

    zscore: dict[str, tuple[float, float]]
    target_min: float
    target_max: float

    def apply(self, column: str, values) -> np.ndarray:
        mean, sd = self.zscore[column]
        return (np.asarray(values, dtype=np.float64) - mean) / sd

    def invert(self, column: str, values) -> np.ndarray:
        mean, sd = self.zscore[column]
        return np.asarray(values, dtype=np.float64) * sd + mean

    def scale_target(self, log_sales) -> np.ndarray:
        return (np.asarray(log_sales, dtype=np.float64) - self.target_min) / (self.target_max - self.target_min)

    def unscale_target(self, scaled) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * (self.target_max - self.target_min) + self.target_min

    def to_dollars(self, scaled) -> np.ndarray:
        return np.exp(self.unscale_target(scaled))

    def from_dollars(self, sales) -> np.ndarray:
        return self.scale_target(np.log(np.asarray(sales, dtype=np.float64)))

    def to_dict(self) -> dict:
        return {"zscore": {k: list(v) for k, v in self.zscore.items()},
                "target_min": self.target_min, "target_max": self.target_max}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerSet":
        return cls({k: (float(v[0]), float(v[1])) for k, v in d["zscore"].items()},
                   float(d["target_min"]), float(d["target_max"]))


def fit_scalers(train: PanelTable) -> ScalerSet:
    """Fit on training rows only. SD is the sample (n-1) standard deviation."""
    df = train.frame
    if len(df) == 0:
        raise EmptyPanel("cannot fit scalers on an empty panel")
    z = {}
    for col in ZSCORE_COLUMNS:
        x = df[col].to_numpy(dtype=np.float64)
        if len(np.unique(x)) < 2:
            raise ConstantColumn(f"{col} has fewer than two distinct training values")
        z[col] = (float(x.mean()), float(x.std(ddof=1)))
    y = df["log_sales"].to_numpy(dtype=np.float64)
    if y.max() <= y.min():
        raise ConstantColumn("log_sales is constant on the training rows")
    return ScalerSet(z, float(y.min()), float(y.max()))


def scaled_features(panel: PanelTable, scalers: ScalerSet) -> pd.DataFrame:
    """Model-space columns in ENCODER_FEATURES order (target first)."""
    df = panel.frame
    out = pd.DataFrame({"target": scalers.scale_target(df["log_sales"])}, index=df.index)
    out["holiday_flag"] = df["holiday_flag"].to_numpy(dtype=np.float64)
    for col in ZSCORE_COLUMNS:
        out[col] = scalers.apply(col, df[col])
    return out[list(ENCODER_FEATURES)]


@dataclass
class WindowSet:
    """Stacked window samples.

    Arrays are indexed by window: ``encoder`` [N, L, F_enc], ``decoder``
    [N, H, F_dec], ``target`` [N, H] (scaled log sales), ``actual`` [N, H]
    (dollars, for evaluation only). ``origin_t`` is the t_idx of the last
    encoder week; forecasts cover origin_t + 1 .. origin_t + H.
    """

    store: np.ndarray
    origin_t: np.ndarray
    encoder: np.ndarray
    decoder: np.ndarray
    target: np.ndarray
    actual: np.ndarray
    encoder_names: tuple[str, ...] = ENCODER_FEATURES
    decoder_names: tuple[str, ...] = DECODER_FEATURES

    def __len__(self) -> int:
        return len(self.store)

    @property
    def encoder_len(self) -> int:
        return self.encoder.shape[1]

    @property
    def horizon(self) -> int:
        return self.target.shape[1]

    def take(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.store[idx], self.origin_t[idx], self.encoder[idx], self.decoder[idx],
                         self.target[idx], self.actual[idx], self.encoder_names, self.decoder_names)

    def forecast_weeks(self) -> np.ndarray:
        return self.origin_t[:, None] + np.arange(1, self.horizon + 1)[None, :]

    def keys(self) -> list[tuple[int, int]]:
        return list(zip(self.store.tolist(), self.origin_t.tolist()))

    @classmethod
    def concat(cls, parts: list["WindowSet"]) -> "WindowSet":
        first = parts[0]
        return cls(*(np.concatenate([getattr(p, a) for p in parts]) for a in
                     ("store", "origin_t", "encoder", "decoder", "target", "actual")),
                   first.encoder_names, first.decoder_names)

    def to_csv(self, path) -> None:
        """One row per window: store, origin_t, then encoder features step-major,
        decoder features step-major, then the scaled targets."""
        header = ["store", "origin_t"]
        header += [f"enc_{s}_{n}" for s in range(self.encoder_len) for n in self.encoder_names]
        header += [f"dec_{s}_{n}" for s in range(self.horizon) for n in self.decoder_names]
        header += [f"target_{h + 1}" for h in range(self.horizon)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([int(self.store[i]), int(self.origin_t[i])]
                           + [repr(float(v)) for v in self.encoder[i].ravel()]
                           + [repr(float(v)) for v in self.decoder[i].ravel()]
                           + [repr(float(v)) for v in self.target[i]])


def build_windows(panel: PanelTable, scalers: ScalerSet, encoder_len: int = 52,
                  horizon: int = 5) -> WindowSet:
    """Every (store, origin) with encoder_len + horizon consecutive weeks."""
    if encoder_len < 1 or horizon < 1:
        raise ValueError("encoder_len and horizon must be >= 1")
    span = encoder_len + horizon
    feats = scaled_features(panel, scalers).to_numpy(dtype=np.float64)
    df = panel.frame
    parts = []
    for store, rows in df.groupby("store", sort=True).indices.items():
        if len(rows) < span:
            raise SeriesTooShort(f"store {store} has {len(rows)} weeks, need {span}")
        f = feats[rows]
        view = np.lib.stride_tricks.sliding_window_view(f, span, axis=0)  # [n, F, span]
        view = np.moveaxis(view, 2, 1)
        sales = np.lib.stride_tricks.sliding_window_view(df["weekly_sales"].to_numpy()[rows], span)
        t = df["t_idx"].to_numpy()[rows]
        n = view.shape[0]
        parts.append(WindowSet(
            store=np.full(n, store, dtype=np.int64),
            origin_t=t[encoder_len - 1: encoder_len - 1 + n].astype(np.int64),
            encoder=np.ascontiguousarray(view[:, :encoder_len, :]),
            decoder=np.ascontiguousarray(view[:, encoder_len:, 1:]),
            target=np.ascontiguousarray(view[:, encoder_len:, 0]),
            actual=np.ascontiguousarray(sales[:, encoder_len:]),
        ))
    return WindowSet.concat(parts)


def holdout_windows(panel: PanelTable, train: PanelTable, scalers: ScalerSet,
                    encoder_len: int = 52, horizon: int = 5) -> WindowSet:
    """Windows whose forecast weeks all lie after the store's last training week."""
    windows = build_windows(panel, scalers, encoder_len, horizon)
    last_train = train.frame.groupby("store")["t_idx"].max()
    cutoff = last_train.reindex(windows.store).to_numpy()
    return windows.take(np.flatnonzero(windows.origin_t >= cutoff))


@dataclass
class CvFold:
    fold: int
    train_panel: PanelTable
    scalers: ScalerSet
    train: WindowSet
    test: WindowSet
    block: dict[int, tuple[int, int]] = field(default_factory=dict)  # store -> (first, last) t_idx


def fold_blocks(n_weeks: int, k: int, encoder_len: int, horizon: int,
                min_train_weeks: int | None = None) -> tuple[int, int]:
    """(burn_in, block_len) for one store's week positions.

    Test blocks have equal length and tile the tail of the series; any
    remainder is absorbed into the burn-in.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if min_train_weeks is None:
        min_train_weeks = encoder_len + 3 * horizon
    block = (n_weeks - min_train_weeks) // k
    if block < horizon:
        raise InsufficientHistory(
            f"{n_weeks} weeks cannot hold a {min_train_weeks}-week prefix plus {k} test blocks of >= {horizon}")
    return n_weeks - k * block, block


def cv_folds(panel: PanelTable, k: int = 5, encoder_len: int = 52, horizon: int = 5,
             min_train_weeks: int | None = None) -> list[CvFold]:
    """Expanding-origin chronological folds.

    Per store, weeks after the burn-in are cut into k contiguous blocks. Fold i
    trains on every week before block i (scalers refit on those rows) and
    tests on the windows whose forecast weeks lie inside block i.
    """
    df = panel.frame
    pos = df.groupby("store").cumcount().to_numpy()
    n = df.groupby("store")["store"].transform("size").to_numpy()
    layout = {}
    for weeks in np.unique(n):
        layout[int(weeks)] = fold_blocks(int(weeks), k, encoder_len, horizon, min_train_weeks)
    burn = np.array([layout[int(w)][0] for w in n])
    block = np.array([layout[int(w)][1] for w in n])
    t = df["t_idx"].to_numpy()

    folds = []
    for i in range(k):
        start = burn + i * block
        train_panel = panel.subset(pos < start)
        scalers = fit_scalers(train_panel)
        train = build_windows(train_panel, scalers, encoder_len, horizon)
        in_range = panel.subset(pos < start + block)
        candidates = build_windows(in_range, scalers, encoder_len, horizon)
        first_test = pd.Series(t[pos == start], index=df["store"].to_numpy()[pos == start])
        keep = candidates.origin_t + 1 >= first_test.reindex(candidates.store).to_numpy()
        test = candidates.take(np.flatnonzero(keep))
        spans = {int(s): (int(first_test[s]), int(first_test[s] + block[df["store"].to_numpy() == s][0] - 1))
                 for s in first_test.index}
        folds.append(CvFold(i + 1, train_panel, scalers, train, test, spans))
    return folds
