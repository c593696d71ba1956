"""Synthetic store-week panels with the reference CSV schema.

Used for tests and demos when the real file is not at hand. ``walmart_like``
mimics the reference data's shape (45 stores, 143 weeks from 2010-02-05,
holiday weeks, store-level scale differences, annual seasonality);
``single_driver`` builds a panel whose sales depend on one covariate only.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .ingest import RAW_COLUMNS, PanelTable, panel_from_frame

START = pd.Timestamp("2010-02-05")
HOLIDAY_WEEKS = {
    "2010-02-12", "2011-02-11", "2012-02-10",  # Super Bowl
    "2010-09-10", "2011-09-09", "2012-09-07",  # Labor Day
    "2010-11-26", "2011-11-25", "2012-11-23",  # Thanksgiving
    "2010-12-31", "2011-12-30", "2012-12-28",  # Christmas
}


def _dates(n_weeks: int) -> pd.DatetimeIndex:
    return pd.date_range(START, periods=n_weeks, freq="7D")


def _seasonal_profile(dates: pd.DatetimeIndex) -> np.ndarray:
    """Multiplicative log-scale bump for late-November and December weeks."""
    doy = dates.dayofyear.to_numpy()
    week = (doy - 1) // 7
    base = 0.04 * np.sin(2 * np.pi * doy / 365.25) + 0.03 * np.cos(4 * np.pi * doy / 365.25)
    bump = np.zeros(len(dates))
    bump[(dates.month == 11) & (dates.day >= 22) & (dates.day <= 28)] = 0.30
    bump[(dates.month == 12) & (dates.day >= 17) & (dates.day <= 24)] = 0.45
    bump[(dates.month == 12) & (dates.day >= 10) & (dates.day < 17)] = 0.15
    bump[(dates.month == 1) & (week < 3)] = -0.12
    return base + bump


def walmart_like(n_stores: int = 45, n_weeks: int = 143, seed: int = 0) -> pd.DataFrame:
    """Raw frame with the eight reference columns (Date as DD-MM-YYYY strings)."""
    rng = np.random.default_rng(seed)
    dates = _dates(n_weeks)
    profile = _seasonal_profile(dates)
    holiday = np.isin(dates.strftime("%Y-%m-%d"), list(HOLIDAY_WEEKS)).astype(int)
    doy = dates.dayofyear.to_numpy()
    fuel = 2.6 + np.cumsum(rng.normal(0.008, 0.035, n_weeks))
    rows = []
    for s in range(1, n_stores + 1):
        level = rng.normal(13.75, 0.55)
        amp = rng.uniform(0.5, 1.5)
        trend = rng.normal(0.0, 0.0008)
        noise = np.zeros(n_weeks)
        for t in range(1, n_weeks):
            noise[t] = 0.5 * noise[t - 1] + rng.normal(0.0, 0.025)
        temp_mean = rng.uniform(45, 75)
        temp = temp_mean - 20 * np.cos(2 * np.pi * (doy - 15) / 365.25) + rng.normal(0, 4, n_weeks)
        cpi0 = rng.choice([126.5, 131.0, 182.0, 211.0]) + rng.normal(0, 2)
        cpi = cpi0 * (1 + 0.0004 * np.arange(n_weeks)) + rng.normal(0, 0.05, n_weeks)
        unemp = rng.uniform(4.0, 12.0) + np.cumsum(rng.normal(-0.005, 0.03, n_weeks))
        log_sales = (level + amp * profile + 0.04 * holiday + trend * np.arange(n_weeks)
                     - 0.002 * (temp - temp_mean) + noise)
        for t in range(n_weeks):
            rows.append((s, dates[t].strftime("%d-%m-%Y"), round(float(np.exp(log_sales[t])), 2),
                         int(holiday[t]), round(float(temp[t]), 2),
                         round(float(fuel[t] + rng.normal(0, 0.02)), 3), round(float(cpi[t]), 7),
                         round(float(unemp[t]), 3)))
    return pd.DataFrame(rows, columns=list(RAW_COLUMNS))


def single_driver(driver: str = "cpi", n_stores: int = 4, n_weeks: int = 130, lag: int = 1,
                  strength: float = 0.4, seed: int = 0) -> pd.DataFrame:
    """Sales depend only on ``driver`` observed ``lag`` weeks earlier.

    Every covariate (and the driver itself) is drawn independently each week,
    so past sales carry no information beyond the driver's history.
    """
    if not 1 <= lag < n_weeks:
        raise ValueError("lag must be in [1, n_weeks)")
    rng = np.random.default_rng(seed)
    dates = _dates(n_weeks)
    cols = {
        "Temperature": lambda: rng.normal(60, 18, n_weeks),
        "Fuel_Price": lambda: rng.normal(3.4, 0.45, n_weeks),
        "CPI": lambda: rng.normal(170, 40, n_weeks),
        "Unemployment": lambda: rng.normal(8, 1.9, n_weeks),
    }
    key = {"temperature": "Temperature", "fuel_price": "Fuel_Price", "cpi": "CPI",
           "unemployment": "Unemployment"}[driver]
    frames = []
    for s in range(1, n_stores + 1):
        data = {k: f() for k, f in cols.items()}
        x = data[key]
        z = (x - x.mean()) / x.std()
        signal = np.zeros(n_weeks)
        signal[lag:] = z[:-lag]
        log_sales = 13.8 + 0.2 * rng.normal() + strength * signal + rng.normal(0, 0.01, n_weeks)
        frames.append(pd.DataFrame({
            "Store": s,
            "Date": dates.strftime("%d-%m-%Y"),
            "Weekly_Sales": np.exp(log_sales).round(2),
            "Holiday_Flag": rng.binomial(1, 0.07, n_weeks),
            **{k: v.round(4) for k, v in data.items()},
        }))
    return pd.concat(frames, ignore_index=True)[list(RAW_COLUMNS)]


def as_panel(raw: pd.DataFrame) -> PanelTable:
    df = raw.copy()
    df.columns = [c.lower() for c in df.columns]
    return panel_from_frame(df)
