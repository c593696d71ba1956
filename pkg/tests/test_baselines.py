import numpy as np
import pandas as pd
import pytest

from conftest import random_windows
from tftsales import baselines as B
from tftsales import tensor as T
from tftsales.ingest import ScalerSet, build_windows, fit_scalers
from tftsales.synthetic import as_panel, walmart_like
from tftsales.train import TrainConfig


def test_unknown_kind():
    with pytest.raises(B.UnknownKind):
        B.BaselineConfig("xgb")


def test_conv_keeps_length_with_same_padding(rng):
    model = B.build_baseline(B.BaselineConfig("cnn"), 52, 7)
    x = T.Tensor(rng.normal(size=(3, 52, 7)).astype(np.float32))
    conv = B.conv1d_same(x, model.params["conv.w"], model.params["conv.b"], 4)
    assert conv.shape == (3, 52, 32)
    assert np.all(conv.data >= 0)  # ReLU


@pytest.mark.parametrize("kind, expected", [
    ("lstm", 4 * (50 * (7 + 50) + 50) + (50 * 5 + 5)),
    ("cnn", (4 * 7 * 32 + 32) + (52 * 32 * 5 + 5)),
    ("cnn_lstm", (4 * 7 * 32 + 32) + 4 * (50 * (32 + 50) + 50) + (50 * 5 + 5)),
    ("seasonal_naive", 0),
])
def test_parameter_counts(kind, expected):
    assert B.build_baseline(B.BaselineConfig(kind), 52, 7).n_params() == expected


@pytest.mark.parametrize("kind", ["cnn", "lstm", "cnn_lstm"])
def test_forward_shape(kind, rng):
    model = B.build_baseline(B.BaselineConfig(kind, horizon=5), 52, 7, seed=1)
    w = random_windows(rng, n=4, encoder_len=52, horizon=5)
    assert model.forward(w).shape == (4, 5)
    with pytest.raises(T.ShapeMismatch):
        model.forward(random_windows(rng, n=2, encoder_len=20, horizon=5))


@pytest.mark.parametrize("kind", ["cnn", "lstm", "cnn_lstm"])
def test_baseline_gradients(kind, rng):
    w = random_windows(rng, n=3, encoder_len=8, horizon=2)
    with T.precision(np.float64):
        cfg = B.BaselineConfig(kind, cnn_filters=3, lstm_units=4, horizon=2)
        model = B.build_baseline(cfg, 8, 7, seed=2, dtype=np.float64)
        for p in model.params.values():
            p.data += rng.normal(0, 0.05, p.shape)
        from tftsales.train import mse_loss
        report = T.grad_check(lambda: mse_loss(model.forward(w), w.target), model.params, n_samples=60)
    assert report.groups() == set(model.params)


def test_kernel_longer_than_encoder_is_rejected():
    with pytest.raises(ValueError):
        B.build_baseline(B.BaselineConfig("cnn", cnn_kernel=10), 6, 7)


# ---------------------------------------------------------------------------
# seasonal naive
# ---------------------------------------------------------------------------


def test_seasonal_naive_on_a_constant_series(rng):
    w = random_windows(rng, n=2, encoder_len=52, horizon=5)
    w.encoder[:, :, 0] = 0.37
    sc = ScalerSet({}, 12.0, 15.0)
    fc = B.seasonal_naive_forecast(w, sc)
    np.testing.assert_allclose(fc, np.full((2, 5), sc.to_dollars(0.37)), rtol=1e-15)


def test_seasonal_naive_uses_the_same_week_last_year(rng):
    w = random_windows(rng, n=1, encoder_len=60, horizon=5)
    w.encoder[0, :, 0] = np.arange(60) / 100.0
    # forecast week origin + h sits 52 weeks after encoder index 59 + h - 52
    np.testing.assert_array_equal(B.seasonal_naive_scaled(w)[0], (59 + np.arange(1, 6) - 52) / 100.0)


def test_seasonal_naive_is_exact_on_a_periodic_series():
    raw = walmart_like(2, 130, seed=4)
    t = raw.groupby("Store").cumcount().to_numpy()
    raw["Weekly_Sales"] = 1.0e6 + 2.0e5 * np.sin(2 * np.pi * t / 52) + 1.0e3 * raw["Store"]
    panel = as_panel(raw)
    sc = fit_scalers(panel)
    w = build_windows(panel, sc)
    fc = B.seasonal_naive_forecast(w, sc)
    np.testing.assert_allclose(fc, w.actual, rtol=1e-9)


def test_seasonal_naive_needs_a_full_season(rng):
    with pytest.raises(ValueError):
        B.seasonal_naive_scaled(random_windows(rng, encoder_len=20))


def test_seasonal_naive_trains_nothing(rng):
    w = random_windows(rng, n=4, encoder_len=52, horizon=5)
    model, history = B.train_baseline(B.BaselineConfig("seasonal_naive"), w, TrainConfig())
    assert history is None and model.n_params() == 0


def test_short_baseline_training_run(small_panel):
    sc = fit_scalers(small_panel)
    w = build_windows(small_panel, sc, 12, 5)
    tc = TrainConfig(batch_size=16, max_epochs=3, seed=0)
    model, hist = B.train_baseline(B.BaselineConfig("cnn_lstm", lstm_units=8, cnn_filters=4), w, tc)
    assert hist.epochs == 3 and set(hist.lr) == {0.001}
    again, _ = B.train_baseline(B.BaselineConfig("cnn_lstm", lstm_units=8, cnn_filters=4), w, tc)
    np.testing.assert_array_equal(model.predict_scaled(w), again.predict_scaled(w))
    assert np.all(model.predict_dollars(w, sc) > 0)


# ---------------------------------------------------------------------------
# comparison harness
# ---------------------------------------------------------------------------


def _external_frame(w, pred):
    H = w.horizon
    return pd.DataFrame({"store": np.repeat(w.store, H), "origin_t": np.repeat(w.origin_t, H),
                         "horizon": np.tile(np.arange(1, H + 1), len(w)), "prediction": pred.ravel()})


def test_external_forecast_is_aligned_by_key(rng, tmp_path):
    w = random_windows(rng, n=5, encoder_len=6, horizon=3)
    pred = rng.uniform(1e5, 1e6, (5, 3))
    df = _external_frame(w, pred).sample(frac=1.0, random_state=1)
    df.columns = [c.upper() for c in df.columns]
    df.to_csv(tmp_path / "ext.csv", index=False)
    np.testing.assert_array_equal(B.read_external_forecast(tmp_path / "ext.csv", w), pred)


@pytest.mark.parametrize("mutate", [
    lambda d: d.iloc[1:],
    lambda d: pd.concat([d, d.iloc[[0]]]),
    lambda d: pd.concat([d, d.iloc[[0]].assign(origin_t=999)]),
    lambda d: d.drop(columns=["prediction"]),
])
def test_external_forecast_protocol_mismatch(rng, tmp_path, mutate):
    w = random_windows(rng, n=4, encoder_len=6, horizon=3)
    mutate(_external_frame(w, np.ones((4, 3)))).to_csv(tmp_path / "ext.csv", index=False)
    with pytest.raises(B.ProtocolMismatch):
        B.read_external_forecast(tmp_path / "ext.csv", w)


def test_compare_models_table(rng, tmp_path):
    w = random_windows(rng, n=6, encoder_len=6, horizon=3)
    table = B.compare_models({"perfect": w.actual, "off": w.actual * 1.1}, w)
    assert table.names() == ["perfect", "off"]
    assert table["perfect"].rmse == 0.0 and table["off"].rmse > 0
    rows = table.table()
    assert rows[0] == ["Models", "RMSE", "MAE", "R^2", "SMAPE"]
    assert rows[1] == ["perfect", "0.00", "0.00", "1.0000", "0.00%"]
    table.to_csv(tmp_path / "t.csv")
    table.to_json(tmp_path / "t.json")
    with pytest.raises(B.ProtocolMismatch):
        B.compare_models({"short": w.actual[:-1]}, w)
