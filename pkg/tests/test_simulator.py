import numpy as np
import pytest

from kshap.dataset import MARKET_FEATURES, save_csv
from kshap.errors import InsufficientHistory, InvalidConfig
from kshap.simulator import (BUY, SELL, BookState, MarketConfig, compute_features,
                             fundamental_process, pi3_config, run_market, run_prisoners_dilemma)

FEAT = {name: i for i, name in enumerate(MARKET_FEATURES)}


def test_ou_fixed_point_and_decay():
    p = fundamental_process(100.0, 0.5, 0.0, 1.0, 50, seed=0)
    assert len(p) == 51 and np.all(p == 100.0)
    p = fundamental_process(100.0, 1.0, 0.0, 0.1, 5, seed=0, x0=110.0)
    assert len(p) == 51
    gap = p - 100.0
    assert np.all(np.diff(gap) < 0) and np.all(gap > 0)


def test_ou_stationary_variance():
    # closed form of the continuous process: sigma^2 / (2 kappa)
    kappa, sigma, step = 1.0, 0.5, 0.01
    p = fundamental_process(0.0, kappa, sigma, step, 1e5 * step, seed=4)
    burn = int(5 / step)
    assert abs(p[burn:].var() / (sigma ** 2 / (2 * kappa)) - 1) < 0.10


def test_symmetric_book_imbalances():
    book = BookState()
    for k in range(5):
        book.submit(0.0, 0, BUY, 100 - k, 10)
        book.submit(0.0, 1, SELL, 101 + k, 10)
    book.last_price = 100
    x = compute_features(book, 1.0)
    for name in ("volume_imbalance_l1", "volume_imbalance_l2", "volume_imbalance_l5"):
        assert x[FEAT[name]] == 0.5


def test_constant_price_history():
    book = BookState()
    book.submit(0.0, 0, BUY, 100, 5)
    book.submit(0.0, 1, SELL, 101, 5)
    book.last_price = 100
    for _ in range(30):
        book.sample()
    x = compute_features(book, 30.0)
    for name in MARKET_FEATURES:
        if name.startswith("price_return"):
            assert x[FEAT[name]] == 0.0
        elif name.startswith("price_ma_") and "diff" not in name:
            assert x[FEAT[name]] == pytest.approx(1.00)
        elif "diff" in name:
            assert x[FEAT[name]] == 0.5
    assert len(x) == 29 and np.isfinite(x).all()


def test_three_trade_exec_imbalance():
    # buy-initiated 3 at t=10, sell-initiated 2 at t=20, buy-initiated 1 at t=30
    book = BookState()
    book.submit(0.0, 0, SELL, 100, 5)
    book.submit(10.0, 1, BUY, 100, 3)
    book.submit(11.0, 2, BUY, 99, 4)
    book.submit(20.0, 3, SELL, 99, 2)
    book.submit(30.0, 4, BUY, 100, 1)
    x = compute_features(book, 40.0)
    assert x[FEAT["exec_volume_imbalance_1min"]] == pytest.approx(4 / 6, abs=1e-15)
    # a 1-minute window at t=85 only sees the last trade
    assert compute_features(book, 85.0)[FEAT["exec_volume_imbalance_1min"]] == 1.0


def test_no_trades_raises():
    with pytest.raises(InsufficientHistory):
        compute_features(BookState(), 0.0)


def test_matching_is_price_time_fifo():
    book = BookState()
    a, _ = book.submit(0.0, 0, SELL, 101, 3)
    b, _ = book.submit(0.0, 1, SELL, 101, 3)
    _, fills = book.submit(1.0, 2, BUY, 102, 4)
    assert fills == [(0, 101, 3), (1, 101, 1)]
    assert a not in book.orders and book.orders[b][2][2] == 2
    book.check()


def test_config_validation():
    with pytest.raises(InvalidConfig):
        MarketConfig(momentum_windows=[(26, 12)]).validate()
    with pytest.raises(InvalidConfig):
        MarketConfig(n_fundamental=0, n_momentum=[0], n_market_makers=0).validate()
    with pytest.raises(InvalidConfig):
        MarketConfig.from_json({"bogus": 1})
    cfg = pi3_config(seed=2)
    assert MarketConfig.from_json(cfg.to_json()) == cfg


def test_pi3_labels_and_sanity(small_market):
    ds = small_market
    assert set(np.unique(ds.labels)) == {0, 1, 2}
    assert len(ds.label_names) == 3
    assert np.all(np.diff(ds.timestamps) >= 0)
    size, depth, direction = ds.actions.T
    assert size.min() >= 1 and size.max() <= 100
    assert set(np.unique(direction)) <= {0.0, 1.0}
    for name in MARKET_FEATURES:
        if "imbalance" in name or "diff" in name:
            col = ds.states[:, FEAT[name]]
            assert col.min() >= 0 and col.max() <= 1


def test_short_horizon_drops_silent_strategies():
    ds = run_market(pi3_config(seed=5, horizon=600.0))
    assert not any(n.startswith("Momentum") for n in ds.label_names)
    assert np.unique(ds.labels).tolist() == list(range(len(ds.label_names)))


def test_noise_rows_and_no_noise():
    cfg = pi3_config(seed=5, horizon=600.0, n_noise=40)
    ds = run_market(cfg, check=True)
    noise = ds.label_names.index("Noise")
    rows = ds.labels == noise
    assert rows.sum() > 0
    assert np.all(ds.actions[rows, 1] == 0)
    assert ds.actions[rows, 0].min() >= 1 and ds.actions[rows, 0].max() <= 100
    base = run_market(pi3_config(seed=5, horizon=600.0))
    assert "Noise" not in base.label_names


def test_market_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_csv(run_market(pi3_config(seed=9, horizon=400.0)), a)
    save_csv(run_market(pi3_config(seed=9, horizon=400.0)), b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    save_csv(run_market(pi3_config(seed=10, horizon=400.0)), c)
    assert c.read_bytes() != a.read_bytes()


def test_pd_defect_vs_cooperate():
    ds = run_prisoners_dilemma("defect-vs-cooperate", 10, "full")
    assert len(ds) == 20 and np.bincount(ds.labels).tolist() == [10, 10]
    assert np.all(ds.actions[ds.labels == 0, 0] == 1)
    assert np.all(ds.actions[ds.labels == 1, 0] == 0)


def test_pd_flipper_alternates_and_tracks_own_action():
    ds = run_prisoners_dilemma("cooperate-vs-flipper", 8, "full", flipper_start=0)
    flip = ds.labels == ds.label_names.index("Flipper")
    acts = ds.actions[flip, 0]
    assert acts.tolist() == [0, 1, 0, 1, 0, 1, 0, 1]
    prev_own = ds.states[flip, 1]
    assert prev_own[1:].tolist() == acts[:-1].tolist()


def test_pd_null_state():
    ds = run_prisoners_dilemma("defect-vs-cooperate", 5, "null")
    assert ds.states.shape == (10, 1) and np.all(ds.states == 0)
    with pytest.raises(InvalidConfig):
        run_prisoners_dilemma("defect-vs-cooperate", 1)
