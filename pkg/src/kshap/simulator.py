"""Labeled scenario generators: a small limit-order-book market and iterated
prisoner's dilemma games.

The market runs on integer tick prices. Agents wake at continuous times; at
every wake the state snapshot is taken *before* the agent sends its order, so
each row pairs what the agent saw with what it did. History (last price and
spread) is sampled once per ``step`` seconds and kept as prefix sums, which
keeps every moving average and return O(1) per snapshot.
"""
from __future__ import annotations

import heapq
import json
import math
from bisect import bisect_left
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import MARKET_SCHEMA, PD_NULL_SCHEMA, PD_SCHEMA, Dataset
from .errors import DegenerateMarket, InsufficientHistory, InvalidConfig
from .seeding import stream

NOISE, FUNDAMENTAL, MOMENTUM, MARKET_MAKER = "Noise", "Fundamental", "Momentum", "MarketMaker"

BUY, SELL = 1, 0
NS = 1_000_000_000


# ------------------------------------------------------------------ config


@dataclass
class FundamentalParams:
    mean: float = 100.0
    kappa: float = 1.0e-3      # mean reversion per second
    sigma: float = 0.01        # volatility per sqrt(second)
    obs_noise: float = 0.02    # std of the agents' private observation noise


@dataclass
class MarketConfig:
    n_noise: int = 0
    n_fundamental: int = 110
    n_momentum: list = field(default_factory=lambda: [15])
    momentum_windows: list = field(default_factory=lambda: [(12.0, 26.0)])
    n_market_makers: int = 2
    horizon: float = 6000.0
    step: float = 1.0
    fundamental: FundamentalParams = field(default_factory=FundamentalParams)
    tick_size: float = 0.01
    max_order_size: int = 100
    seed: int = 0
    # agent behaviour knobs
    fundamental_wake: float = 60.0        # mean seconds between wakes
    fundamental_aggressive: float = 0.10  # share of far-touch orders
    momentum_wake: float = 8.0
    momentum_threshold: float = 2.0       # min |short MA - long MA| in ticks to trade
    mm_refresh: float = 60.0              # max ladder age before a forced re-quote
    mm_levels: int = 5
    mm_volume_fraction: float = 0.025   # share of trailing 1-min volume per ladder
    order_ttl: float = 120.0              # lifetime of non-market-maker resting orders

    def __post_init__(self):
        if isinstance(self.fundamental, dict):
            self.fundamental = FundamentalParams(**self.fundamental)
        if isinstance(self.n_momentum, int):
            self.n_momentum = [self.n_momentum]
        self.momentum_windows = [tuple(map(float, w)) for w in self.momentum_windows]

    def validate(self):
        counts = [self.n_noise, self.n_fundamental, self.n_market_makers, *self.n_momentum]
        if any(c < 0 for c in counts) or sum(counts) < 1:
            raise InvalidConfig("agent counts must be >= 0 with at least one agent")
        if len(self.n_momentum) != len(self.momentum_windows):
            raise InvalidConfig("n_momentum and momentum_windows must have equal length")
        for d1, d2 in self.momentum_windows:
            if not 0 < d1 < d2:
                raise InvalidConfig(f"momentum windows need 0 < d1 < d2, got ({d1}, {d2})")
        if self.horizon <= 0 or self.step <= 0 or self.tick_size <= 0:
            raise InvalidConfig("horizon, step and tick_size must be positive")
        if self.max_order_size < 1 or self.mm_levels < 1:
            raise InvalidConfig("max_order_size and mm_levels must be >= 1")
        f = self.fundamental
        if f.kappa < 0 or f.sigma < 0 or f.obs_noise < 0:
            raise InvalidConfig("fundamental kappa, sigma and obs_noise must be >= 0")
        if self.momentum_threshold < 0:
            raise InvalidConfig("momentum_threshold must be >= 0")
        for name in ("fundamental_wake", "momentum_wake", "mm_refresh", "order_ttl"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if not 0 <= self.fundamental_aggressive <= 1:
            raise InvalidConfig("fundamental_aggressive must be in [0, 1]")
        return self

    def to_json(self):
        d = asdict(self)
        d["momentum_windows"] = [list(w) for w in self.momentum_windows]
        return d

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"unknown market config keys: {sorted(unknown)}")
        if isinstance(obj.get("fundamental"), dict):
            fknown = {f.name for f in fields(FundamentalParams)}
            bad = set(obj["fundamental"]) - fknown
            if bad:
                raise InvalidConfig(f"unknown fundamental keys: {sorted(bad)}")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def strategy_names(self):
        names = []
        if self.n_market_makers:
            names.append(MARKET_MAKER)
        if self.n_fundamental:
            names.append(FUNDAMENTAL)
        for n, (d1, d2) in zip(self.n_momentum, self.momentum_windows):
            if n:
                names.append(f"{MOMENTUM}({d1:g},{d2:g})")
        if self.n_noise:
            names.append(NOISE)
        return names


def pi3_config(seed=0, horizon=6000.0, **overrides):
    """Market making, (12,26) momentum and fundamental agents (127 agents)."""
    cfg = MarketConfig(n_noise=0, n_fundamental=110, n_momentum=[15],
                       momentum_windows=[(12.0, 26.0)], n_market_makers=2,
                       horizon=horizon, seed=seed)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


# ------------------------------------------------------------ fundamental


def fundamental_process(mean, kappa, sigma, step, horizon, seed, x0=None):
    """Euler-discretized Ornstein-Uhlenbeck path of length ``ceil(horizon/step)+1``."""
    n = int(math.ceil(horizon / step)) + 1
    rng = stream(seed, "fundamental") if not isinstance(seed, np.random.Generator) else seed
    xi = rng.standard_normal(n - 1)
    path = np.empty(n)
    path[0] = mean if x0 is None else x0
    a = kappa * step
    b = sigma * math.sqrt(step)
    for t in range(n - 1):
        path[t + 1] = path[t] + a * (mean - path[t]) + b * xi[t]
    return path


# ------------------------------------------------------------------- book

_MA_SECONDS = (12, 26, 60, 300, 720, 1560, 2880, 5760)
_SPREAD_MA_SECONDS = _MA_SECONDS[:6]
_EXEC_SECONDS = (60, 300, 720, 1560)
_DIFF_PAIRS = ((0, 1), (4, 5), (6, 7))  # indices into _MA_SECONDS


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class BookState:
    """Price-time priority book plus the per-step history features are built from.

    Prices are integer ticks. Resting orders are ``[order_id, owner, qty]``
    entries in per-price FIFO queues.
    """

    def __init__(self, tick_size=0.01, step=1.0, levels=5):
        self.tick_size = tick_size
        self.step = step
        self.levels = levels
        self.bids = {}
        self.asks = {}
        self.orders = {}          # order_id -> (side, price, entry)
        self.last_price = None    # ticks
        self.last_spread = None   # ticks
        # tape: trade times (s) and cumulative buy/sell-initiated volume
        self.trade_times = []
        self.cum_buy = [0.0]
        self.cum_sell = [0.0]
        # per-step samples as prefix sums
        self.n_samples = 0
        self.price_cum = [0.0]
        self.spread_cum = [0.0]
        self.price_at = []
        self._next_id = 0

    # ---- book queries
    def best_bid(self):
        return max(self.bids) if self.bids else None

    def best_ask(self):
        return min(self.asks) if self.asks else None

    def spread(self):
        b, a = self.best_bid(), self.best_ask()
        if b is None or a is None:
            return self.last_spread if self.last_spread is not None else 1
        return a - b

    def mid(self):
        b, a = self.best_bid(), self.best_ask()
        if b is not None and a is not None:
            return 0.5 * (a + b)
        if b is not None:
            return b + 0.5
        if a is not None:
            return a - 0.5
        return float(self.last_price)

    def near_touch(self, side):
        """Best price on ``side``; falls back to one tick off the opposite side."""
        if side == BUY:
            b = self.best_bid()
            if b is not None:
                return b
            a = self.best_ask()
            return (a if a is not None else self.last_price + 1) - 1
        a = self.best_ask()
        if a is not None:
            return a
        b = self.best_bid()
        return (b if b is not None else self.last_price - 1) + 1

    def far_touch(self, side):
        if side == BUY:
            a = self.best_ask()
            return a if a is not None else self.near_touch(BUY) + self.spread()
        b = self.best_bid()
        return b if b is not None else self.near_touch(SELL) - self.spread()

    def depth_volumes(self, side, n):
        book = self.bids if side == BUY else self.asks
        prices = sorted(book, reverse=(side == BUY))[:n]
        return sum(sum(e[2] for e in book[p]) for p in prices)

    def check(self):
        b, a = self.best_bid(), self.best_ask()
        assert b is None or a is None or b < a, "crossed book"
        for book in (self.bids, self.asks):
            for q in book.values():
                assert q and all(e[2] > 0 for e in q)

    # ---- order flow
    def record_trade(self, time, price, qty, aggressor):
        self.trade_times.append(time)
        self.cum_buy.append(self.cum_buy[-1] + (qty if aggressor == BUY else 0.0))
        self.cum_sell.append(self.cum_sell[-1] + (qty if aggressor == SELL else 0.0))
        self.last_price = price

    def submit(self, time, owner, side, price, qty):
        """Match a limit order, rest the remainder; returns (order_id or None, fills)."""
        fills = []
        opp = self.asks if side == BUY else self.bids
        while qty > 0 and opp:
            best = min(opp) if side == BUY else max(opp)
            if (side == BUY and best > price) or (side == SELL and best < price):
                break
            queue = opp[best]
            while qty > 0 and queue:
                entry = queue[0]
                take = min(qty, entry[2])
                entry[2] -= take
                qty -= take
                self.record_trade(time, best, take, side)
                fills.append((entry[1], best, take))
                if entry[2] == 0:
                    queue.popleft()
                    del self.orders[entry[0]]
            if not queue:
                del opp[best]
        if qty == 0:
            return None, fills
        oid = self._next_id
        self._next_id += 1
        entry = [oid, owner, qty]
        book = self.bids if side == BUY else self.asks
        book.setdefault(price, deque()).append(entry)
        self.orders[oid] = (side, price, entry)
        return oid, fills

    def cancel(self, oid):
        rec = self.orders.pop(oid, None)
        if rec is None:
            return False
        side, price, entry = rec
        book = self.bids if side == BUY else self.asks
        queue = book[price]
        queue.remove(entry)
        if not queue:
            del book[price]
        return True

    # ---- history
    def sample(self):
        """Append one per-step sample of last price and spread."""
        if self.last_price is None:
            raise InsufficientHistory("no reference price to sample")
        s = self.spread()
        b, a = self.best_bid(), self.best_ask()
        if b is not None and a is not None:
            self.last_spread = s
        self.price_cum.append(self.price_cum[-1] + self.last_price)
        self.spread_cum.append(self.spread_cum[-1] + s)
        self.price_at.append(self.last_price)
        self.n_samples += 1

    def _window_mean(self, cum, seconds):
        n = max(1, min(self.n_samples, int(round(seconds / self.step))))
        return (cum[self.n_samples] - cum[self.n_samples - n]) / n

    def _exec_imbalance(self, now, seconds):
        lo = bisect_left(self.trade_times, now - seconds)
        hi = len(self.trade_times)
        buy = self.cum_buy[hi] - self.cum_buy[lo]
        sell = self.cum_sell[hi] - self.cum_sell[lo]
        total = buy + sell
        return 0.5 if total <= 0 else buy / total


def compute_features(book, now):
    """The 29-entry market state at time ``now`` (seconds since open).

    Prices are reported in currency units, spreads in ticks. Windows longer
    than the available history use all of it.
    """
    if book.last_price is None:
        raise InsufficientHistory("no executed trade or opening price yet")
    if book.n_samples == 0:
        book.sample()
    tick = book.tick_size
    out = [float(book.spread())]
    for n in (1, 2, 5):
        bv = book.depth_volumes(BUY, n)
        av = book.depth_volumes(SELL, n)
        out.append(0.5 if bv + av == 0 else bv / (bv + av))
    for w in _EXEC_SECONDS:
        out.append(book._exec_imbalance(now, w))
    p_now = book.last_price
    for w in _EXEC_SECONDS:
        back = int(round(w / book.step))
        j = max(0, book.n_samples - 1 - back)
        out.append(p_now / book.price_at[j] - 1.0)
    mas = [book._window_mean(book.price_cum, w) for w in _MA_SECONDS]
    out.extend(m * tick for m in mas)
    out.extend(book._window_mean(book.spread_cum, w) for w in _SPREAD_MA_SECONDS)
    for i, j in _DIFF_PAIRS:
        out.append(_sigmoid(mas[i] - mas[j]))   # MAs are in ticks already
    return np.array(out)


# ------------------------------------------------------------------ market


@dataclass
class AgentState:
    strategy: str
    label: int
    rng: np.random.Generator
    windows: tuple = ()
    scratch: dict = field(default_factory=dict)


def _build_agents(cfg, label_of):
    agents = []

    def add(strategy, label, **kw):
        aid = len(agents)
        agents.append(AgentState(strategy, label, stream(cfg.seed, "agent", aid), **kw))

    for _ in range(cfg.n_market_makers):
        add(MARKET_MAKER, label_of[MARKET_MAKER])
    for _ in range(cfg.n_fundamental):
        add(FUNDAMENTAL, label_of[FUNDAMENTAL])
    for n, (d1, d2) in zip(cfg.n_momentum, cfg.momentum_windows):
        for _ in range(n):
            add(MOMENTUM, label_of[f"{MOMENTUM}({d1:g},{d2:g})"], windows=(d1, d2))
    for _ in range(cfg.n_noise):
        add(NOISE, label_of[NOISE])
    return agents


def run_market(config, check=False):
    """Simulate one trading session and return its labeled observations.

    ``check=True`` asserts book sanity after every event.
    """
    cfg = config.validate()
    names = cfg.strategy_names()
    label_of = {n: i for i, n in enumerate(names)}
    agents = _build_agents(cfg, label_of)
    tick = cfg.tick_size
    fpath = fundamental_process(cfg.fundamental.mean, cfg.fundamental.kappa, cfg.fundamental.sigma,
                                cfg.step, cfg.horizon, cfg.seed)
    book = BookState(tick, cfg.step)
    book.last_price = int(round(fpath[0] / tick))
    book.last_spread = 1
    maxq = cfg.max_order_size

    # wake schedule: (time, seq, agent)
    heap = []
    seq = 0

    def schedule(t, aid):
        nonlocal seq
        if t < cfg.horizon:
            heapq.heappush(heap, (t, seq, aid))
            seq += 1

    for aid, ag in enumerate(agents):
        r = ag.rng
        if ag.strategy == MARKET_MAKER:
            schedule(r.uniform(0, cfg.step), aid)
        elif ag.strategy == FUNDAMENTAL:
            schedule(r.uniform(0, cfg.fundamental_wake), aid)
        elif ag.strategy == MOMENTUM:
            schedule(r.uniform(0, cfg.momentum_wake), aid)
        else:
            schedule(r.uniform(0, cfg.horizon), aid)

    expiry = deque()   # (expire_time, order_id) in submission order; TTL is constant
    rows_s, rows_a, rows_l, rows_id, rows_t = [], [], [], [], []
    n_ticks = int(math.ceil(cfg.horizon / cfg.step))

    def emit(now, aid, side, price, qty, state=None, near=None):
        if near is None:
            near = book.near_touch(side)
        depth = (near - price) if side == BUY else (price - near)
        rows_s.append(compute_features(book, now) if state is None else state)
        rows_a.append((float(qty), float(depth), float(side)))
        rows_l.append(agents[aid].label)
        rows_id.append(aid)
        rows_t.append(int(round(now * NS)))
        return book.submit(now, aid, side, price, qty)

    def advance(now):
        # sample every completed step boundary up to ``now``
        while book.n_samples <= min(n_ticks, int(now / cfg.step)):
            book.sample()
        while expiry and expiry[0][0] <= now:
            book.cancel(expiry.popleft()[1])

    while heap:
        now, _, aid = heapq.heappop(heap)
        advance(now)
        ag = agents[aid]
        r = ag.rng
        if ag.strategy == MARKET_MAKER:
            # checked every step; re-quote when the mid moved or the ladder is stale
            sc = ag.scratch
            stale = now - sc.get("quoted_at", -math.inf) >= cfg.mm_refresh
            if stale or book.mid() != sc.get("mid"):
                # the ladder is one batch: every order in it sees the same snapshot,
                # taken at the wake that triggered the re-quote
                state = compute_features(book, now)
                for oid in sc.get("live", ()):
                    book.cancel(oid)
                vol = book.cum_buy[-1] + book.cum_sell[-1]
                lo = bisect_left(book.trade_times, now - 60.0)
                vol -= book.cum_buy[lo] + book.cum_sell[lo]
                size = int(min(maxq, max(1, math.floor(cfg.mm_volume_fraction * vol / cfg.mm_levels))))
                near = {BUY: book.near_touch(BUY), SELL: book.near_touch(SELL)}
                mid = book.mid()
                bid1 = math.ceil(mid) - 1
                ask1 = math.floor(mid) + 1
                live = []
                for lvl in range(cfg.mm_levels):
                    for side, price in ((BUY, bid1 - lvl), (SELL, ask1 + lvl)):
                        oid, _ = emit(now, aid, side, price, size, state, near[side])
                        if oid is not None:
                            live.append(oid)
                sc["live"] = live
                sc["quoted_at"] = now
                sc["mid"] = book.mid()
            schedule(now + cfg.step, aid)
        elif ag.strategy == FUNDAMENTAL:
            for oid in ag.scratch.get("live", ()):
                book.cancel(oid)
            value = fpath[min(len(fpath) - 1, int(now / cfg.step))]
            obs = value + r.normal(0.0, cfg.fundamental.obs_noise)
            side = BUY if obs / tick > book.mid() else SELL
            qty = int(r.integers(1, maxq + 1))
            aggressive = r.random() < cfg.fundamental_aggressive
            price = book.far_touch(side) if aggressive else book.near_touch(side)
            oid, _ = emit(now, aid, side, price, qty)
            ag.scratch["live"] = [] if oid is None else [oid]
            if oid is not None:
                expiry.append((now + cfg.order_ttl, oid))
            schedule(now + cfg.fundamental_wake * r.uniform(0.5, 1.5), aid)
        elif ag.strategy == MOMENTUM:
            d1, d2 = ag.windows
            if book.n_samples * cfg.step >= d2 * 60.0:
                short = book._window_mean(book.price_cum, d1 * 60.0)
                long_ = book._window_mean(book.price_cum, d2 * 60.0)
                if abs(short - long_) >= cfg.momentum_threshold:
                    side = BUY if short >= long_ else SELL
                    qty = int(r.integers(1, maxq + 1))
                    oid, _ = emit(now, aid, side, book.near_touch(side), qty)
                    if oid is not None:
                        expiry.append((now + cfg.order_ttl, oid))
            schedule(now + cfg.momentum_wake * r.uniform(0.5, 1.5), aid)
        else:
            side = BUY if r.random() < 0.5 else SELL
            qty = int(r.integers(1, maxq + 1))
            oid, _ = emit(now, aid, side, book.near_touch(side), qty)
            if oid is not None:
                expiry.append((now + cfg.order_ttl, oid))
        if check:
            book.check()

    if not rows_s:
        raise DegenerateMarket("no agent placed an order; check agent counts and horizon")
    # strategies that never placed an order (e.g. momentum agents on a horizon
    # shorter than their long window) are dropped from the label set
    labels = np.array(rows_l)
    present = np.unique(labels)
    remap = np.full(len(names), -1)
    remap[present] = np.arange(len(present))
    return Dataset(np.array(rows_s), np.array(rows_a), MARKET_SCHEMA, remap[labels],
                   np.array(rows_id), np.array(rows_t),
                   tuple(names[i] for i in present)).validate()


# ----------------------------------------------------- prisoner's dilemma

COOPERATE, DEFECT = 0, 1
PD_SCENARIOS = ("defect-vs-cooperate", "cooperate-vs-flipper")


def run_prisoners_dilemma(scenario, rounds, state_mode="full", seed=0, flipper_start=COOPERATE):
    """Iterated game between two fixed strategies; 2 rows per round.

    State is (timestep, previous opponent action) for the first scenario and
    (timestep, previous own action) for the flipper scenario, or a single
    constant zero when ``state_mode == "null"``. The history is
    primed with one unrecorded opening round so every recorded state is
    defined; the flipper's opening move is the opposite of ``flipper_start``.
    Both strategies are deterministic; ``seed`` is accepted for a uniform
    generator interface and does not affect the output.
    """
    if rounds < 2:
        raise InvalidConfig("rounds must be >= 2")
    if scenario not in PD_SCENARIOS:
        raise InvalidConfig(f"unknown scenario {scenario!r}; choose from {PD_SCENARIOS}")
    if state_mode not in ("null", "full"):
        raise InvalidConfig("state_mode must be 'null' or 'full'")

    if scenario == "defect-vs-cooperate":
        names = ("AlwaysDefect", "AlwaysCooperate")
        prev = [DEFECT, COOPERATE]
    else:
        names = ("AlwaysCooperate", "Flipper")
        prev = [COOPERATE, 1 - flipper_start]
    states, actions, labels, ids, times = [], [], [], [], []
    for t in range(rounds):
        if scenario == "defect-vs-cooperate":
            move = [DEFECT, COOPERATE]
            feat = [prev[1], prev[0]]          # previous opponent action
        else:
            move = [COOPERATE, 1 - prev[1]]
            feat = [prev[0], prev[1]]          # previous own action
        for p in (0, 1):
            states.append([0.0] if state_mode == "null" else [float(t), float(feat[p])])
            actions.append([float(move[p])])
            labels.append(p)
            ids.append(p)
            times.append(t * NS)
        prev = move
    schema = PD_NULL_SCHEMA if state_mode == "null" else PD_SCHEMA
    return Dataset(np.array(states), np.array(actions), schema, np.array(labels), np.array(ids),
                   np.array(times), names).validate()
