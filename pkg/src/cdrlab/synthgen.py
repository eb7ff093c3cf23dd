"""Synthetic population, event-stream, and ground-truth generation.

Everything is a pure function of the config: random streams are derived per
(operation, entity) from the master seed, so per-subscriber generation can
be chunked or parallelized without changing a single draw, and identical
configs yield byte-identical datasets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geo import haversine_km
from .records import SECONDS_PER_DAY, CdrRecord, Dataset, TopUpRecord, Tower, day_start
from .rng import derive_rng
from .socialgraph import SocialGraph

DEFAULT_START = 1462060800  # 2016-05-01T00:00:00Z


@dataclass(frozen=True)
class SmallWorld:
    k: int
    rewire_p: float


@dataclass(frozen=True)
class Configuration:
    degree_sequence: tuple[int, ...]


@dataclass(frozen=True)
class RandomAdoption:
    p: float


@dataclass(frozen=True)
class ContagionAdoption:
    p0: float
    beta: float


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_subscribers: int
    n_towers: int
    grid: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max
    graph_model: SmallWorld | Configuration
    days: int
    daily_cycle: tuple[float, ...] = tuple([1.0] * 24)
    weekly_cycle: tuple[float, ...] = tuple([1.0] * 7)
    recharge_denominations: tuple[float, ...] = (10.0, 20.0, 50.0, 100.0, 300.0)
    event_rate: float = 3.0
    start: int = DEFAULT_START
    sms_fraction: float = 0.3
    data_rate: float = 0.0
    topup_gap_days: float = 3.0
    visit_concentration: float = 0.6
    label_low_fraction: float = 0.5
    # 0 keeps labels independent of behavior; larger values make low-label
    # subscribers call less, top up smaller amounts, and roam less.
    label_effect: float = 0.0

    def __post_init__(self):
        if self.n_subscribers < 2:
            raise ValueError("need at least two subscribers")
        if self.n_towers < 1:
            raise ValueError("need at least one tower")
        if len(self.daily_cycle) != 24 or len(self.weekly_cycle) != 7:
            raise ValueError("daily_cycle needs 24 entries, weekly_cycle 7")
        if any(r < 0 for r in self.daily_cycle) or any(r < 0 for r in self.weekly_cycle):
            raise ValueError("cycle multipliers must be >= 0")
        if sum(self.daily_cycle) == 0 or sum(self.weekly_cycle) == 0:
            raise ValueError("cycles must not be all zero")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.event_rate < 0 or self.data_rate < 0:
            raise ValueError("rates must be >= 0")
        if list(self.recharge_denominations) != sorted(set(self.recharge_denominations)):
            raise ValueError("denominations must be strictly increasing")
        if any(d <= 0 for d in self.recharge_denominations):
            raise ValueError("denominations must be positive")
        lon_min, lat_min, lon_max, lat_max = self.grid
        if not (lon_min < lon_max and lat_min < lat_max):
            raise ValueError("grid must be (lon_min, lat_min, lon_max, lat_max)")
        if not 0 < self.visit_concentration < 1:
            raise ValueError("visit_concentration must be in (0,1)")
        if not 0 <= self.label_low_fraction <= 1:
            raise ValueError("label_low_fraction must be in [0,1]")


@dataclass
class GroundTruth:
    adopters_by_day: dict[int, frozenset[str]] = field(default_factory=dict)
    shock_intervals: list[tuple] = field(default_factory=list)
    home_tower: dict[str, str] = field(default_factory=dict)
    label: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "adopters_by_day": {str(d): sorted(s) for d, s in sorted(self.adopters_by_day.items())},
            "shock_intervals": [
                {"entity": list(entity), "interval": list(interval), "multiplier": multiplier}
                for entity, interval, multiplier in self.shock_intervals
            ],
            "home_tower": dict(sorted(self.home_tower.items())),
            "label": dict(sorted(self.label.items())),
        }
        return json.dumps(payload, indent=0, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        payload = json.loads(text)
        return cls(
            adopters_by_day={int(d): frozenset(s) for d, s in payload.get("adopters_by_day", {}).items()},
            shock_intervals=[
                (tuple(item["entity"]), tuple(item["interval"]), item["multiplier"])
                for item in payload.get("shock_intervals", [])
            ],
            home_tower=dict(payload.get("home_tower", {})),
            label=dict(payload.get("label", {})),
        )


def subscriber_ids(n: int) -> list[str]:
    width = max(4, len(str(n - 1)))
    return [f"S{i:0{width}d}" for i in range(n)]


def tower_ids(n: int) -> list[str]:
    width = max(3, len(str(n - 1)))
    return [f"T{i:0{width}d}" for i in range(n)]


def towers_for(cfg: SynthConfig) -> dict[str, Tower]:
    """Tower layout for a config; same placement in every operation."""
    rng = derive_rng(cfg.seed, "towers")
    lon_min, lat_min, lon_max, lat_max = cfg.grid
    lons = rng.uniform(lon_min, lon_max, cfg.n_towers)
    lats = rng.uniform(lat_min, lat_max, cfg.n_towers)
    ids = tower_ids(cfg.n_towers)
    return {tid: Tower(tid, float(lon), float(lat)) for tid, lon, lat in zip(ids, lons, lats)}


def _erdos_gallai(seq: list[int]) -> bool:
    d = sorted(seq, reverse=True)
    n = len(d)
    if sum(d) % 2 != 0 or (d and (d[0] >= n or d[-1] < 0)):
        return False
    prefix = 0
    for k in range(1, n + 1):
        prefix += d[k - 1]
        tail = sum(min(x, k) for x in d[k:])
        if prefix > k * (k - 1) + tail:
            return False
    return True


def _small_world_edges(n: int, k: int, rewire_p: float, rng) -> set[tuple[int, int]]:
    if k % 2 != 0:
        raise ValueError("small_world k must be even")
    if k >= n:
        raise ValueError("small_world k must be smaller than n")
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        for j in range(1, k // 2 + 1):
            v = (i + j) % n
            edges.add((min(i, v), max(i, v)))
    if rewire_p <= 0:
        return edges
    # Watts-Strogatz rewiring: each lattice edge's far endpoint moves to a
    # uniform random node with probability rewire_p, skipping moves that
    # would create self-loops or duplicates.
    for i in range(n):
        for j in range(1, k // 2 + 1):
            v = (i + j) % n
            edge = (min(i, v), max(i, v))
            if rng.random() >= rewire_p or edge not in edges:
                continue
            w = int(rng.integers(0, n))
            candidate = (min(i, w), max(i, w))
            if w == i or candidate in edges:
                continue
            edges.remove(edge)
            edges.add(candidate)
    return edges


def _configuration_edges(seq: tuple[int, ...], rng, attempts: int = 1000) -> set[tuple[int, int]]:
    if not _erdos_gallai(list(seq)):
        raise ValueError("non-graphical degree sequence")
    stubs = np.repeat(np.arange(len(seq)), seq)
    for _ in range(attempts):
        perm = rng.permutation(stubs)
        pairs = perm.reshape(-1, 2)
        edges = set()
        ok = True
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                ok = False
                break
            edge = (min(a, b), max(a, b))
            if edge in edges:
                ok = False
                break
            edges.add(edge)
        if ok:
            return edges
    raise RuntimeError(f"no simple pairing found in {attempts} attempts")


def generate_population(cfg: SynthConfig) -> tuple[SocialGraph, GroundTruth]:
    """Build the social graph skeleton, home towers, and planted labels.

    Homes follow each node's ring position around an ellipse inside the
    grid, so lattice neighbors live near each other; labels follow a planted
    west-to-east gradient over home-tower longitude (west poorer).  For the
    configuration model ring positions are arbitrary, so only the label
    gradient carries spatial meaning.
    """
    subs = subscriber_ids(cfg.n_subscribers)
    rng = derive_rng(cfg.seed, "graph")
    if isinstance(cfg.graph_model, SmallWorld):
        edges = _small_world_edges(cfg.n_subscribers, cfg.graph_model.k, cfg.graph_model.rewire_p, rng)
    elif isinstance(cfg.graph_model, Configuration):
        seq = tuple(cfg.graph_model.degree_sequence)
        if len(seq) != cfg.n_subscribers:
            raise ValueError("degree sequence length must equal n_subscribers")
        edges = _configuration_edges(seq, rng)
    else:
        raise TypeError(f"unknown graph model {cfg.graph_model!r}")

    g = SocialGraph()
    for s in subs:
        g.add_node(s)
    for a, b in sorted(edges):
        g.add_edge(subs[a], subs[b], 1.0)
    g.freeze()

    towers = towers_for(cfg)
    order = sorted(towers)
    lon_min, lat_min, lon_max, lat_max = cfg.grid
    cx, cy = (lon_min + lon_max) / 2, (lat_min + lat_max) / 2
    rx, ry = 0.35 * (lon_max - lon_min), 0.35 * (lat_max - lat_min)
    homes: dict[str, str] = {}
    for i, s in enumerate(subs):
        theta = 2 * math.pi * i / cfg.n_subscribers
        lon = cx + rx * math.cos(theta)
        lat = cy + ry * math.sin(theta)
        homes[s] = min(order, key=lambda tid: (haversine_km(lon, lat, towers[tid].lon, towers[tid].lat), tid))

    label_rng = derive_rng(cfg.seed, "labels")
    u = label_rng.random(cfg.n_subscribers)
    labels: dict[str, str] = {}
    for i, s in enumerate(subs):
        t = towers[homes[s]]
        frac_east = (t.lon - lon_min) / (lon_max - lon_min)
        # Centered so the mean low fraction tracks label_low_fraction.
        p_low = min(0.95, max(0.05, cfg.label_low_fraction + 0.45 * (0.5 - frac_east) * 2))
        labels[s] = "low" if u[i] < p_low else "high"
    return g, GroundTruth(home_tower=homes, label=labels)


def _visit_cdf(cfg: SynthConfig, towers: dict[str, Tower], home: str, concentration: float) -> np.ndarray:
    order = sorted(towers)
    h = towers[home]
    dists = np.array([haversine_km(h.lon, h.lat, towers[t].lon, towers[t].lat) for t in order])
    ranks = np.argsort(np.argsort(dists, kind="stable"), kind="stable")
    weights = (1.0 - concentration) ** ranks
    cdf = np.cumsum(weights / weights.sum())
    return cdf


def generate_events(cfg: SynthConfig, graph: SocialGraph, gt: GroundTruth) -> Dataset:
    """Sample voice/sms traffic along edges plus top-ups, honoring the cycles."""
    towers = towers_for(cfg)
    tower_order = sorted(towers)
    subs = subscriber_ids(cfg.n_subscribers)
    window = (cfg.start, cfg.start + cfg.days * SECONDS_PER_DAY)

    day_weights = np.array(
        [cfg.weekly_cycle[((cfg.start // SECONDS_PER_DAY) + 3 + d) % 7] for d in range(cfg.days)],
        dtype=float,
    )  # epoch day 0 (1970-01-01) was a Thursday, weekday index 3
    day_cdf = np.cumsum(day_weights / day_weights.sum())
    hour_weights = np.asarray(cfg.daily_cycle, dtype=float)
    hour_cdf = np.cumsum(hour_weights / hour_weights.sum())

    denoms = np.asarray(cfg.recharge_denominations, dtype=float)
    retailers = [f"R{i:03d}" for i in range(max(5, cfg.n_towers // 2))]

    visit_cache: dict[tuple[str, float], np.ndarray] = {}
    cdrs: list[CdrRecord] = []
    topups: list[TopUpRecord] = []
    for s in subs:
        is_low = gt.label.get(s) == "low" and cfg.label_effect > 0
        rate_mult = 1.0 - 0.5 * cfg.label_effect if is_low else 1.0
        concentration = (
            min(0.95, cfg.visit_concentration + 0.3 * cfg.label_effect)
            if is_low
            else cfg.visit_concentration
        )
        key = (gt.home_tower[s], concentration)
        if key not in visit_cache:
            visit_cache[key] = _visit_cdf(cfg, towers, gt.home_tower[s], concentration)
        cdf = visit_cache[key]

        rng = derive_rng(cfg.seed, "events", s)
        neighbors = sorted(graph.neighbors(s)) if graph.has_node(s) else []
        n_comm = int(rng.poisson(cfg.event_rate * cfg.days * rate_mult)) if neighbors else 0
        if n_comm:
            days = np.searchsorted(day_cdf, rng.random(n_comm))
            hours = np.searchsorted(hour_cdf, rng.random(n_comm))
            secs = rng.integers(0, 3600, n_comm)
            stamps = cfg.start + days * SECONDS_PER_DAY + hours * 3600 + secs
            kinds = np.where(rng.random(n_comm) < cfg.sms_fraction, "sms", "voice")
            callees = rng.integers(0, len(neighbors), n_comm)
            tower_idx = np.searchsorted(cdf, rng.random(n_comm))
            durations = np.maximum(1, np.rint(rng.lognormal(math.log(120.0), 0.7, n_comm)))
            for j in range(n_comm):
                kind = str(kinds[j])
                cdrs.append(
                    CdrRecord(
                        caller=s,
                        callee=neighbors[int(callees[j])],
                        tower=tower_order[int(tower_idx[j])],
                        timestamp=int(stamps[j]),
                        kind=kind,
                        magnitude=float(durations[j]) if kind == "voice" else 1.0,
                    )
                )
        n_data = int(rng.poisson(cfg.data_rate * cfg.days * rate_mult)) if cfg.data_rate > 0 else 0
        if n_data:
            days = np.searchsorted(day_cdf, rng.random(n_data))
            hours = np.searchsorted(hour_cdf, rng.random(n_data))
            secs = rng.integers(0, 3600, n_data)
            stamps = cfg.start + days * SECONDS_PER_DAY + hours * 3600 + secs
            tower_idx = np.searchsorted(cdf, rng.random(n_data))
            volumes = np.rint(rng.lognormal(math.log(5e6), 1.0, n_data))
            for j in range(n_data):
                cdrs.append(
                    CdrRecord(
                        caller=s,
                        callee=None,
                        tower=tower_order[int(tower_idx[j])],
                        timestamp=int(stamps[j]),
                        kind="data",
                        magnitude=float(volumes[j]),
                    )
                )

        trng = derive_rng(cfg.seed, "topups", s)
        gap_days = float(trng.lognormal(math.log(cfg.topup_gap_days), 0.5))
        denom_base = 0.6 - (0.25 * cfg.label_effect if is_low else 0.0)
        denom_weights = denom_base ** np.arange(len(denoms))
        denom_cdf = np.cumsum(denom_weights / denom_weights.sum())
        t = float(cfg.start)
        while True:
            t += trng.exponential(gap_days) * SECONDS_PER_DAY
            if t >= window[1]:
                break
            amount = float(denoms[int(np.searchsorted(denom_cdf, trng.random()))])
            retailer = retailers[int(trng.integers(0, len(retailers)))]
            retailer_tower = tower_order[int(np.searchsorted(cdf, trng.random()))]
            topups.append(TopUpRecord(s, retailer, retailer_tower, int(t), amount))

    cdrs.sort(key=lambda r: (r.timestamp, r.caller, r.kind, r.callee or "", r.tower))
    topups.sort(key=lambda r: (r.timestamp, r.buyer, r.amount))
    return Dataset(cdrs=tuple(cdrs), topups=tuple(topups), towers=towers, window=window)


def inject_shock(
    ds: Dataset,
    gt: GroundTruth,
    entity: tuple,
    interval: tuple[int, int],
    multiplier: float,
    seed: int = 0,
    stream: str = "calls",
) -> tuple[Dataset, GroundTruth]:
    """Scale event counts inside the interval by thinning or duplication.

    entity is ("tower", id), ("towers", (ids...)) for a district, or
    ("global",).  Events outside the entity/interval are untouched.
    """
    if multiplier < 0:
        raise ValueError("multiplier must be >= 0")
    if stream not in ("calls", "recharges", "both"):
        raise ValueError(f"unknown stream {stream!r}")
    kind = entity[0]
    if kind == "tower":
        members = {entity[1]}
    elif kind == "towers":
        members = set(entity[1])
    elif kind == "global":
        members = None
    else:
        raise ValueError(f"unknown entity kind {kind!r}")

    rng = derive_rng(seed, "shock", entity, interval, multiplier, stream)
    lo, hi = interval

    def hit(tower: str | None, ts: int) -> bool:
        if not (lo <= ts < hi):
            return False
        return members is None or tower in members

    def rescale(records, tower_of):
        out = []
        for rec in records:
            if not hit(tower_of(rec), rec.timestamp):
                out.append(rec)
                continue
            copies = int(multiplier)
            if rng.random() < multiplier - copies:
                copies += 1
            out.extend([rec] * copies)
        return out

    new_cdrs = ds.cdrs
    new_topups = ds.topups
    if stream in ("calls", "both"):
        new_cdrs = rescale(ds.cdrs, lambda r: r.tower)
    if stream in ("recharges", "both"):
        new_topups = rescale(ds.topups, lambda r: r.retailer_tower)
    new_gt = replace(gt, shock_intervals=gt.shock_intervals + [(entity, tuple(interval), multiplier)])
    return ds.with_events(cdrs=new_cdrs, topups=new_topups), new_gt


def simulate_adoption(
    graph: SocialGraph,
    mechanism: RandomAdoption | ContagionAdoption,
    days: int,
    seed: int = 0,
) -> GroundTruth:
    """Daily synchronous adoption; cumulative adopter sets per day.

    random(p) is exactly contagion(p, 0): a node's daily hazard is
    p0 * (1 + beta)^(adopting neighbors), capped at 1, evaluated against the
    adopter set at the start of the day.
    """
    if isinstance(mechanism, RandomAdoption):
        p0, beta = mechanism.p, 0.0
    elif isinstance(mechanism, ContagionAdoption):
        p0, beta = mechanism.p0, mechanism.beta
    else:
        raise TypeError(f"unknown mechanism {mechanism!r}")
    if not 0 <= p0 <= 1:
        raise ValueError("adoption probability must be in [0,1]")
    if beta < 0:
        raise ValueError("uplift beta must be >= 0")
    if days < 1:
        raise ValueError("days must be >= 1")

    nodes, ui, vi, _ = graph.index_arrays()
    n = len(nodes)
    adopted = np.zeros(n, dtype=bool)
    rng = derive_rng(seed, "adoption")
    by_day: dict[int, frozenset[str]] = {}
    for day in range(days):
        if len(ui):
            k = np.bincount(ui[adopted[vi]], minlength=n) + np.bincount(vi[adopted[ui]], minlength=n)
        else:
            k = np.zeros(n, dtype=int)
        hazard = np.minimum(1.0, p0 * (1.0 + beta) ** k)
        draws = rng.random(n)
        adopted |= (~adopted) & (draws < hazard)
        by_day[day] = frozenset(nodes[i] for i in np.flatnonzero(adopted))
    return GroundTruth(adopters_by_day=by_day)
