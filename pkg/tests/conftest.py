"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cdrlab.records import CdrRecord, Dataset, TopUpRecord, Tower
from cdrlab.socialgraph import SocialGraph

T0 = 1462060800  # 2016-05-01T00:00:00Z, a Sunday
DAY = 86400


def tower(tid: str, lon: float = 90.0, lat: float = 23.0) -> Tower:
    return Tower(tid, lon, lat)


def voice(caller, callee, tower_id, ts, seconds=60.0):
    return CdrRecord(caller, callee, tower_id, ts, "voice", float(seconds))


def sms(caller, callee, tower_id, ts):
    return CdrRecord(caller, callee, tower_id, ts, "sms", 1.0)


def data(caller, tower_id, ts, volume=1.0):
    return CdrRecord(caller, None, tower_id, ts, "data", float(volume))


def topup(buyer, ts, amount, retailer="R1", retailer_tower=None):
    return TopUpRecord(buyer, retailer, retailer_tower, ts, float(amount))


def make_dataset(cdrs=(), topups=(), towers=None, window=None, labels=None) -> Dataset:
    if towers is None:
        ids = {r.tower for r in cdrs} | {
            t.retailer_tower for t in topups if t.retailer_tower
        } or {"T1"}
        towers = {tid: tower(tid, 90.0 + 0.1 * i, 23.0) for i, tid in enumerate(sorted(ids))}
    if window is None:
        stamps = [r.timestamp for r in cdrs] + [t.timestamp for t in topups]
        window = (min(stamps), max(stamps) + 1) if stamps else (T0, T0 + DAY)
    return Dataset(cdrs=tuple(cdrs), topups=tuple(topups), towers=dict(towers),
                   window=window, labels=labels)


def graph_from(edges, nodes=()) -> SocialGraph:
    g = SocialGraph()
    for n in nodes:
        g.add_node(n)
    for u, v, *w in edges:
        for x in (u, v):
            if x not in g.nodes:
                g.add_node(x)
        g.add_edge(u, v, float(w[0]) if w else 1.0)
    return g.freeze()


def random_graph(rng: np.random.Generator, n: int, p: float) -> SocialGraph:
    g = SocialGraph()
    names = [f"n{i}" for i in range(n)]
    for name in names:
        g.add_node(name)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                g.add_edge(names[i], names[j], 1.0)
    return g.freeze()


def random_connected_graph(rng: np.random.Generator, n: int, extra: float = 0.05,
                           weighted: bool = False) -> SocialGraph:
    """Random tree plus extra edges; always connected."""
    g = SocialGraph()
    names = [f"n{i}" for i in range(n)]
    for name in names:
        g.add_node(name)
    have = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        w = float(rng.uniform(0.5, 3.0)) if weighted else 1.0
        g.add_edge(names[i], names[j], w)
        have.add((j, i))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in have and rng.random() < extra:
                w = float(rng.uniform(0.5, 3.0)) if weighted else 1.0
                g.add_edge(names[i], names[j], w)
    return g.freeze()


@pytest.fixture
def tiny_ds() -> Dataset:
    """Two subscribers, two towers, a few voice/sms/topup events on day 1."""
    cdrs = [
        voice("A", "B", "T1", T0 + 600, 120),
        voice("B", "A", "T2", T0 + 1200, 60),
        sms("A", "B", "T1", T0 + 1800),
        data("A", "T1", T0 + 2400, 5.0),
    ]
    tops = [topup("A", T0 + 3000, 50.0, retailer_tower="T2")]
    return make_dataset(cdrs, tops, window=(T0, T0 + DAY))
