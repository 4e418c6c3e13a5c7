"""Exhaustive DWC enumeration used as an oracle for the Apriori miner."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations

import numpy as np

from noxdwc import dwc


def random_windows(seed: int, n_windows: int = 200, n_attrs: int = 4, L: int = 3, segments: bool = False):
    rng = np.random.default_rng(seed)
    n = n_windows + L - 1
    # few distinct bins per attribute so multi-item patterns are frequent
    bins = {f"A{j}": rng.choice(rng.choice(10, 3, replace=False), size=n, p=[0.6, 0.3, 0.1])
            for j in range(n_attrs)}
    hot = bins["A0"] == bins["A0"][0]
    div = np.where(rng.random(n) < np.where(hot, 0.5, 0.1), 20.0, 1.0) * rng.choice([-1, 1], n)
    seg = np.zeros(n, dtype=np.int64)
    if segments:
        seg[rng.integers(L, n - L):] = 1
    ts = np.arange(n, dtype=float)
    return dwc.build_windows(div, seg, ts, L, 30.0, bins)


def brute_force(windows, minsupp, epsilon, delta=0.0, edge_correction=True):
    n = len(windows)
    rows = [windows.window(i) for i in range(n)]
    div = [w.divergent for w in rows]
    n_div = sum(div)
    if n == 0 or n_div == 0:
        return []
    labels = sorted(windows.labels)
    # every pattern with an instance is a projection of some window
    candidates = set()
    for w in rows:
        for r in range(1, len(labels) + 1):
            for attrs in combinations(labels, r):
                candidates.add(tuple((a, w.sequences[a]) for a in attrs))
    near = []
    for w in rows:
        js = [j for j in range(n) if w.start_time <= rows[j].start_time <= w.start_time + delta]
        near.append((sum(div[j] for j in js), len(js)))
    out = []
    for items in candidates:
        inst = [i for i, w in enumerate(rows) if all(w.sequences[a] == s for a, s in items)]
        dcount = sum(div[i] for i in inst)
        if dcount / n < minsupp:
            continue
        total = Fraction(0)
        for i in inst:
            hits, m = near[i]
            total += Fraction(hits) * (Fraction(delta) + 1) / m if edge_correction else hits
        k = float(total * n / (len(inst) * n_div))
        if k >= epsilon:
            out.append((items, dcount / n, k))
    out.sort(key=lambda t: (-t[2], -t[1], t[0]))
    return out
