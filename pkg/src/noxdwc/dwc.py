"""Divergent Window Co-occurrence (DWC) pattern mining.

Records are discretized into equal-width bins per attribute, grouped into
sliding windows of ``L`` consecutive 1 Hz records, and each window is flagged
divergent when its summed absolute prediction error exceeds a threshold. An
item is an (attribute, bin-sequence) pair; a pattern is a set of items on
distinct attributes. Patterns are enumerated Apriori-style on support and
kept when their temporal cross-K statistic reaches ``epsilon``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .obd_ingest import PARAMETER_SETS, RecordFlag, RecordSet

logger = logging.getLogger(__name__)

N_BINS = 10
SYMBOLS = {
    "engRPM": "N", "EGRkgph": "E", "AirInkgph": "A", "intakeT": "T", "intakeP": "P",
    "Fuelconskgph": "F", "accelpedalpos": "a", "ExhaustT": "X", "WheelSpeed": "w",
    "EngTq": "L", "InstFuelEcon": "I",
}


def symbol(column: str) -> str:
    if column.endswith("delta"):
        return "d" + SYMBOLS.get(column[: -len("delta")], column[0])
    return SYMBOLS.get(column, column[0])


@dataclass(frozen=True)
class BinMap:
    columns: tuple[str, ...]
    labels: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    n_bins: int = N_BINS

    def bin(self, column: str, values) -> np.ndarray:
        """Bin index per value; -1 for absent values."""
        j = self.columns.index(column)
        lo, hi = self.mins[j], self.maxs[j]
        v = np.asarray(values, dtype=float)
        with np.errstate(invalid="ignore"):
            idx = np.floor(self.n_bins * (v - lo) / (hi - lo))
        idx = np.clip(np.nan_to_num(idx, nan=-1.0), -1, self.n_bins - 1)
        idx = np.where(np.isfinite(v), np.maximum(idx, 0), -1)
        return idx.astype(np.int64)

    def to_dict(self) -> dict:
        return {
            lab: {"column": c, "min": lo, "max": hi, "n_bins": self.n_bins}
            for c, lab, lo, hi in zip(self.columns, self.labels, self.mins, self.maxs)
        }


def build_bin_map(data, attrs: Mapping[str, str] | Sequence[str], n_bins: int = N_BINS) -> BinMap:
    """Equal-width bins spanning each attribute's observed range.

    `data` is a RecordSet or DataFrame; `attrs` is a list of columns or a
    label -> column mapping.

    Raises:
        DataError: an attribute has fewer than two distinct finite values.
    """
    frame = data.frame if isinstance(data, RecordSet) else data
    pairs = list(attrs.items()) if isinstance(attrs, Mapping) else [(a, a) for a in attrs]
    mins, maxs = [], []
    for label, col in pairs:
        if col not in frame.columns:
            raise DataError(f"attribute {label!r} (column {col!r}) not present")
        v = frame[col].to_numpy(dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0 or v.min() == v.max():
            raise DataError(f"attribute {label!r} is constant or absent; cannot discretize")
        mins.append(float(v.min()))
        maxs.append(float(v.max()))
    return BinMap(
        tuple(c for _, c in pairs), tuple(lab for lab, _ in pairs), tuple(mins), tuple(maxs), n_bins
    )


@dataclass(frozen=True)
class Window:
    start: int
    length: int
    start_time: float
    divergence_sum: float
    signed_sum: float
    divergent: bool
    sequences: dict


@dataclass(frozen=True)
class WindowSet:
    """Columnar store of all valid windows, in record order."""

    starts: np.ndarray  # record index of each window's first record
    start_times: np.ndarray
    length: int
    abs_sums: np.ndarray  # sum of |divergence| over the window, ppm
    signed_sums: np.ndarray  # sum of signed divergence, ppm
    divergent: np.ndarray
    sequences: dict[str, np.ndarray]  # label -> (n_windows, L) bin indices
    threshold: float = 30.0
    n_bins: int = N_BINS

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.sequences)

    @property
    def n_divergent(self) -> int:
        return int(np.count_nonzero(self.divergent))

    def window(self, i: int) -> Window:
        return Window(
            int(self.starts[i]), self.length, float(self.start_times[i]), float(self.abs_sums[i]),
            float(self.signed_sums[i]), bool(self.divergent[i]),
            {lab: tuple(int(b) for b in seq[i]) for lab, seq in self.sequences.items()},
        )

    def codes(self, label: str) -> np.ndarray:
        """Integer encoding of each window's bin sequence for `label`."""
        seq = self.sequences[label]
        weights = self.n_bins ** np.arange(self.length - 1, -1, -1, dtype=np.int64)
        return seq @ weights

    def decode(self, code: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.length):
            out.append(int(code % self.n_bins))
            code //= self.n_bins
        return tuple(reversed(out))

    def contains(self, items) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        for label, seq in items:
            mask &= np.all(self.sequences[label] == np.asarray(seq), axis=1)
        return mask


def build_windows(
    divergence,
    segments,
    timestamps,
    L: int = 3,
    threshold: float = 30.0,
    bins: Mapping[str, np.ndarray] | None = None,
    mode: str = "sum",
    n_bins: int = N_BINS,
) -> WindowSet:
    """Slide an L-record window (stride 1) over each contiguous segment.

    A window exists where all L records share a segment, have a divergence
    value, and have a bin for every attribute in `bins`. ``mode="sum"`` flags
    it divergent when the summed absolute divergence exceeds `threshold`;
    ``mode="every"`` requires each record's absolute divergence to exceed
    ``threshold / L``.
    """
    if L < 1:
        raise ValueError(f"window length must be >= 1, got {L}")
    if mode not in ("sum", "every"):
        raise ValueError(f"unknown divergence mode {mode!r}")
    div = np.asarray(divergence, dtype=float)
    seg = np.asarray(segments)
    ts = np.asarray(timestamps, dtype=float)
    bins = dict(bins or {})
    n = len(div)

    valid = np.isfinite(div)
    for b in bins.values():
        valid &= np.asarray(b) >= 0
    if n < L:
        starts = np.zeros(0, dtype=np.int64)
    else:
        csum = np.r_[0, np.cumsum(valid.astype(np.int64))]
        full = (csum[L:] - csum[:-L]) == L
        same_seg = seg[L - 1:] == seg[: n - L + 1]
        starts = np.flatnonzero(full & same_seg)

    offsets = starts[:, None] + np.arange(L)[None, :]
    d = np.where(valid, div, 0.0)[offsets] if len(starts) else np.zeros((0, L))
    abs_sums = np.abs(d).sum(axis=1)
    signed = d.sum(axis=1)
    if mode == "sum":
        divergent = abs_sums > threshold
    else:
        divergent = np.all(np.abs(d) > threshold / L, axis=1)
    seqs = {lab: np.asarray(b, dtype=np.int64)[offsets].reshape(len(starts), L) for lab, b in bins.items()}
    return WindowSet(starts, ts[starts], L, abs_sums, signed, divergent, seqs, threshold, n_bins)


Item = tuple[str, tuple[int, ...]]


@dataclass(frozen=True)
class DwcPattern:
    items: tuple[Item, ...]  # sorted by label
    instances: np.ndarray  # indices of all windows containing the pattern
    divergent_count: int
    support: float
    cross_k: float
    over: int = 0
    under: int = 0
    zero: int = 0
    bias: str = "mixed"
    exclusive_rank: int | None = None

    @property
    def count(self) -> int:
        return len(self.instances)

    def sort_key(self):
        return (-self.cross_k, -self.support, self.items)


def support(items: Sequence[Item], windows: WindowSet) -> float:
    """Divergent windows containing every item, over all windows."""
    if not items:
        raise ValueError("pattern has no items")
    if len(windows) == 0:
        raise ValueError("no windows")
    hits = windows.contains(items) & windows.divergent
    return int(np.count_nonzero(hits)) / len(windows)


def cross_k(instances, windows: WindowSet, delta: float = 0.0, edge_correction: bool = True) -> float:
    """Temporal cross-K between pattern instances and divergent windows.

    For each instance starting at t, counts divergent windows starting in
    [t, t + delta]; the mean count is divided by the divergent-window rate.
    Under random labelling the value is ``delta + 1``. With
    `edge_correction`, each count is scaled by ``(delta + 1) / m`` where m is
    the number of window starts available in [t, t + delta], which removes
    the deficit at series and segment ends.

    The result is computed as an exact rational and rounded once.
    """
    inst = np.asarray(instances, dtype=np.int64)
    if inst.size == 0:
        raise ValueError("pattern has no instances")
    n_div = windows.n_divergent
    if n_div == 0:
        raise ValueError("no divergent windows")
    order = np.argsort(windows.start_times, kind="stable")
    times = windows.start_times[order]
    cum = np.r_[0, np.cumsum(windows.divergent[order].astype(np.int64))]
    t = windows.start_times[inst]
    lo = np.searchsorted(times, t, side="left")
    hi = np.searchsorted(times, t + delta, side="right")
    counts = cum[hi] - cum[lo]
    if edge_correction:
        avail = hi - lo
        total = Fraction(0)
        for m in np.unique(avail):
            total += Fraction(int(counts[avail == m].sum()), int(m))
        total *= Fraction(delta) + 1
    else:
        total = Fraction(int(counts.sum()))
    k = total * len(windows) / (len(inst) * n_div)
    return float(k)


def classify_bias(instances, windows: WindowSet) -> dict:
    """Tally instance windows by the sign of their summed divergence."""
    s = windows.signed_sums[np.asarray(instances, dtype=np.int64)]
    over, under = int(np.count_nonzero(s > 0)), int(np.count_nonzero(s < 0))
    n = len(s)
    if over * 2 > n:
        label = "over-predicted"
    elif under * 2 > n:
        label = "under-predicted"
    else:
        label = "mixed"
    return {"over": over, "under": under, "zero": n - over - under, "bias": label}


def _join(level: Mapping[tuple, np.ndarray]) -> list:
    """Apriori candidate generation: join itemsets sharing all but the last item."""
    by_prefix = defaultdict(list)
    for k in sorted(level):
        by_prefix[k[:-1]].append(k)
    out = []
    for group in by_prefix.values():
        for i, k1 in enumerate(group):
            for k2 in group[i + 1:]:
                if k1[-1][0] == k2[-1][0]:
                    continue  # one bin sequence per attribute per window
                cand = k1 + (k2[-1],)
                if all(cand[:j] + cand[j + 1:] in level for j in range(len(cand) - 2)):
                    out.append((cand, (k1, k2)))
    return out


def _candidate_items(windows: WindowSet, constant_only: bool):
    """Item -> all-window membership code per label, harvested from divergent windows."""
    items = []
    for label in windows.labels:
        codes = windows.codes(label)
        div_codes = np.unique(codes[windows.divergent])
        for code in div_codes.tolist():
            seq = windows.decode(code)
            if constant_only and len(set(seq)) > 1:
                continue
            items.append((label, seq, code))
    return items


def mine_patterns(
    windows: WindowSet,
    minsupp: float = 0.01,
    epsilon: float = 2.5,
    delta: float = 0.0,
    max_size: int | None = None,
    constant_only: bool = False,
    edge_correction: bool = True,
    n_jobs: int = 1,
) -> list[DwcPattern]:
    """Enumerate every pattern with support >= `minsupp` and cross-K >= `epsilon`.

    Output order: cross-K descending, support descending, then items.
    `n_jobs` > 1 evaluates each level's candidates on a thread pool; levels
    are barriers, so the result does not depend on it.
    """
    if not 0 < minsupp <= 1:
        raise ValueError(f"minsupp must lie in (0, 1], got {minsupp}")
    n = len(windows)
    if n == 0 or windows.n_divergent == 0:
        return []
    max_size = max_size or len(windows.labels)
    div = windows.divergent

    # level 1
    level: dict[tuple[Item, ...], np.ndarray] = {}
    code_cache = {lab: windows.codes(lab) for lab in windows.labels}
    for label, seq, code in _candidate_items(windows, constant_only):
        mask = code_cache[label] == code
        if np.count_nonzero(mask & div) / n >= minsupp:
            level[((label, seq),)] = mask
    frequent = dict(level)

    size = 1
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        while level and size < max_size:
            size += 1
            cands = _join(level)

            def evaluate(pair):
                cand, (k1, k2) = pair
                mask = level[k1] & level[k2]
                return cand, mask, np.count_nonzero(mask & div) / n >= minsupp

            results = pool.map(evaluate, cands) if pool else map(evaluate, cands)
            level = {cand: mask for cand, mask, ok in results if ok}
            frequent.update(level)
    finally:
        if pool:
            pool.shutdown()

    patterns = []
    for items, mask in frequent.items():
        inst = np.flatnonzero(mask)
        dcount = int(np.count_nonzero(mask & div))
        k = cross_k(inst, windows, delta, edge_correction)
        if k >= epsilon:
            bias = classify_bias(inst, windows)
            patterns.append(DwcPattern(items, inst, dcount, dcount / n, k, **bias))
    patterns.sort(key=DwcPattern.sort_key)
    return _mark_exclusive(patterns, windows)


def _mark_exclusive(patterns: list[DwcPattern], windows: WindowSet) -> list[DwcPattern]:
    """Greedily rank patterns whose divergent windows do not overlap any higher-ranked pick."""
    taken = np.zeros(len(windows), dtype=bool)
    out, rank = [], 0
    for p in patterns:
        dmask = np.zeros(len(windows), dtype=bool)
        dmask[p.instances] = True
        dmask &= windows.divergent
        if not np.any(dmask & taken):
            rank += 1
            taken |= dmask
            p = replace(p, exclusive_rank=rank)
        out.append(p)
    return out


def notation(label: str, column: str, seq: tuple[int, ...]) -> str:
    sym = symbol(column)
    return " ".join(f"{sym}_{b}" for b in seq)


@dataclass
class MiningResult:
    set_id: int
    bin_map: BinMap
    windows: WindowSet
    patterns: list[DwcPattern]
    params: dict = field(default_factory=dict)

    def report(self) -> dict:
        col_of = dict(zip(self.bin_map.labels, self.bin_map.columns))
        rows = []
        for rank, p in enumerate(self.patterns, 1):
            items = [
                {"attribute": lab, "bins": list(seq), "notation": notation(lab, col_of[lab], seq)}
                for lab, seq in p.items
            ]
            rows.append({
                "rank": rank,
                "items": items,
                "co_occurrence": "; ".join(f"{it['attribute']}: {it['notation']}" for it in items),
                "cross_k": p.cross_k,
                "count": p.count,
                "divergent_count": p.divergent_count,
                "support": p.support,
                "over": p.over,
                "under": p.under,
                "zero": p.zero,
                "bias": p.bias,
                "exclusive_rank": p.exclusive_rank,
            })
        return {
            "parameter_set": self.set_id,
            "attributes": list(self.bin_map.labels),
            "parameters": self.params,
            "n_windows": len(self.windows),
            "n_divergent_windows": self.windows.n_divergent,
            "bin_map": self.bin_map.to_dict(),
            "patterns": rows,
        }


def mine(
    rs: RecordSet,
    divergence,
    set_id: int = 1,
    L: int = 3,
    threshold: float = 30.0,
    minsupp: float = 0.01,
    epsilon: float = 2.5,
    delta: float = 0.0,
    mode: str = "sum",
    constant_only: bool = False,
    edge_correction: bool = True,
    max_size: int | None = None,
    n_jobs: int = 1,
) -> MiningResult:
    """Discretize parameter set `set_id`, build windows and mine patterns."""
    if set_id not in PARAMETER_SETS:
        raise ValueError(f"parameter set must be one of {sorted(PARAMETER_SETS)}")
    attrs = PARAMETER_SETS[set_id]
    frame = rs.frame
    mining_ok = rs.has(RecordFlag.VALID_MINING)
    bin_map = build_bin_map(frame.loc[mining_ok], attrs)
    bins = {}
    for label, col in attrs.items():
        b = bin_map.bin(col, frame[col].to_numpy(dtype=float))
        bins[label] = np.where(mining_ok, b, -1)
    windows = build_windows(divergence, frame["segment"].to_numpy(), frame["timestamp"].to_numpy(),
                            L, threshold, bins, mode)
    patterns = mine_patterns(windows, minsupp, epsilon, delta, max_size, constant_only, edge_correction, n_jobs)
    params = {
        "L": L, "summation_threshold_ppm": threshold, "minsupp": minsupp, "epsilon": epsilon,
        "delta_s": delta, "divergence_mode": mode, "constant_only": constant_only,
        "edge_correction": edge_correction, "max_itemset_size": max_size or len(attrs),
    }
    logger.info("set %d: %d windows, %d divergent, %d patterns", set_id, len(windows),
                windows.n_divergent, len(patterns))
    return MiningResult(set_id, bin_map, windows, patterns, params)
