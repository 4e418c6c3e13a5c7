"""Regenerate src/noxdwc/data/sample_obd.csv.

Two synthetic trips of smoothly varying operating points. Observed NOx is
the transit-bus power-law model with 0.3% noise, inflated by 12% whenever
engine speed exceeds 2000 rev/min so the miner has a regime to find.
Trip 0 has a 5 s logging gap.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from noxdwc.features import EngineSpec, build_feature_table
from noxdwc.models import TRANSIT_BUS, proposed_predict
from noxdwc.obd_ingest import NUMERIC_ATTRIBUTES, RecordSet, assign_segments, compute_deltas, validate_records

OUT = Path(__file__).resolve().parents[1] / "src" / "noxdwc" / "data" / "sample_obd.csv"
SEED = 20240611


def smooth(rng, n, lo, hi, rho=0.97):
    x = np.empty(n)
    x[0] = rng.uniform()
    for i in range(1, n):
        x[i] = rho * x[i - 1] + (1 - rho) * 0.5 + 0.08 * rng.normal()
    x = np.clip(x, 0, 1)
    return lo + (hi - lo) * x


def trip(rng, n, t0):
    load = smooth(rng, n, 0.05, 1.0)
    rpm = smooth(rng, n, 850, 2300)
    fuel = 2 + 38 * load * rpm / 2300
    afr = 22 + 30 * (1 - load)
    air = fuel * afr
    return {
        "timestamp": t0 + np.arange(n, dtype=float),
        "engRPM": rpm,
        "EGRkgph": smooth(rng, n, 0, 80),
        "AirInkgph": air,
        "intakeT": smooth(rng, n, 300, 335),
        "intakeP": 100e3 + 150e3 * load,
        "Fuelconskgph": fuel,
        "accelpedalpos": 100 * load,
        "ExhaustT": 450 + 300 * load,
        "WheelSpeed": smooth(rng, n, 0, 90),
        "EngTq": 100 + 800 * load,
        "InstFuelEcon": smooth(rng, n, 2, 15),
    }


def main():
    rng = np.random.default_rng(SEED)
    a = pd.DataFrame(trip(rng, 250, 0.0))
    a.loc[120:, "timestamp"] += 5.0  # logging gap
    a["trip_index"] = 0
    b = pd.DataFrame(trip(rng, 250, 1000.0))
    b["trip_index"] = 1
    df = pd.concat([a, b], ignore_index=True)
    df["SCRingps"] = 0.0

    frame = df.copy()
    frame["segment"] = assign_segments(frame["timestamp"].to_numpy(), frame["trip_index"].to_numpy())
    frame["flags"] = 0
    rs = compute_deltas(validate_records(RecordSet(frame)), [])
    es = EngineSpec()
    ft = build_feature_table(rs, es)
    assert ft.present.all(), ft.errors
    x = proposed_predict(ft.frame, TRANSIT_BUS)
    x = x * (1 + 0.003 * rng.normal(size=len(x)))
    x = np.where(df["engRPM"] > 2000, 1.12 * x, x)
    exhaust = df["AirInkgph"] + df["Fuelconskgph"]
    df["SCRingps"] = x * es.M_NOx * exhaust / (3.6 * es.M_product)

    cols = ["timestamp", "trip_index", *NUMERIC_ATTRIBUTES]
    out = df[cols].copy()
    for c in NUMERIC_ATTRIBUTES:
        out[c] = out[c].round(6)
    OUT.write_text(out.to_csv(index=False, lineterminator="\n"))
    print(f"wrote {len(out)} rows to {OUT}")


if __name__ == "__main__":
    main()
