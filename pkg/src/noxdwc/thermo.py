"""Gas properties and the adiabatic flame temperature of lean diesel products.

Heat capacities come from piecewise NASA-7 polynomial fits stored in
``data/cp_nasa7.dat``. Enthalpy differences use the analytic antiderivative
of the same polynomials, so :func:`enthalpy_integral` and :func:`cp_molar`
are exactly consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import PropertyRangeError, RichMixtureError, SaturationError

T_MIN = 300.0
T_MAX = 3500.0
SPECIES = ("CO2", "H2O", "N2", "O2")
O2_IN_AIR = 0.21

# Bisection stops once the bracket is this narrow (K); one Newton step follows.
_BISECT_WIDTH = 1e-3
# Fixed count that narrows the widest possible bracket below _BISECT_WIDTH, so
# every element runs the same iterations regardless of batch composition.
_BISECT_ITER = math.ceil(math.log2((T_MAX - T_MIN) / _BISECT_WIDTH))


@dataclass(frozen=True)
class SpeciesThermo:
    species: str
    breaks: tuple[float, ...]  # segment edges, len = n_segments + 1
    coeffs: tuple[tuple[float, ...], ...]  # cp/R polynomial per segment
    gas_constant: float

    def __post_init__(self):
        if len(self.breaks) != len(self.coeffs) + 1:
            raise ValueError(f"{self.species}: segment edges do not match coefficient rows")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError(f"{self.species}: segment edges must increase")

    @property
    def t_range(self) -> tuple[float, float]:
        return self.breaks[0], self.breaks[-1]

    def _segment(self, T: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.breaks[1:-1]), T, side="right")
        return idx

    def _check(self, T: np.ndarray) -> None:
        lo, hi = self.t_range
        bad = ~((T >= lo) & (T <= hi))
        if np.any(bad):
            first = T[bad].flat[0]
            raise PropertyRangeError(
                f"{self.species}: T = {first} K outside property range [{lo}, {hi}] K"
            )

    def cp(self, T):
        T = np.asarray(T, dtype=float)
        self._check(T)
        a = np.asarray(self.coeffs)[self._segment(T)]
        poly = a[..., 0] + T * (a[..., 1] + T * (a[..., 2] + T * (a[..., 3] + T * a[..., 4])))
        return self.gas_constant * poly

    def _antiderivative(self, T, a):
        return T * (
            a[..., 0]
            + T * (a[..., 1] / 2 + T * (a[..., 2] / 3 + T * (a[..., 3] / 4 + T * a[..., 4] / 5)))
        )

    @cached_property
    def _offsets(self) -> np.ndarray:
        # enthalpy accumulated from the range start up to each segment's lower edge
        offsets = [0.0]
        a = np.asarray(self.coeffs)
        for j in range(len(self.coeffs) - 1):
            t0, t1 = self.breaks[j], self.breaks[j + 1]
            offsets.append(offsets[-1] + float(self._antiderivative(t1, a[j]) - self._antiderivative(t0, a[j])))
        return np.asarray(offsets)

    def enthalpy(self, T):
        """Sensible enthalpy above the range start, J/mol."""
        T = np.asarray(T, dtype=float)
        self._check(T)
        seg = self._segment(T)
        a = np.asarray(self.coeffs)[seg]
        lower = np.asarray(self.breaks)[seg]
        rel = self._antiderivative(T, a) - self._antiderivative(lower, a)
        return self.gas_constant * (rel + self._offsets[seg])


def parse_property_table(text: str) -> dict[str, SpeciesThermo]:
    gas_constant = None
    blocks: dict[str, list[tuple[float, float, tuple[float, ...]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "version":
            if rest != ["1"]:
                raise ValueError(f"unsupported property table version {rest}")
        elif key == "gas_constant":
            gas_constant = float(rest[0])
        elif key == "species":
            current = rest[0]
            blocks[current] = []
        elif key == "segment":
            if current is None:
                raise ValueError(f"line {lineno}: segment before species")
            lo, hi, *coeffs = map(float, rest)
            if len(coeffs) != 5:
                raise ValueError(f"line {lineno}: expected 5 coefficients, got {len(coeffs)}")
            blocks[current].append((lo, hi, tuple(coeffs)))
        else:
            raise ValueError(f"line {lineno}: unknown record {key!r}")
    if gas_constant is None:
        raise ValueError("property table lacks gas_constant")

    table = {}
    for sp, segs in blocks.items():
        if any(prev[1] != nxt[0] for prev, nxt in zip(segs, segs[1:])):
            raise ValueError(f"{sp}: segments do not tile the range")
        breaks = tuple([segs[0][0]] + [s[1] for s in segs])
        table[sp] = SpeciesThermo(sp, breaks, tuple(s[2] for s in segs), gas_constant)
    return table


@lru_cache(maxsize=None)
def load_property_table(path: str | None = None) -> dict[str, SpeciesThermo]:
    if path is None:
        text = resources.files("noxdwc").joinpath("data/cp_nasa7.dat").read_text()
    else:
        text = Path(path).read_text()
    return parse_property_table(text)


def _species(sp: str) -> SpeciesThermo:
    try:
        return load_property_table()[sp]
    except KeyError:
        raise KeyError(f"unknown species {sp!r}; expected one of {SPECIES}") from None


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def cp_molar(sp: str, T):
    """Molar isobaric heat capacity of `sp` at temperature `T` (K), in J/(mol K)."""
    return _out(_species(sp).cp(T))


def enthalpy_integral(sp: str, T1, T2):
    """Integral of cp from `T1` to `T2` for species `sp`, J/mol."""
    thermo = _species(sp)
    return _out(thermo.enthalpy(T2) - thermo.enthalpy(T1))


@dataclass(frozen=True)
class FuelSpec:
    """Surrogate diesel CxHy."""

    carbon: float = 13.88
    hydrogen: float = 24.06

    @property
    def o2_stoich(self) -> float:
        """mol O2 per mol fuel for complete combustion."""
        return self.carbon + self.hydrogen / 4


@dataclass(frozen=True)
class ProductMoles:
    """Complete-combustion products per mol of fuel."""

    n_CO2: float
    n_H2O: float
    n_N2: float
    n_O2: float

    def as_dict(self) -> dict[str, float]:
        return {"CO2": self.n_CO2, "H2O": self.n_H2O, "N2": self.n_N2, "O2": self.n_O2}

    @property
    def total(self) -> float:
        return self.n_CO2 + self.n_H2O + self.n_N2 + self.n_O2


def product_moles(phi: float, fuel: FuelSpec = FuelSpec()) -> ProductMoles:
    if not 0 < phi <= 1:
        if phi > 1:
            raise RichMixtureError(f"equivalence ratio {phi} > 1 is not supported (rich mixture)")
        raise ValueError(f"equivalence ratio must be positive, got {phi}")
    o2 = fuel.o2_stoich
    air = o2 / O2_IN_AIR
    return ProductMoles(
        n_CO2=fuel.carbon,
        n_H2O=fuel.hydrogen / 2,
        n_N2=(1 - O2_IN_AIR) * air / phi,
        n_O2=o2 * (1 / phi - 1),
    )


def peak_compression_temperature(intakeT, CR: float, gamma: float):
    """End-of-compression temperature for polytropic compression."""
    if CR < 1 or gamma <= 1:
        raise ValueError(f"need CR >= 1 and gamma > 1, got CR={CR}, gamma={gamma}")
    return intakeT * CR ** (gamma - 1)


def _mixture(n: ProductMoles):
    table = load_property_table()
    pairs = [(table[sp], moles) for sp, moles in n.as_dict().items() if moles != 0]

    def enthalpy(T):
        return sum(moles * th.enthalpy(T) for th, moles in pairs)

    def heat_capacity(T):
        return sum(moles * th.cp(T) for th, moles in pairs)

    return enthalpy, heat_capacity


def adiabatic_flame_temperature(T_peak, n: ProductMoles, LHV: float, M_fuel: float):
    """Solve ``LHV*M_fuel = sum_i n_i * integral(cp_i, T_peak, T)`` for T.

    `T_peak` may be a scalar or an array; the same fixed-iteration bisection
    runs elementwise so array and scalar calls give identical bits.

    Raises:
        SaturationError: the required temperature lies above the property range.
    """
    if LHV < 0:
        raise ValueError(f"LHV must be non-negative, got {LHV}")
    scalar = np.ndim(T_peak) == 0
    tp = np.atleast_1d(np.asarray(T_peak, dtype=float))
    if np.any(~((tp >= T_MIN) & (tp <= T_MAX))):
        raise PropertyRangeError(f"T_peak outside property range [{T_MIN}, {T_MAX}] K")

    heat = LHV * M_fuel
    if heat == 0:
        return float(tp[0]) if scalar else tp.copy()

    enthalpy, heat_capacity = _mixture(n)
    h0 = enthalpy(tp)
    top = np.full_like(tp, T_MAX)
    if np.any(enthalpy(top) - h0 < heat):
        raise SaturationError(T_MAX)

    lo, hi = tp.copy(), top
    for _ in range(_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        below = enthalpy(mid) - h0 < heat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    T = 0.5 * (lo + hi)
    T = T - (enthalpy(T) - h0 - heat) / heat_capacity(T)
    T = np.clip(T, lo, hi)
    return float(T[0]) if scalar else T
