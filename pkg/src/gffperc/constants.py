"""Ledger of unnamed positive constants used by the bound checkers.

Every constant starts at 1.0 with a placeholder flag. Reports built on a
ledger that still holds placeholders carry a conditional banner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

PLACEHOLDER_BANNER = "conditional on constants: placeholder values in use"


@dataclass
class Constant:
    value: float
    placeholder: bool = True
    note: str = ""


_NOTES = {
    "c": "generic constant (capacity bound, delta_n prefactor, duality chain)",
    "c_prime": "seed requirement prefactor for the upper-bound scheme",
    "c0": "Green function decay (c0 d/|x|_1)^(d/2-2)",
    "c2": "embedding count (c2 l0)^(2(d-1)2^n)",
    "c3": "sprinkling factor (c3(sqrt d + N))^(d-2)",
    "c4_eps": "lower cutoff for N in the upper-bound parameters",
    "c5": "local connectivity exponent c5 f(eps, N) d log d",
    "c8": "local connectivity radius fraction",
    "c0_prime": "lower-bound recursion prefactor",
    "c1_prime": "lower-bound initial scale divisor",
    "c3_prime": "hypercube hitting-probability constant (max_k c(k))",
    "c4_prime": "bad-set density exponent",
}


@dataclass
class ConstantsLedger:
    entries: dict[str, Constant] = field(default_factory=dict)

    def __post_init__(self):
        for name, note in _NOTES.items():
            self.entries.setdefault(name, Constant(1.0, True, note))

    def get(self, name: str) -> float:
        return self.entry(name).value

    def entry(self, name: str) -> Constant:
        if name not in self.entries:
            if name.startswith("c(") and name.endswith(")"):
                self.entries[name] = Constant(1.0, True, "return probability bound c(k)/d")
            else:
                raise KeyError(f"unknown constant {name!r}")
        return self.entries[name]

    def is_placeholder(self, name: str) -> bool:
        return self.entry(name).placeholder

    def set(self, name: str, value: float, note: str | None = None) -> "ConstantsLedger":
        value = float(value)
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"constant {name} must be positive and finite, got {value}")
        old = self.entries.get(name)
        self.entries[name] = Constant(value, False, note if note is not None else (old.note if old else ""))
        return self

    def update(self, values: dict) -> "ConstantsLedger":
        for k, v in values.items():
            self.set(k, v)
        return self

    def copy(self) -> "ConstantsLedger":
        return ConstantsLedger({k: Constant(v.value, v.placeholder, v.note) for k, v in self.entries.items()})

    def placeholders(self, names=None) -> list[str]:
        names = self.entries if names is None else names
        return sorted(n for n in names if self.entry(n).placeholder)

    def banner(self, names=None) -> str | None:
        return PLACEHOLDER_BANNER if self.placeholders(names) else None

    def snapshot(self) -> dict:
        return {k: {"value": v.value, "placeholder": v.placeholder, "note": v.note}
                for k, v in sorted(self.entries.items())}

    @classmethod
    def from_mapping(cls, data: dict) -> "ConstantsLedger":
        led = cls()
        for k, v in data.items():
            if isinstance(v, dict):
                led.set(k, v["value"], v.get("note"))
            else:
                led.set(k, v)
        return led

    @classmethod
    def from_json(cls, path) -> "ConstantsLedger":
        return cls.from_mapping(json.loads(Path(path).read_text()))
