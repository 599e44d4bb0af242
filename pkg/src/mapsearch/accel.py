"""Accelerator description shared by the map space and the cost model."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace

LEVELS = ("DRAM", "L2", "L1")
ON_CHIP = ("L2", "L1")


@dataclass(frozen=True)
class AcceleratorConfig:
    """Two on-chip buffer levels under DRAM feeding a flat PE array.

    Capacities are in words; ``l1_capacity`` is the private buffer of a single
    PE. Energies are pJ per word moved out of a level (pJ per MAC for
    ``e_mac``).
    """

    num_pes: int = 256
    flops_per_pe: int = 1
    clock_hz: float = 1e9
    l2_capacity: int = 262144
    l1_capacity: int = 32768
    l2_banks: int = 8
    l1_banks: int = 8
    e_dram: float = 200.0
    e_l2: float = 6.0
    e_l1: float = 1.0
    e_mac: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"accelerator field {f.name} must be positive")
        for lvl in ON_CHIP:
            if self.capacity(lvl) < self.banks(lvl):
                raise ValueError(f"{lvl} capacity must hold at least one word per bank")

    def capacity(self, level: str) -> int:
        return {"L2": self.l2_capacity, "L1": self.l1_capacity}[level]

    def banks(self, level: str) -> int:
        return {"L2": self.l2_banks, "L1": self.l1_banks}[level]

    def energy_per_word(self, level: str) -> float:
        return {"DRAM": self.e_dram, "L2": self.e_l2, "L1": self.e_l1}[level]

    def banks_needed(self, level: str, words: int) -> int:
        """Smallest bank count whose share of ``level`` holds ``words``."""
        cap, nb = self.capacity(level), self.banks(level)
        return -(-words * nb // cap)

    def fingerprint(self) -> str:
        blob = ";".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AcceleratorConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise KeyError(f"unknown accelerator keys: {sorted(unknown)}")
        out = {}
        for k, v in d.items():
            out[k] = float(v) if k.startswith("e_") or k == "clock_hz" else int(v)
        return cls(**out)

    def with_(self, **kw) -> "AcceleratorConfig":
        return replace(self, **kw)


# 16-bit words: 512 KB shared buffer, 64 KB private buffer per PE.
PRESETS: dict[str, AcceleratorConfig] = {
    "full": AcceleratorConfig(),
    "desk": AcceleratorConfig(
        num_pes=16, l2_capacity=2048, l1_capacity=128, l2_banks=8, l1_banks=4
    ),
    "tiny": AcceleratorConfig(
        num_pes=4, l2_capacity=32, l1_capacity=8, l2_banks=4, l1_banks=4
    ),
    "unit": AcceleratorConfig(
        num_pes=1, l2_capacity=1 << 20, l1_capacity=1 << 20, l2_banks=4, l1_banks=4
    ),
}


def preset(name: str) -> AcceleratorConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown accelerator preset {name!r}; have {sorted(PRESETS)}") from None
