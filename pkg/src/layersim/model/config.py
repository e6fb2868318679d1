from __future__ import annotations

import dataclasses
from dataclasses import dataclass

# one previous frame of history, as in the reference experiments
DEFAULT_HISTORY = 1


@dataclass
class SimulatorConfig:
    history: int = DEFAULT_HISTORY
    layers: int = 2
    hidden: int = 32
    patch_size: int = 4
    radius_patch: float | None = None  # default: 2.5 x rest patch diameter
    radius_body: float | None = None  # default: 0.5 x rest patch diameter
    dt: float = 1.0 / 30.0
    use_ret: bool = True
    accel_scale: float = 10.0  # decoder output unit, m/s^2
    seed: int = 0

    def __post_init__(self):
        if self.history < 1:
            raise ValueError("history length must be at least 1")
        if self.layers < 1:
            raise ValueError("need at least one attention layer")
        if self.hidden < 3:
            raise ValueError("hidden size must be at least 3 to host rotations")

    @classmethod
    def from_dict(cls, d: dict) -> "SimulatorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # feature widths follow from the history length
    @property
    def patch_features(self) -> int:
        return 3 * (self.history + 1) + 3 + 5

    @property
    def body_features(self) -> int:
        return 3 * (self.history + 1) + 3

    @property
    def wind_features(self) -> int:
        return 4 * (self.history + 1)
