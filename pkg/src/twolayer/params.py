from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysParams:
    """Fixed problem parameters.

    ``omega1`` is derived: the vorticity jump across the interface is 1.
    """

    k: float
    H: float
    omega0: float

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValueError(f"wavenumber must be positive, got {self.k}")
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"mean depth must lie in (0, 1), got {self.H}")

    @property
    def omega1(self) -> float:
        return self.omega0 - 1.0

    @property
    def half_wavelength(self) -> float:
        return math.pi / self.k

    def reflected(self) -> "PhysParams":
        return PhysParams(self.k, 1.0 - self.H, 1.0 - self.omega0)
