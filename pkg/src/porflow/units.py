"""Field-unit constants and metric conversions.

All internal computation is in field units: psia, ft, cp, mD, STB/day (or
bbl/day at reservoir conditions), days.  Metric lengths are converted once at
config load.
"""

from dataclasses import dataclass

FT_PER_M = 3.280839895013123
FT3_PER_BBL = 5.614583333333333

# Darcy's law in field units: q [bbl/day] = C * k[mD] * A[ft^2] / L[ft] * dp[psi] / mu[cp]
FIELD_DARCY_CONST = 1.127e-3


@dataclass(frozen=True)
class UnitConstants:
    """Conversion constants used by the discretization.

    ``darcy_const`` converts mD*ft*psi/cp into bbl/day (both for face
    transmissibilities and the Peaceman well index).
    """

    darcy_const: float = FIELD_DARCY_CONST
    ft_per_m: float = FT_PER_M
    ft3_per_bbl: float = FT3_PER_BBL

    def __post_init__(self):
        if self.darcy_const <= 0 or self.ft_per_m <= 0 or self.ft3_per_bbl <= 0:
            raise ValueError("unit constants must be positive")

    def m_to_ft(self, meters):
        return meters * self.ft_per_m

    def ft3_to_bbl(self, ft3):
        return ft3 / self.ft3_per_bbl
