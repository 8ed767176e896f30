"""chargelab: monitored symmetric circuits, charge decoders, and
strong-to-weak symmetry-breaking diagnostics at desk scale."""

from chargelab.symmetry import (
    ChargeLabel,
    GateParams,
    ProjectorSet,
    SectorSpec,
    projector_set,
    sector_dimension,
    sym_gate,
)

__all__ = [
    "ChargeLabel",
    "GateParams",
    "ProjectorSet",
    "SectorSpec",
    "projector_set",
    "sector_dimension",
    "sym_gate",
]

__version__ = "0.1.0"
