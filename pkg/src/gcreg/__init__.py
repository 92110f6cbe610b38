"""Deformable volume registration by block-restricted expansion moves solved
with minimal graph cuts."""
__version__ = "0.1.0"

from .energy import EnergyParams, total_energy
from .io import read_field, read_volume, write_field, write_volume
from .metrics import checkerboard, vme
from .moves import SubRegion, solve_move
from .optimizer import (BlockGrid, RegistrationConfig, direct_alpha_expansion,
                        optimize_level, register)
from .phantom import make_phantom
from .volume import DisplacementField, GridMeta, Volume, compose, warp

__all__ = [
    "BlockGrid", "DisplacementField", "EnergyParams", "GridMeta", "RegistrationConfig",
    "SubRegion", "Volume", "checkerboard", "compose", "direct_alpha_expansion",
    "make_phantom", "optimize_level", "read_field", "read_volume", "register",
    "solve_move", "total_energy", "vme", "warp", "write_field", "write_volume",
]
