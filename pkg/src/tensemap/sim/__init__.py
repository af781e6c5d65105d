"""Surrogate tensegrity physics used as a desk-scale evaluator."""
from .structure import (Spring, Strut, StructureError, StructureSpec, check_structure,
                        default_structure, structure_from_dict)
from .surrogate import (SimConfig, SimState, SimulationError, TensegritySim, body_pose,
                        build_structure, evaluate, simulate, step, strut_lengths,
                        total_energy)

__all__ = ["Spring", "Strut", "StructureError", "StructureSpec", "check_structure",
           "default_structure", "structure_from_dict", "SimConfig", "SimState",
           "SimulationError", "TensegritySim", "body_pose", "build_structure", "evaluate",
           "simulate", "step", "strut_lengths", "total_energy"]
