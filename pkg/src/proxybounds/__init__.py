"""Certified bounds on interventional probabilities and average causal
effects when a proxy's transition matrix is only known up to elementwise
bounds."""

from .ace import bound_ace, build_ace_program, identify_ace_exact
from .engine import BoundResult, brute_force, brute_force_min, run
from .errors import ProxyBoundsError
from .model import (PhiVector, ProblemSpec, build_ir_phi, dump_problem, identify_exact,
                    load_problem, make_spec, simulate_forward)
from .tightness import JointWitness, find_witness, verify_witness

__all__ = [
    "BoundResult", "JointWitness", "PhiVector", "ProblemSpec", "ProxyBoundsError",
    "bound_ace", "brute_force", "brute_force_min", "build_ace_program", "build_ir_phi",
    "dump_problem", "find_witness", "identify_ace_exact", "identify_exact", "load_problem",
    "make_spec", "run", "simulate_forward", "verify_witness",
]

__version__ = "0.1.0"
