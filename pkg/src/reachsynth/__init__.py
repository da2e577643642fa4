"""Reach-avoid controller synthesis for piecewise-affine systems via SMT rule encodings."""
from .geometry import Box, Parallelotope, Partition, uniform_partition
from .model import (AffineDynamics, Controller, Location, PiecewiseAffineSystem, Problem, RankingFunction,
                    validate)
from .post import SuccessorTable, build_table
from .certify import Certificate, check_exact_rules, monte_carlo, probe_robustness, simulate
from .encode import decode_model, encode, encode_exact, encode_strengthened, encode_weakened
from .solver import SolverConfig, SolverOutcome, brute_force, solve

__version__ = "0.1.0"
