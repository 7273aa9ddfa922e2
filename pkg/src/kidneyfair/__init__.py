"""Dynamic kidney-exchange simulation under sensitization and time fairness."""

from .bounds import BoundInputs, loss_sens_bound, loss_time_bound, tradeoff_bound, us_preset
from .config import PRESETS, US_2017
from .model import (
    BloodType,
    CompatGraph,
    ModelParams,
    PairClass,
    PairRecord,
    PoolState,
    abo_compatible,
    build_graph,
    classify_pair,
    generate_arrivals,
    validate_params,
)
from .sim import estimate_tradeoff, run, step
from .solver import Matching, Objective, enumerate_cycles, matched_counts, solve, solve_batched

__version__ = "0.1.0"
