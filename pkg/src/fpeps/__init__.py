"""Finite PEPS toolkit: boundary-MPO contraction, gauge-fixed full update and
imaginary time evolution on open square lattices."""

from .backend import COMPILED
from .environment import ContractionSettings, expect_local, log_norm_squared, measure
from .evolution import EvolveSettings, Schedule, Stage, build_gates, energy, evolve, run_schedule
from .models import ModelSpec
from .peps import Peps, init_separable_with_noise, load, neel_states, random_peps, save
from .update import UpdateSettings, full_tensor_update, simple_update, update_pair

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "ContractionSettings",
    "EvolveSettings",
    "ModelSpec",
    "Peps",
    "Schedule",
    "Stage",
    "UpdateSettings",
    "build_gates",
    "energy",
    "evolve",
    "expect_local",
    "full_tensor_update",
    "init_separable_with_noise",
    "load",
    "log_norm_squared",
    "measure",
    "neel_states",
    "random_peps",
    "run_schedule",
    "save",
    "simple_update",
    "update_pair",
]
