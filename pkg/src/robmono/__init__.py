"""Robust monotonic optimization of multicell MISO downlink beamforming."""

from .conic import SolverError
from .feasibility import (FeasibilityChecker, Feasible, Infeasible, Strategy, check_feasible,
                          mse_nominal, worst_case_mse)
from .perf import SystemKind, SystemUtility, UserKind, UserUtility
from .scenario import (ChannelRealization, ConfigurationError, CsiMode, PerAntenna,
                       PerTransmitter, Scenario, TotalPower, draw_channels,
                       make_interference_channel, make_network_mimo)

__version__ = "0.1.0"

__all__ = ["ChannelRealization", "ConfigurationError", "CsiMode", "FeasibilityChecker", "Feasible",
           "Infeasible", "PerAntenna", "PerTransmitter", "Scenario", "SolverError", "Strategy",
           "SystemKind", "SystemUtility", "TotalPower", "UserKind", "UserUtility", "check_feasible",
           "draw_channels", "make_interference_channel", "make_network_mimo", "mse_nominal",
           "worst_case_mse"]
