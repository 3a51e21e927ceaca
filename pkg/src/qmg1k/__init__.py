"""Quantum-amplified M/G/1/K queue simulation on a classical statevector engine."""
from .dist import Deterministic, Exponential, Normal, PhaseType, ServiceDistribution, Uniform, from_config
from .circuit import QueueParams, SimulationResult, qmg1_run
from .des import DesConfig, DesResult, run_des
from .estimators import DESEstimator, QMG1Estimator

__version__ = "0.1.0"

__all__ = [
    "Deterministic", "Exponential", "Normal", "PhaseType", "ServiceDistribution", "Uniform",
    "from_config", "QueueParams", "SimulationResult", "qmg1_run", "DesConfig", "DesResult",
    "run_des", "QMG1Estimator", "DESEstimator",
]
