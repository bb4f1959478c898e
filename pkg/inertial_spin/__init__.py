"""Numerical lab for the inertial spin flocking model."""
from .integrator import IntegratorConfig, Scheme, Trajectory, simulate
from .kernels import ConstantMatrixKernel, MetricKernel, MultiplicativeKernel, TimeVaryingKernel
from .model import ModelParams, SwarmState

__all__ = [
    "ConstantMatrixKernel",
    "IntegratorConfig",
    "MetricKernel",
    "ModelParams",
    "MultiplicativeKernel",
    "Scheme",
    "SwarmState",
    "TimeVaryingKernel",
    "Trajectory",
    "simulate",
]
