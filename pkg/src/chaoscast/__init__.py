"""Forecasting noisy Lorenz-63 trajectories: LS-SVM over delay embeddings versus filtering."""

__version__ = "0.1.0"

from .dynamics import DivergenceError, LorenzParams, attractor_trajectory, generate_trajectory, observe, rk4_step
from .noise import Gaussian, Laplace, Mixture, NoiseSpec, PointMass, SignedExponential, Uniform

__all__ = [
    "DivergenceError",
    "Gaussian",
    "Laplace",
    "LorenzParams",
    "Mixture",
    "NoiseSpec",
    "PointMass",
    "SignedExponential",
    "Uniform",
    "attractor_trajectory",
    "generate_trajectory",
    "observe",
    "rk4_step",
]
