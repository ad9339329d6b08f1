"""Object-level SLAM with multi-hypothesis (ambiguous) landmark pose measurements."""

from .association import AssociationConfig, associate
from .disambiguation import (DynamicReinitializer, RansacConfig, ReinitConfig, karcher_mean,
                             robust_pose_average)
from .evaluation import BenchConfig, ErrorReport, bench_reinit, compute_errors, run_comparison
from .factors import BetweenFactor, GaussianNoiseModel, Key, L, PriorFactor, X
from .graph import FactorGraph, Values
from .incremental import IncrementalConfig, IncrementalSolver
from .max_mixture import MaxMixtureFactor, MixtureComponent
from .optimizer import SolverConfig, optimize_batch
from .pipeline import ObjectSLAM, PipelineConfig, run
from .se3 import Pose
from .simulator import GroundTruth, MeasurementLog, ScenarioConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AssociationConfig", "BenchConfig", "BetweenFactor", "DynamicReinitializer", "ErrorReport",
    "FactorGraph", "GaussianNoiseModel", "GroundTruth", "IncrementalConfig", "IncrementalSolver",
    "Key", "L", "MaxMixtureFactor", "MeasurementLog", "MixtureComponent", "ObjectSLAM",
    "PipelineConfig", "Pose", "PriorFactor", "RansacConfig", "ReinitConfig", "ScenarioConfig",
    "SolverConfig", "Values", "X", "associate", "bench_reinit", "compute_errors", "generate",
    "karcher_mean", "optimize_batch", "robust_pose_average", "run", "run_comparison",
]
