"""Adaptive importance sampling for stopped diffusions and tilted families."""
from .adaptive import PathProblem, StagePlan, TiltProblem, msm_run, stream
from .analysis import fd_reference, quality_outer_loop, two_stage
from .estimators import EstimatorKind, evaluate
from .letgs import GaussianBasis, Sample, sample_batch
from .model import MGF, Box, Committor, ExitByTime, ModelSpec, three_well_model

__all__ = [
    "Box", "Committor", "EstimatorKind", "ExitByTime", "GaussianBasis", "MGF", "ModelSpec",
    "PathProblem", "Sample", "StagePlan", "TiltProblem", "evaluate", "fd_reference", "msm_run",
    "quality_outer_loop", "sample_batch", "stream", "three_well_model", "two_stage",
]
