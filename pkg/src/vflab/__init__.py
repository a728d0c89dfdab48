"""Vertical federated learning lab.

Two parties hold disjoint feature columns of partially overlapping
sample sets; the label holder wants a classifier that also works on its
non-shared rows. The package implements a representation-sharing
pipeline that needs a single communication round (local autoencoders,
one latent transfer, a joint teacher, a distilled final encoder), an
iterative split-network baseline over an explicit wire protocol, local
and ablation baselines, byte-exact communication accounting, and a
scenario-driven experiment runner.
"""

__version__ = "0.1.0"

from .data import (
    FeatureMatrix,
    ScenarioConfig,
    VerticalSplit,
    load_csv,
    load_registry,
    scenario_grid,
    splitnn_scenarios,
    standardize,
    synth_dataset,
    vertical_split,
)
from .classifier import (
    CvReport,
    LogisticRegressionProbe,
    MetricSet,
    QualityTrace,
    compute_metrics,
    evaluate,
    kfold_cv,
    representation_quality_trace,
    similarity_decision,
)
from .representation import (
    AlignedRepresentations,
    Autoencoder,
    build_autoencoder,
    build_enhanced_dataset,
    distill_final_encoder,
    encoder_widths,
    learn_joint_representation,
)
from .experiments import run_grid, run_scenario, run_from_manifest

__all__ = [
    "__version__",
    "FeatureMatrix",
    "ScenarioConfig",
    "VerticalSplit",
    "load_csv",
    "load_registry",
    "scenario_grid",
    "splitnn_scenarios",
    "standardize",
    "synth_dataset",
    "vertical_split",
    "CvReport",
    "LogisticRegressionProbe",
    "MetricSet",
    "QualityTrace",
    "compute_metrics",
    "evaluate",
    "kfold_cv",
    "representation_quality_trace",
    "similarity_decision",
    "AlignedRepresentations",
    "Autoencoder",
    "build_autoencoder",
    "build_enhanced_dataset",
    "distill_final_encoder",
    "encoder_widths",
    "learn_joint_representation",
    "run_grid",
    "run_scenario",
    "run_from_manifest",
]
