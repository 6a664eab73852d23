"""Informative sampling and path planning for field phenotyping robots."""

from .corridor import CandidatePath, CorridorGraph, build_graph, enumerate_feasible, shortest_cover_cost
from .errors import InvalidInputError, NumericalError, ParseError, PlanningError, ResourceLimitError
from .field import FieldGrid, GroundTruthField, SensorSim, default_layout, generate_synthetic, load_dataset, load_grid
from .fusion import FusedObservation, Kind, Measurement, fuse, ingest
from .gp import FeatureVector, GPModel, KernelParams, NoiseModel, TrainingSet, fit_hyperparameters
from .harness import ExperimentConfig, MetricSeries, compute_mae, run_batch, sweep_noise_ratio, sweep_slack
from .planner import Strategy, plan_iteration, run_mission

__version__ = "0.1.0"
