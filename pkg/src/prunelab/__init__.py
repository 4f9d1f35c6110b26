"""prunelab: unstructured pruning experiments on desk-scale sequence models."""

from .autograd import Tensor, cross_entropy, no_grad
from .baselines import PrunerSpec
from .gating import GatedParameter, PruneMask
from .harness import ExperimentConfig, run_experiment, run_sweep
from .models import Dims, build_model
from .rng import CounterRng, seeded_rng
from .smp import SmpConfig, SparsitySchedule, anneal_alpha, default_lambda

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "cross_entropy",
    "no_grad",
    "PrunerSpec",
    "GatedParameter",
    "PruneMask",
    "ExperimentConfig",
    "run_experiment",
    "run_sweep",
    "Dims",
    "build_model",
    "CounterRng",
    "seeded_rng",
    "SmpConfig",
    "SparsitySchedule",
    "anneal_alpha",
    "default_lambda",
    "__version__",
]
