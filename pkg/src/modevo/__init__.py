"""modevo: co-evolution of morphology and control for chain-type modular
robots, with a built-in deterministic physics world and a statistical
comparison harness."""

__version__ = "0.1.0"

from .controllers import ControllerGenome, ControllerKind  # noqa: F401
from .evaluation import EvalConfig, EvalResult, evaluate  # noqa: F401
from .evolution import EvoConfig, Individual, RunStats, run_evolution  # noqa: F401
from .morphology import MorphGenome, decode, random_genome  # noqa: F401
