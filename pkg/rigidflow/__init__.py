import importlib.metadata as importlib_metadata
from rigidflow.tools.simulation_runner_tool import simulate
from rigidflow.tools.sweep_runner_tool import sweep
from rigidflow.tools.comparison_tool import compare
from rigidflow.tools.verification_tool import verify

__version__ = importlib_metadata.version(__name__)
