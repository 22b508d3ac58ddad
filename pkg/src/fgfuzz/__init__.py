"""fgfuzz: model-driven security analysis and guided fuzzing of a simulated
5G NSA authentication flow."""

from .model import ProtocolModel, validate
from .modelfile import dump_model, load_bundled, load_model, parse_model

__version__ = "0.1.0"

__all__ = [
    "ProtocolModel",
    "validate",
    "load_model",
    "load_bundled",
    "parse_model",
    "dump_model",
    "__version__",
]
