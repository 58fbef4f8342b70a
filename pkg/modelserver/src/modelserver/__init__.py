"""Reference denoiser and codec server for the umf wire protocol."""

from .app import create_app
from .codec import PieceCodec, ascii_codec
from .registry import CallableModel, ModelRegistry, ServedModel, TableModel

__version__ = "0.1.0"

__all__ = [
    "CallableModel",
    "ModelRegistry",
    "PieceCodec",
    "ServedModel",
    "TableModel",
    "ascii_codec",
    "create_app",
    "__version__",
]
