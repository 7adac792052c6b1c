"""Reference masked-LM backend for the line-delimited JSON wire protocol."""

from .models import DummyModel, ModelLoadError, PretrainedModel, load_model
from .server import Service, main, serve_stream, serve_tcp

__version__ = "0.1.0"
