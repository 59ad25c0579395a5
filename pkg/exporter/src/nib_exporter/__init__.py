"""Torch-based reference implementation and fixture exporter for the
dual-encoder-v1 tensor-bundle interchange format."""

from .bundle import dump, dump_file, load, load_file
from .export import (
    ExportError,
    ExportJob,
    UnsupportedArchitectureError,
    convert_clip_state_dict,
    export_fixtures,
    export_model,
    toy_weights,
)
from .reference import ReferenceDualEncoder
from .schema import EncoderConfig, weight_names

__version__ = "0.1.0"
