"""Export pooled window-attention scores from pretrained models as KVTRACE1 files."""

from .exporter import ExportSpec, export_trace, pooled_window_scores
from .format import encode_trace, write_trace_file

__all__ = [
    "ExportSpec",
    "export_trace",
    "pooled_window_scores",
    "encode_trace",
    "write_trace_file",
]
