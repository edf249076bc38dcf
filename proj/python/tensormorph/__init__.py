"""Sparse tensor format conversion."""

from ._core import (
    Tensor,
    TensorMorphError,
    convert,
    define_format,
    dump,
    explain,
    format_text,
    formats,
    from_entries,
    load,
    query,
    read_mtx,
    write_mtx,
)

__all__ = [
    "Tensor",
    "TensorMorphError",
    "convert",
    "define_format",
    "dump",
    "explain",
    "format_text",
    "formats",
    "from_entries",
    "load",
    "query",
    "read_mtx",
    "write_mtx",
]
