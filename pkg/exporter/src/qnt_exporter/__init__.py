"""Fixture exporter: trains tiny models and writes .qnt containers."""

from .container import read_container, write_container
from .export import ExportManifest, convert_layers, export_model
from .fixtures import build_all

__all__ = ["read_container", "write_container", "ExportManifest",
           "convert_layers", "export_model", "build_all"]
