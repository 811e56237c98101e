"""Offline fixture/export tooling for the OOD-detection engine formats."""

from .export import ExportResult, export_model, export_sequential, export_tiny_resnet
from .fixtures import FixtureSpec, export_dataset, make_fixtures, train_fixture_model
from .formats import ExportError, GraphWriter, read_archive, write_archive, write_dataset
from .models import ResidualUnit, TinyResNet

__all__ = [
    "ExportError",
    "ExportResult",
    "FixtureSpec",
    "GraphWriter",
    "ResidualUnit",
    "TinyResNet",
    "export_dataset",
    "export_model",
    "export_sequential",
    "export_tiny_resnet",
    "make_fixtures",
    "read_archive",
    "train_fixture_model",
    "write_archive",
    "write_dataset",
]
