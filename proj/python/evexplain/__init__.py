"""Python bindings for the evx event recognition toolkit."""

import os as _os

# Wheels carry the pretrained backbone next to the package.
_weights = _os.path.join(_os.path.dirname(__file__), "weights")
if _os.path.isdir(_weights):
    _os.environ.setdefault("EVX_WEIGHTS_DIR", _weights)

from ._core import (
    Error,
    Model,
    StudyService,
    __version__,
    compute_report,
    load_batch,
    majority_label,
    normalize_map,
    normalize_pixel,
    render_report_table,
    scan,
    write_toy_dataset,
)

__all__ = [
    "Error",
    "Model",
    "StudyService",
    "__version__",
    "compute_report",
    "load_batch",
    "majority_label",
    "normalize_map",
    "normalize_pixel",
    "render_report_table",
    "scan",
    "write_toy_dataset",
]
