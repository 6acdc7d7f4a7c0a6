"""Exception hierarchy shared by every contrastcam module.

The CLI maps these onto process exit codes: usage problems exit 1,
model/format problems exit 2, runtime validation or numeric failures
exit 3.
"""


class ContrastCamError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(ContrastCamError):
    """Bad command line: unknown flag, missing flag, unresolvable target."""


class ModelError(ContrastCamError):
    """Problems with model files: manifest, blob store, or graph structure."""


class ManifestError(ModelError):
    """Malformed or invalid manifest JSON; message carries the location."""


class BlobFormatError(ModelError):
    """Corrupt or unreadable tensor blob file."""


class GraphValidationError(ModelError):
    """Structurally invalid graph: dangling inputs, bad weights, bad shapes."""


class UnsupportedNodeError(ModelError):
    """Manifest names a node kind the engine does not implement."""


class ShapeError(ContrastCamError):
    """Tensor rank or dimensions do not match what an operation requires."""


class TargetError(ContrastCamError):
    """Contrast target is invalid for the model: bad class index or scalar
    outside the declared output range."""


class TaskError(ContrastCamError):
    """Operation applied to the wrong task kind (classification vs regression)."""


class ImageFormatError(ModelError):
    """Input image bytes are not a decodable PNG or binary PPM."""
