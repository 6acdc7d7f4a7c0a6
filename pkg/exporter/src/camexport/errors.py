class ExportError(Exception):
    """A source model cannot be converted; the message names the layer."""
