"""Error taxonomy for the extraction front end."""


class VolembedError(Exception):
    """Base for everything this package raises deliberately."""


class InputError(VolembedError):
    """A volume file or label sidecar is unreadable or malformed."""


class ModelError(VolembedError):
    """The requested feature extractor cannot be provided."""
