"""Exception hierarchy shared across the emulator.

Graph-level problems carry the offending layer id in ``layer`` so loaders
and validators can point at the exact manifest entry.
"""

from __future__ import annotations


class MacfiError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidScale(MacfiError):
    """Quantization or requantization scale is non-positive or non-finite."""


class ShapeError(MacfiError):
    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class ScaleMismatch(MacfiError):
    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class UnsupportedLayer(MacfiError):
    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class SchemaError(MacfiError):
    """Manifest, dataset, fault-spec, or campaign-spec document violates its schema."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class MissingBlob(MacfiError):
    """A weights/bias blob reference points outside the blob (or the blob is absent)."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class CycleError(MacfiError):
    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class UnmappedAddress(MacfiError):
    """Register access at a byte offset outside the FI register map."""


class KTooLarge(MacfiError):
    """Requested fault count exceeds the number of multiplier lanes."""


class EmptyDataset(MacfiError):
    pass


class EmptyGroup(MacfiError):
    pass


class EmptyLogits(MacfiError):
    pass


class OutOfRange(MacfiError):
    """A numeric argument is outside its documented domain."""
