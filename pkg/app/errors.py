"""
Exception hierarchy for the backprojection toolkit.

The CLI maps these onto exit codes: configuration and input problems exit
with 2, numerical aborts during training exit with 3.
"""


class BackprojectionError(Exception):
    """Base class for every error raised by this package."""


class ActivationDomainError(BackprojectionError, ValueError):
    """A value handed to an inverse activation lies outside its feasible set."""


class LossDomainError(BackprojectionError, ValueError):
    """Loss arguments have mismatched shapes or leave the loss's domain."""


class ShapeMismatchError(BackprojectionError, ValueError):
    """A matrix does not have the shape the network expects."""


class KernelError(BackprojectionError, ValueError):
    """Kernel inputs are inconsistent or the kernel cannot be normalized."""


class DatasetError(BackprojectionError, ValueError):
    """Dataset generation, preprocessing, encoding or loading failed."""


class ConfigError(BackprojectionError, ValueError):
    """An experiment configuration is invalid."""


class UnsupportedInputError(BackprojectionError):
    """The requested operation does not support this input space."""


class TrainingAbortedError(BackprojectionError):
    """Training hit a non-finite loss or weight and was stopped."""

    def __init__(self, message: str, epoch: int, batch: int | None = None, layer: int | None = None):
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
        where = f"epoch {epoch}"
        if batch is not None:
            where += f", batch {batch}"
        if layer is not None:
            where += f", layer {layer}"
        super().__init__(f"{message} ({where})")
