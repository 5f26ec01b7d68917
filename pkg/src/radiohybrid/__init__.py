"""Radiomics-enhanced hybrid classification pipeline for brain-tumour MRI slices."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
