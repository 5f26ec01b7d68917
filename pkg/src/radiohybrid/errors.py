"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) so the CLI can emit a
machine-readable failure line.
"""


class RadioHybridError(Exception):
    @property
    def code(self) -> str:
        return type(self).__name__


# imgio
class UnsupportedFormat(RadioHybridError, ValueError):
    pass


class CorruptFile(RadioHybridError, ValueError):
    pass


class MissingClassDir(RadioHybridError, FileNotFoundError):
    pass


class EmptyClass(RadioHybridError, ValueError):
    pass


class DegenerateSplit(RadioHybridError, ValueError):
    pass


class IndexOutOfRange(RadioHybridError, IndexError):
    pass


class DimMismatch(RadioHybridError, ValueError):
    pass


class BadMagic(RadioHybridError, ValueError):
    pass


# preprocess / radiomics
class EmptyImage(RadioHybridError, ValueError):
    pass


class InvalidSigma(RadioHybridError, ValueError):
    pass


class ImageTooSmall(RadioHybridError, ValueError):
    pass


class InvalidParam(RadioHybridError, ValueError):
    pass


class InvalidLevels(RadioHybridError, ValueError):
    pass


class EmptyComponent(RadioHybridError, ValueError):
    pass


# fusionnet
class ShapeMismatch(RadioHybridError, ValueError):
    pass


class DegenerateBatch(RadioHybridError, ValueError):
    pass


class StaleCache(RadioHybridError, RuntimeError):
    pass


class EmptyDataset(RadioHybridError, ValueError):
    pass


# evaluation
class LengthMismatch(RadioHybridError, ValueError):
    pass


class EmptyMatrix(RadioHybridError, ValueError):
    pass
