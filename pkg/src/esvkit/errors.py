"""Exception hierarchy shared by every esvkit module."""


class EsvError(Exception):
    """Base class for all errors raised by esvkit."""


class ConfigError(EsvError):
    pass


# raster


class UnmappedCode(EsvError):
    def __init__(self, code, row, col):
        self.code, self.row, self.col = code, row, col
        super().__init__(f"class code {code} at row {row}, col {col} has no biome mapping")


class UndefinedChange(EsvError):
    def __init__(self, biome):
        self.biome = biome
        super().__init__(f"change for {biome!r} is undefined: start area is 0")


class ShapeMismatch(EsvError):
    pass


class SchemeMismatch(EsvError):
    pass


class RasterFormatError(EsvError):
    pass


# valuation / elasticity


class NegativeFactor(EsvError):
    pass


class DimensionMismatch(EsvError):
    pass


class ZeroBaseline(EsvError):
    pass


class NonpositivePeriod(EsvError):
    pass


class EmptyInput(EsvError):
    pass


class MixedEpochs(EsvError):
    pass


class ZeroTotalArea(EsvError):
    pass


class ZeroLci(EsvError):
    pass


# regression


class NonpositiveBandwidth(EsvError):
    pass


class TooFewPoints(EsvError):
    pass


class SingularDesign(EsvError):
    def __init__(self, location=None, message=None):
        self.location = location
        if message is None:
            message = "design matrix is rank deficient"
            if location is not None:
                message += f" at location {location}"
        super().__init__(message)


class DegenerateFactor(EsvError):
    pass


# neural network


class BadShape(EsvError):
    pass


class DegenerateFeature(EsvError):
    pass


class NonfiniteLoss(EsvError):
    pass


class ZeroWeights(EsvError):
    pass
