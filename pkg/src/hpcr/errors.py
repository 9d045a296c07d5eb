"""Exception hierarchy shared across the package."""


class HpcrError(Exception):
    """Base class for all package errors."""


class NonFiniteValue(HpcrError):
    def __init__(self, row: int, col: int):
        super().__init__(f"non-finite value at row {row}, column {col}")
        self.row = row
        self.col = col


class DimensionMismatch(HpcrError):
    pass


class TooFewPoints(HpcrError):
    pass


class DegenerateData(HpcrError):
    pass


class CodeOutOfRange(HpcrError):
    pass


class CodeOverflow(HpcrError):
    pass


class BitsMismatch(HpcrError):
    pass


class CodebookMismatch(HpcrError):
    pass


class EmptyIndex(HpcrError):
    pass


class EmptyCorpus(HpcrError):
    pass


class BadMagic(HpcrError):
    def __init__(self, msg: str, offset: int = 0):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class VersionUnsupported(HpcrError):
    def __init__(self, msg: str, offset: int = 0):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class TruncatedFile(HpcrError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class ChecksumMismatch(HpcrError):
    def __init__(self, section: str):
        super().__init__(f"checksum mismatch in section '{section}'")
        self.section = section


class NoRelevantDocs(HpcrError):
    pass
