from typing import Optional


class RankingMatchError(Exception):
    """Base error for the engine"""


class ShapeError(RankingMatchError):
    def __init__(self, message: str, node: Optional[str] = None):
        self.node = node
        prefix = f"[{node}] " if node else ""
        super().__init__(f"{prefix}{message}")


class NonFiniteError(RankingMatchError):
    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        prefix = f"[{name}] " if name else ""
        super().__init__(f"{prefix}{message}")


class GraphError(RankingMatchError):
    def __init__(self, message: str, node: Optional[str] = None):
        self.node = node
        prefix = f"[{node}] " if node else ""
        super().__init__(f"{prefix}{message}")


class ConfigError(RankingMatchError):
    """Invalid experiment or process configuration"""


class FormatError(RankingMatchError):
    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        record_index: Optional[int] = None
    ):
        self.offset = offset
        self.record_index = record_index
        where = []
        if offset is not None:
            where.append(f"offset {offset}")
        if record_index is not None:
            where.append(f"record {record_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class AugmentError(RankingMatchError):
    """Bad augmentation request"""


class NaNAbortError(RankingMatchError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        self.detail = detail
        message = f"Loss became non-finite at step {step}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class ZeroNormRowError(RankingMatchError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero norm and cannot be L2-normalized")
