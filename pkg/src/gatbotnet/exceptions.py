"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class GatBotnetError(Exception):
    exit_code = 1


class ConfigError(GatBotnetError, ValueError):
    exit_code = 2


class DataError(GatBotnetError, ValueError):
    exit_code = 3


class DimensionError(DataError):
    """Array shapes do not line up."""


class DegenerateVectorError(DataError):
    def __init__(self, rows):
        self.rows = [int(r) for r in rows]
        shown = self.rows[:20]
        more = "" if len(self.rows) <= 20 else f" (+{len(self.rows) - 20} more)"
        super().__init__(
            f"cosine metric undefined for near-zero rows {shown}{more}"
        )


class IncompleteGridError(GatBotnetError, ValueError):
    exit_code = 2

    def __init__(self, missing):
        self.missing = list(missing)
        names = ", ".join(f"({r}, {k}, {m})" for r, k, m in self.missing)
        super().__init__(f"grid is missing configurations: {names}")


class NumericError(GatBotnetError, ArithmeticError):
    exit_code = 4
