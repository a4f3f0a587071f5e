class ConfigError(ValueError):
    """Invalid scenario, grid or terminal input."""


class ParseError(ConfigError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
