class InvalidArgument(ValueError):
    """Raised on malformed inputs: bad labels, shapes, lengths or bit strings."""


class InsufficientKeyMaterial(RuntimeError):
    """Fewer unchecked SIFT-SIFT atoms remain than compared bits."""

    def __init__(self, available: int, needed: int):
        super().__init__(f"only {available} key positions available, {needed} needed")
        self.available = available
        self.needed = needed
