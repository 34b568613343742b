"""Exception types raised across the package."""


class StabilityError(ValueError):
    """Explicit scheme would not be stable (e.g. 4 d Lambda > 1)."""


class EllipticityError(ValueError):
    """Coefficient field violates lambda I <= a <= Lambda I."""


class BoxTooSmallError(ValueError):
    """Periodic box is too small for the requested horizon."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to converge."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class TailToleranceError(ValueError):
    """Truncated kernel sum would discard more than the allowed tail."""
