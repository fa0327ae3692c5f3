"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not fit together."""


class EllipticityError(ValueError):
    """sigma(x) sigma(x)^T dropped below the ellipticity floor."""

    def __init__(self, x, eigenvalue, kappa):
        self.x = x
        self.eigenvalue = eigenvalue
        self.kappa = kappa
        super().__init__(
            f"ellipticity violated at x={list(map(float, x))}: "
            f"min eig(sigma sigma^T)={eigenvalue:.6g} < kappa={kappa:.6g}"
        )


class DomainError(ValueError):
    """Invalid or empty domain, or a point outside where it must be inside."""


class NumericalError(RuntimeError):
    """A numerical routine failed (blow-up, singular system, no convergence)."""
