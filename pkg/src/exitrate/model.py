"""Multi-channel linear system with constant feedback gains.

The controlled system is

    dx = (A + sum_i B_i K_i) x dt + sqrt(eps) sigma(x) dW

with one gain matrix ``K_i`` (shape ``r_i x d``) per input channel.  Gains
are restricted to constant matrices so that gain search is finite
dimensional.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EllipticityError, NumericalError, ShapeError

TOL_HURWITZ = 1e-9


def _matrix(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if name.startswith("B") else a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiffusionField:
    """Diffusion coefficient sigma(x).

    ``kind="constant"``: sigma(x) = ``matrix``.
    ``kind="diagonal_affine"``: sigma(x) = diag(c_j + s_j |x_j|).
    """

    kind: str
    matrix: np.ndarray = None
    c: np.ndarray = None
    s: np.ndarray = None
    kappa: float = 1e-10

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.kind == "constant":
            m = _matrix(self.matrix, "sigma")
            if m.shape[0] != m.shape[1]:
                raise ShapeError(f"constant sigma must be square, got {m.shape}")
            object.__setattr__(self, "matrix", m)
            cert = float(np.linalg.eigvalsh(m @ m.T)[0])
            if cert < self.kappa:
                raise EllipticityError(np.zeros(m.shape[0]), cert, self.kappa)
            object.__setattr__(self, "_cov", m @ m.T)
            object.__setattr__(self, "_cert", cert)
        elif self.kind == "diagonal_affine":
            c = np.array(self.c, dtype=float).ravel()
            s = np.array(self.s, dtype=float).ravel()
            if c.shape != s.shape:
                raise ShapeError(f"c and s differ in length: {c.size} vs {s.size}")
            c.setflags(write=False)
            s.setflags(write=False)
            object.__setattr__(self, "c", c)
            object.__setattr__(self, "s", s)
        else:
            raise ValueError(f"unknown diffusion kind {self.kind!r}")

    @classmethod
    def constant(cls, matrix, kappa=1e-10):
        return cls("constant", matrix=matrix, kappa=kappa)

    @classmethod
    def diagonal_affine(cls, c, s, kappa=1e-10):
        return cls("diagonal_affine", c=c, s=s, kappa=kappa)

    @property
    def dim(self):
        return self.matrix.shape[0] if self.kind == "constant" else self.c.size

    @property
    def is_constant(self):
        return self.kind == "constant"

    def diagonal_values(self, x):
        """Diagonal of sigma at a batch of states ``x`` (n, d); affine kind only."""
        return self.c + self.s * np.abs(x)

    def covariance(self, x):
        """sigma sigma^T at a single state, without the ellipticity check."""
        if self.kind == "constant":
            return self._cov
        return np.diag(self.diagonal_values(np.asarray(x, dtype=float)) ** 2)


def diffusion_at(field, x):
    """Return ``(sigma(x), certificate)``; certificate = min eig of sigma sigma^T.

    Raises EllipticityError when the certificate is below ``field.kappa``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != field.dim:
        raise ShapeError(f"state has dimension {x.size}, diffusion field has {field.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    if field.kind == "constant":
        sig, cert = field.matrix, field._cert
    else:
        diag = field.diagonal_values(x)
        sig = np.diag(diag)
        cert = float(np.min(diag**2))
    if cert < field.kappa:
        raise EllipticityError(x, cert, field.kappa)
    return sig, cert


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    B: tuple
    sigma: DiffusionField

    def __post_init__(self):
        A = _matrix(self.A, "A")
        if A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ShapeError(f"A must be square and nonempty, got {A.shape}")
        B = tuple(_matrix(b, f"B[{i}]") for i, b in enumerate(self.B))
        if not B:
            raise ShapeError("at least one input channel is required")
        for i, b in enumerate(B):
            if b.shape[0] != A.shape[0]:
                raise ShapeError(f"B[{i}] has {b.shape[0]} rows, expected {A.shape[0]}")
        if self.sigma.dim != A.shape[0]:
            raise ShapeError(f"sigma has dimension {self.sigma.dim}, A has {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return len(self.B)

    @property
    def input_dims(self):
        return tuple(b.shape[1] for b in self.B)


@dataclass(frozen=True)
class GainTuple:
    K: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(_matrix(k, f"K[{i}]") for i, k in enumerate(self.K)))

    @classmethod
    def zeros(cls, model):
        return cls(tuple(np.zeros((r, model.d)) for r in model.input_dims))

    def flat(self):
        return np.concatenate([k.ravel() for k in self.K]) if self.K else np.zeros(0)

    @classmethod
    def from_flat(cls, model, values):
        values = np.asarray(values, dtype=float)
        out, pos = [], 0
        for r in model.input_dims:
            out.append(values[pos:pos + r * model.d].reshape(r, model.d))
            pos += r * model.d
        return cls(tuple(out))


def _check_gains(model, gains):
    if len(gains.K) != model.m:
        raise ShapeError(f"{len(gains.K)} gain matrices for {model.m} channels")
    for i, (b, k) in enumerate(zip(model.B, gains.K)):
        if k.shape != (b.shape[1], model.d):
            raise ShapeError(
                f"channel {i}: K has shape {k.shape}, expected {(b.shape[1], model.d)}"
            )


def closed_loop_matrix(model, gains):
    """A + sum_i B_i K_i, accumulated in channel order."""
    _check_gains(model, gains)
    M = model.A.copy()
    for b, k in zip(model.B, gains.K):
        M = M + b @ k
    M.setflags(write=False)
    return M


def closed_loop_drift(model, gains, x):
    """A x + sum_i B_i (K_i x), channels summed in ascending order."""
    _check_gains(model, gains)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise ShapeError(f"state has dimension {x.shape[-1]}, model has {model.d}")
    out = x @ model.A.T
    for b, k in zip(model.B, gains.K):
        out = out + (x @ k.T) @ b.T
    return out


def eigenvalues(matrix):
    """Eigenvalues of a small dense matrix (LAPACK Hessenberg-QR)."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc


def is_hurwitz(matrix, tol=TOL_HURWITZ):
    return bool(np.all(eigenvalues(matrix).real < -tol))
