"""Unknown system, input statistics and sample stream generation.

The regressors ``u(i)`` are independent Gaussian row vectors with covariance
``R_u = E[u^* u]`` and the observations follow ``d(i) = u(i) w_o + v(i)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError

HERMITIAN_TOL = 1e-12
NEGATIVE_EIG_TOL = 1e-10


class ValueField(str, enum.Enum):
    REAL = "real"
    COMPLEX = "complex"

    @classmethod
    def parse(cls, value) -> "ValueField":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        if key in ("real", "r"):
            return cls.REAL
        if key in ("complex", "complexcircular", "circular", "c"):
            return cls.COMPLEX
        raise ConfigError(f"unknown value field {value!r} (expected 'real' or 'complex')")


@dataclass(frozen=True)
class White:
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigError(f"white variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class ToeplitzAR1:
    rho: float
    variance: float = 1.0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"AR(1) correlation must lie in (-1, 1), got {self.rho}")
        if not self.variance > 0:
            raise ConfigError(f"AR(1) variance must be positive, got {self.variance}")


@dataclass(frozen=True, eq=False)
class Explicit:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"explicit covariance must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


CovarianceSpec = Union[White, ToeplitzAR1, Explicit]


def build_covariance(spec: CovarianceSpec, M: int) -> np.ndarray:
    """Materialise the M x M input covariance described by ``spec``.

    Raises
    ------
    ConfigError
        If ``M`` does not match an explicit matrix, or the matrix is not
        Hermitian positive semidefinite.
    """
    if M < 1:
        raise ConfigError(f"filter length must be >= 1, got {M}")
    if isinstance(spec, White):
        return spec.variance * np.eye(M)
    if isinstance(spec, ToeplitzAR1):
        k = np.arange(M)
        return spec.variance * spec.rho ** np.abs(k[:, None] - k[None, :])
    if isinstance(spec, Explicit):
        R = np.array(spec.matrix)
        if R.shape != (M, M):
            raise ConfigError(f"explicit covariance has shape {R.shape}, expected {(M, M)}")
        _check_hermitian(R)
        lam = np.linalg.eigvalsh(R)
        if lam[0] < -NEGATIVE_EIG_TOL:
            raise ConfigError(f"covariance is not positive semidefinite (min eigenvalue {lam[0]:.6g})")
        return R
    raise ConfigError(f"unsupported covariance spec {spec!r}")


def _check_hermitian(R):
    if not np.all(np.isfinite(R)):
        raise ConfigError("covariance has non-finite entries")
    if np.max(np.abs(R - R.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ConfigError("covariance is not Hermitian")


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Eigenstructure ``R = T diag(lam) T^*`` with eigenvalues descending."""

    T: np.ndarray
    lam: np.ndarray

    @property
    def beta_max(self) -> float:
        return float(self.lam[0])

    @property
    def M(self) -> int:
        return self.lam.shape[0]

    @property
    def R(self) -> np.ndarray:
        return (self.T * self.lam) @ self.T.conj().T

    def rotate(self, x):
        """Map a weight-space vector into the eigenbasis, ``T^* x``."""
        return self.T.conj().T @ x


def spectral_decompose(R) -> SpectralModel:
    """Eigendecomposition of a Hermitian PSD matrix.

    Eigenvalues are sorted in descending order (ties keep their original
    order) and each eigenvector is scaled so that its first nonzero component
    is real and nonnegative. Tiny negative eigenvalues from roundoff are
    clipped to zero.
    """
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {R.shape}")
    _check_hermitian(R)
    lam, T = np.linalg.eigh(R)
    if lam[0] < -NEGATIVE_EIG_TOL:
        raise ConfigError(f"matrix has negative eigenvalue {lam[0]:.6g}")
    order = np.argsort(-lam, kind="stable")
    lam = np.clip(lam[order], 0.0, None)
    T = T[:, order]
    for j in range(T.shape[1]):
        col = T[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size:
            pivot = col[nz[0]]
            T[:, j] = col * (np.abs(pivot) / pivot).conj()
    if not np.iscomplexobj(R):
        T = T.real
    T.setflags(write=False)
    lam.setflags(write=False)
    return SpectralModel(T=T, lam=lam)


@dataclass(frozen=True, eq=False)
class SystemModel:
    w_o: np.ndarray
    sigma_v2: float
    cov_spec: CovarianceSpec = field(default_factory=White)
    value_field: ValueField = ValueField.REAL

    def __post_init__(self):
        w = np.atleast_1d(np.array(self.w_o))
        if w.ndim != 1 or w.size < 1:
            raise ConfigError("w_o must be a nonempty vector")
        if not np.all(np.isfinite(w)):
            raise ConfigError("w_o has non-finite entries")
        if not self.sigma_v2 >= 0:
            raise ConfigError(f"noise variance must be nonnegative, got {self.sigma_v2}")
        vf = ValueField.parse(self.value_field)
        if vf is ValueField.REAL and np.iscomplexobj(w):
            if np.any(w.imag != 0):
                raise ConfigError("complex w_o requires the complex value field")
            w = w.real
        w = w.astype(complex if vf is ValueField.COMPLEX else float)
        w.setflags(write=False)
        object.__setattr__(self, "w_o", w)
        object.__setattr__(self, "value_field", vf)
        R = build_covariance(self.cov_spec, w.size)
        if vf is ValueField.REAL and np.iscomplexobj(R) and np.any(R.imag != 0):
            raise ConfigError("complex covariance requires the complex value field")
        spectral = spectral_decompose(R.real if vf is ValueField.REAL else R)
        object.__setattr__(self, "_spectral", spectral)

    @property
    def M(self) -> int:
        return self.w_o.size

    @property
    def is_complex(self) -> bool:
        return self.value_field is ValueField.COMPLEX

    @property
    def spectral(self) -> SpectralModel:
        return self._spectral

    @property
    def R(self) -> np.ndarray:
        return self._spectral.R


def unit_norm_w_o(M: int) -> np.ndarray:
    """Default unknown system: normalised all-ones vector."""
    return np.ones(M) / np.sqrt(M)


def snr_to_noise_variance(snr_db: float, w_o, R) -> float:
    """Noise variance giving ``snr_db`` for signal power ``w_o^* R w_o``."""
    w_o = np.asarray(w_o)
    power = float(np.real(w_o.conj() @ np.asarray(R) @ w_o))
    if not power > 0:
        raise ConfigError("signal power w_o^* R w_o is zero; SNR is undefined")
    return power / 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class Sample:
    u: np.ndarray
    d: complex | float
    v: complex | float


@dataclass(frozen=True, eq=False)
class Stream:
    """A block of samples stored column-wise: ``U`` is (N, M)."""

    U: np.ndarray
    d: np.ndarray
    v: np.ndarray

    def __len__(self):
        return self.d.shape[0]

    def __getitem__(self, i) -> Sample:
        return Sample(u=self.U[i], d=self.d[i], v=self.v[i])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]


def _draw_width(model: SystemModel) -> int:
    return 2 * model.M + 2 if model.is_complex else model.M + 1


def _samples_from_normals(model: SystemModel, Z: np.ndarray) -> Stream:
    M = model.M
    sp = model.spectral
    # rows of z have identity covariance; u = z diag(sqrt(lam)) T^* has covariance R
    coloring = np.sqrt(sp.lam)[:, None] * sp.T.conj().T
    if model.is_complex:
        z = (Z[:, :M] + 1j * Z[:, M:2 * M]) / np.sqrt(2.0)
        v = np.sqrt(model.sigma_v2 / 2.0) * (Z[:, 2 * M] + 1j * Z[:, 2 * M + 1])
    else:
        z = Z[:, :M]
        v = np.sqrt(model.sigma_v2) * Z[:, M]
    U = z @ coloring
    d = U @ model.w_o + v
    return Stream(U=U, d=d, v=v)


def iter_stream(model: SystemModel, seed: int, N: int, chunk: int = 65536) -> Iterator[Stream]:
    """Yield the stream of :func:`generate_stream` in consecutive blocks.

    Concatenating the blocks reproduces ``generate_stream(model, seed, N)``
    exactly, whatever the block size.
    """
    if N < 1:
        raise ConfigError(f"stream length must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    width = _draw_width(model)
    done = 0
    while done < N:
        n = min(chunk, N - done)
        yield _samples_from_normals(model, rng.standard_normal((n, width)))
        done += n


def generate_stream(model: SystemModel, seed: int, N: int) -> Stream:
    """Draw ``N`` independent samples; deterministic given ``seed``."""
    return next(iter_stream(model, seed, N, chunk=N))
