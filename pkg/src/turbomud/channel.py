"""Synchronous CDMA signal model.

One symbol interval of the chip-sampled channel is

    r = S A b + n,      n ~ N(0, sigma2 * I_N),

with unit-norm spreading columns in S, per-user amplitudes on the
diagonal of A and BPSK symbols b in {-1,+1}^K.  Matched filtering and
noise whitening give the two equivalent observations

    y    = S^T r = R A b + z,        R = S^T S,   z ~ N(0, sigma2 * R),
    ybar = F^{-T} y = F A b + nbar,  R = F^T F (F lower triangular),

where nbar is white again.  Detectors depend on the channel only
through (R, A, sigma2) and one of r / y / ybar.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, InvalidCorrelation, RankDeficient
from .linalg import factor_FtF

_UNIT_NORM_TOL = 1e-12
_RESAMPLE_CAP = 100


@dataclass(frozen=True)
class ChannelInstance:
    """Immutable channel description shared by all detectors.

    Attributes
    ----------
    N, K : spreading gain (chips per symbol) and number of users.
    S : (N, K) spreading matrix with unit-norm columns.
    a : (K,) positive amplitude vector; A = diag(a).
    sigma2 : noise variance per chip (0 allowed for noiseless tests).
    R : (K, K) signature correlation matrix S^T S (unit diagonal).
    F : (K, K) lower-triangular whitening factor with F^T F = R.
    """

    N: int
    K: int
    S: np.ndarray
    a: np.ndarray
    sigma2: float
    R: np.ndarray = field(repr=False, default=None)
    F: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if S.shape != (self.N, self.K):
            raise DimensionMismatch(f"S shape {S.shape} != ({self.N}, {self.K})")
        if a.shape != (self.K,):
            raise DimensionMismatch(f"amplitude length {a.shape} != {self.K}")
        if np.any(a <= 0):
            raise ValueError("amplitudes must be positive")
        if self.sigma2 < 0:
            raise ValueError("noise variance must be nonnegative")
        norms = np.linalg.norm(S, axis=0)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("spreading columns must be unit norm")
        R = S.T @ S
        try:
            F = factor_FtF(R)
        except Exception as exc:
            raise RankDeficient(f"S^T S not positive definite: {exc}") from None
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "F", F)

    @property
    def A(self):
        return np.diag(self.a)

    def with_params(self, a=None, sigma2=None):
        """Copy of this instance with replaced amplitudes / noise variance.

        Used by the joint-estimation loop, which detects with estimated
        parameters over the true spreading geometry.
        """
        return ChannelInstance(
            N=self.N,
            K=self.K,
            S=self.S,
            a=self.a if a is None else np.asarray(a, dtype=float),
            sigma2=self.sigma2 if sigma2 is None else float(sigma2),
        )


@dataclass(frozen=True)
class SymbolBlock:
    """T consecutive channel uses of BPSK symbols, shape (T, K)."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2:
            raise DimensionMismatch("symbol block must be a (T, K) array")
        if not np.all(np.abs(b) == 1.0):
            raise ValueError("symbols must be exactly +/-1")
        object.__setattr__(self, "b", b)

    @property
    def T(self):
        return self.b.shape[0]

    @property
    def K(self):
        return self.b.shape[1]


@dataclass(frozen=True)
class Observation:
    """Received block and its matched-filter / whitened transforms.

    r has shape (T, N); y = r S and ybar = y F^{-1}... row-wise, i.e.
    y_t = S^T r_t and ybar_t = F^{-T} y_t for each interval t.
    """

    r: np.ndarray
    y: np.ndarray
    ybar: np.ndarray


def make_equicorrelated(K, rho, amplitudes=None, sigma2=1.0):
    """Channel whose signature correlations are all equal to rho.

    R = (1 - rho) I + rho 11^T is positive definite for rho in [0, 1).
    The spreading matrix is realized as S = Q F with Q orthonormal
    (here Q = I, N = K); detectors see S only through R and S^T r, so
    any orthonormal Q is equivalent.
    """
    if not (0.0 <= rho < 1.0):
        raise InvalidCorrelation(f"rho = {rho} outside [0, 1)")
    R = np.full((K, K), float(rho))
    np.fill_diagonal(R, 1.0)
    S = factor_FtF(R)  # Q = I_K: S^T S = F^T F = R
    a = np.ones(K) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    return ChannelInstance(N=K, K=K, S=S, a=a, sigma2=float(sigma2))


def make_random_spreading(N, K, seed, amplitudes=None, sigma2=1.0):
    """Channel with random +/- 1/sqrt(N) chip sequences, deterministic in seed.

    Resamples internally (up to a cap) if the drawn S^T S is not
    positive definite, then raises RankDeficient.
    """
    if K > N:
        raise DimensionMismatch(f"K = {K} users exceed spreading gain N = {N}")
    rng = np.random.default_rng(seed)
    a = np.ones(K) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    for _ in range(_RESAMPLE_CAP):
        chips = rng.integers(0, 2, size=(N, K)) * 2 - 1
        S = chips / np.sqrt(N)
        try:
            return ChannelInstance(N=N, K=K, S=S, a=a, sigma2=float(sigma2))
        except RankDeficient:
            continue
    raise RankDeficient(
        f"no positive definite S^T S in {_RESAMPLE_CAP} draws (N={N}, K={K})"
    )


def whiten(ch, y):
    """Apply the whitening filter: ybar_t = F^{-T} y_t, rows of y."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return solve_triangular(ch.F.T, y.T, lower=False).T


def matched_filter(ch, r):
    """Matched-filter rows of r: y_t = S^T r_t."""
    return np.atleast_2d(np.asarray(r, dtype=float)) @ ch.S


def transmit(ch, blk, rng_seed):
    """Send a symbol block through the channel, deterministic in rng_seed.

    Noise is drawn per chip in the r domain; y and ybar are always
    derived from r so the sufficiency relations F^T ybar = y = S^T r
    hold exactly on every realization.
    """
    if blk.K != ch.K:
        raise DimensionMismatch(f"block has {blk.K} users, channel has {ch.K}")
    clean = blk.b * ch.a @ ch.S.T  # row t: (S A b_t)^T
    if ch.sigma2 > 0:
        rng = np.random.default_rng(rng_seed)
        r = clean + rng.standard_normal(clean.shape) * np.sqrt(ch.sigma2)
    else:
        r = clean
    y = matched_filter(ch, r)
    return Observation(r=r, y=y, ybar=whiten(ch, y))


def snr_db_to_sigma2(snr_db, amplitude=1.0):
    """Noise variance for a per-user SNR_k = A_k^2 / sigma2 given in dB."""
    return amplitude**2 / 10.0 ** (snr_db / 10.0)
