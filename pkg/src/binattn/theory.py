"""Checks of the sign-correlation (arcsine) law and the dot-product geometry.

For zero-mean jointly Gaussian ``q, k`` with correlation matrix ``C``
between their coordinates, ``E[sign(q) sign(k)^T] = (2/pi) arcsin(C)``.

Randomness: every Monte Carlo call takes an integer seed. Draws are made in
chunks of ``CHUNK`` samples; chunk ``c`` uses the generator
``PCG64(SeedSequence(seed).spawn(n_chunks)[c])``. Chunks are reduced in
index order, so results are bit-identical whatever the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .bitops import hamming_distance, pack_signs, xnor_popcount_dot
from .errors import NumericalError, RangeError, ShapeError, ValidationError
from .tensor_io import as_float64

CHUNK = 1 << 16
JITTER = 1e-12


def arcsine_correlation(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise RangeError("correlations must lie in [-1, 1]")
    return (2.0 / math.pi) * np.arcsin(np.clip(c, -1.0, 1.0))


@dataclass(frozen=True)
class JointGaussianSpec:
    """Covariance of ``z = (q, k)`` with ``q, k`` both ``d``-dimensional."""

    sigma: np.ndarray
    d: int = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
            raise ShapeError(f"covariance must be 2d x 2d, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("covariance must be finite")
        if np.abs(s - s.T).max() > 1e-12:
            raise ValidationError("covariance must be symmetric")
        if np.linalg.eigvalsh(s).min() < -1e-10:
            raise ValidationError("covariance must be positive semidefinite")
        if np.any(np.diag(s) <= 0):
            raise ValidationError("every coordinate needs positive variance")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "d", s.shape[0] // 2)

    @classmethod
    def from_blocks(cls, qq, qk, kk) -> "JointGaussianSpec":
        qq, qk, kk = (np.asarray(x, dtype=np.float64) for x in (qq, qk, kk))
        return cls(np.block([[qq, qk], [qk.T, kk]]))

    @classmethod
    def correlated(cls, d: int, rho: float) -> "JointGaussianSpec":
        """Unit variances, ``corr(q_i, k_i) = rho``, everything else independent."""
        eye = np.eye(d)
        return cls.from_blocks(eye, rho * eye, eye)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, unit_diagonal: bool = False) -> "JointGaussianSpec":
        a = rng.standard_normal((2 * d, 2 * d))
        s = a @ a.T / (2 * d)
        if unit_diagonal:
            r = 1.0 / np.sqrt(np.diag(s))
            s = s * r[:, None] * r[None, :]
        return cls((s + s.T) / 2)

    @property
    def correlation(self) -> np.ndarray:
        """``D_q^{-1/2} Sigma_qk D_k^{-1/2}``."""
        d = self.d
        sq = np.sqrt(np.diag(self.sigma)[:d])
        sk = np.sqrt(np.diag(self.sigma)[d:])
        c = self.sigma[:d, d:] / sq[:, None] / sk[None, :]
        return np.clip(c, -1.0, 1.0)

    def factor(self) -> np.ndarray:
        """Lower Cholesky factor, retrying once with ``JITTER * I`` added."""
        try:
            return np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            pass
        try:
            return np.linalg.cholesky(self.sigma + JITTER * np.eye(2 * self.d))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance is not positive semidefinite") from exc


def _chunk_sizes(samples: int) -> list[int]:
    full, rest = divmod(samples, CHUNK)
    return [CHUNK] * full + ([rest] if rest else [])


def _map_chunks(fn, samples: int, seed: int, workers: int | None):
    sizes = _chunk_sizes(samples)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seqs))
    workers = _backend.get_threads() if workers is None else max(1, workers)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    else:
        parts = [fn(*job) for job in jobs]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def monte_carlo_sign_covariance(
    spec: JointGaussianSpec, samples: int, seed: int, workers: int | None = None
) -> np.ndarray:
    """Empirical ``mean(sign(q) sign(k)^T)`` over ``samples`` draws of ``z``."""
    if samples < 1:
        raise ValidationError("need at least one sample")
    d = spec.d
    factor = spec.factor()

    def chunk(m, seq):
        rng = np.random.Generator(np.random.PCG64(seq))
        z = rng.standard_normal((m, 2 * d)) @ factor.T
        sg = np.where(z >= 0.0, 1.0, -1.0)
        return sg[:, :d].T @ sg[:, d:]

    return _map_chunks(chunk, samples, seed, workers) / samples


def empirical_covariance(spec: JointGaussianSpec, samples: int, seed: int, workers: int | None = None) -> np.ndarray:
    """Mean of ``z z^T``, a direct check of the sampler itself."""
    factor = spec.factor()

    def chunk(m, seq):
        rng = np.random.Generator(np.random.PCG64(seq))
        z = rng.standard_normal((m, 2 * spec.d)) @ factor.T
        return z.T @ z

    return _map_chunks(chunk, samples, seed, workers) / samples


@dataclass(frozen=True)
class GeometryReport:
    euclidean: float
    cosine: float
    hamming: float
    binary_cosine: float
    trials: int
    skipped: int


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    # 2*atan2(|u-v|, |u+v|) is accurate for unit vectors at every angle.
    return 2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v))


def verify_geometry_identities(q, k, trials: int, seed: int) -> GeometryReport:
    """Largest deviations, over random (i, j) pairs, of

    * ``|q - k|^2 = |q|^2 + |k|^2 - 2 q.k`` (relative to ``|q|^2 + |k|^2``)
    * ``q.k / (|q||k|) = cos(angle(q, k))``
    * ``s.t = d - 2 hamming(s, t)`` for the packed signs
    * ``s.t = d cos(angle(s, t))``

    Pairs with a zero-norm row are skipped for the cosine check and counted.
    """
    q, k = as_float64(q), as_float64(k)
    if q.shape[1] != k.shape[1]:
        raise ShapeError("Q and K need the same width")
    d = q.shape[1]
    rng = np.random.default_rng(seed)
    sb, tb = pack_signs(q), pack_signs(k)
    sd = np.where(q >= 0, 1.0, -1.0)
    td = np.where(k >= 0, 1.0, -1.0)
    dev = dict(euclidean=0.0, cosine=0.0, hamming=0.0, binary_cosine=0.0)
    skipped = 0
    for _ in range(trials):
        i = int(rng.integers(q.shape[0]))
        j = int(rng.integers(k.shape[0]))
        a, b = q[i], k[j]
        lhs = float(np.sum((a - b) ** 2))
        rhs = float(a @ a + b @ b - 2 * (a @ b))
        scale = max(float(a @ a + b @ b), np.finfo(float).tiny)
        dev["euclidean"] = max(dev["euclidean"], abs(lhs - rhs) / scale)

        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            skipped += 1
        else:
            u, v = a / na, b / nb
            dev["cosine"] = max(dev["cosine"], abs(float(u @ v) - math.cos(_angle(u, v))))

        wi, wj = sb.words[i], tb.words[j]
        dot = xnor_popcount_dot(wi, wj, d)
        dev["hamming"] = max(dev["hamming"], abs(dot - (d - 2 * hamming_distance(wi, wj, d))))
        dense = float(sd[i] @ td[j])
        dev["hamming"] = max(dev["hamming"], abs(dot - dense))
        ang = _angle(sd[i] / math.sqrt(d), td[j] / math.sqrt(d))
        dev["binary_cosine"] = max(dev["binary_cosine"], abs(dot - d * math.cos(ang)) / d)
    return GeometryReport(trials=trials, skipped=skipped, **dev)
