"""Ground-truth spectrally sparse signals, noise and error metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .hankel_core import HankelShape, d_scale

SUCCESS_RMSE = 1e-3


class InfeasibleSeparation(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralModel:
    """Sum of ``r`` (damped) complex exponentials in ``d`` dimensions.

    ``freqs`` and ``taus`` have shape ``(r, d)``; ``coeffs`` has shape ``(r,)``.
    """

    freqs: np.ndarray
    taus: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        freqs = np.atleast_2d(np.asarray(self.freqs, dtype=float))
        taus = np.broadcast_to(np.asarray(self.taus, dtype=float), freqs.shape).copy()
        coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if freqs.ndim != 2 or coeffs.size != freqs.shape[0] or freqs.shape[0] < 1:
            raise ValueError("need r >= 1 frequency tuples and r coefficients")
        if np.any(freqs < 0) or np.any(freqs >= 1):
            raise ValueError("frequencies must lie in [0, 1)")
        if np.any(taus < 0):
            raise ValueError("damping rates must be nonnegative")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def r(self) -> int:
        return self.freqs.shape[0]

    @property
    def d(self) -> int:
        return self.freqs.shape[1]

    def merge(self, other: "SpectralModel") -> "SpectralModel":
        return SpectralModel(
            np.vstack([self.freqs, other.freqs]),
            np.vstack([self.taus, other.taus]),
            np.concatenate([self.coeffs, other.coeffs]),
        )

    def to_dict(self) -> dict:
        return {
            "freqs": self.freqs.tolist(),
            "taus": self.taus.tolist(),
            "coeffs": [[c.real, c.imag] for c in self.coeffs],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SpectralModel":
        coeffs = [complex(re, im) for re, im in obj["coeffs"]]
        return cls(obj["freqs"], obj["taus"], coeffs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SpectralModel":
        return cls.from_dict(json.loads(text))


def synthesize(model: SpectralModel, dims: Sequence[int]) -> np.ndarray:
    """Sample the model on the integer grid ``[0, N_1) x ... x [0, N_d)``."""
    dims = tuple(int(N) for N in np.atleast_1d(dims))
    if len(dims) != model.d:
        raise ValueError(f"model is {model.d}-dimensional, dims={dims}")
    x = np.zeros(dims, dtype=complex)
    for k in range(model.r):
        term = np.asarray(model.coeffs[k])
        for ax, N in enumerate(dims):
            z = 2j * np.pi * model.freqs[k, ax] - model.taus[k, ax]
            term = np.multiply.outer(term, np.exp(z * np.arange(N)))
        x += term
    return x


def wraparound_dist(f: float, g: float) -> float:
    """Circular distance between two frequencies on ``[0, 1)``."""
    t = abs(f - g) % 1.0
    return min(t, 1.0 - t)


def _min_wrap_gap(f: np.ndarray) -> float:
    if f.size < 2:
        return 0.5
    s = np.sort(f)
    gaps = np.diff(np.concatenate([s, [s[0] + 1.0]]))
    return float(gaps.min())


def random_model(
    d: int,
    r: int,
    separation: Optional[Sequence[float]] = None,
    damping_ranges: Optional[Sequence[Sequence[float]]] = None,
    rng=None,
    max_attempts: int = 100_000,
) -> SpectralModel:
    """Draw a random model with the amplitude law ``1 + 10**(0.5 c)``.

    Parameters
    ----------
    separation : sequence of float, optional
        Per-axis minimum wrap-around distance between frequencies; enforced
        by rejection sampling.
    damping_ranges : sequence of (lo, hi), optional
        Per-axis range for ``1 / tau`` (uniform).  Undamped when omitted.
    """
    rng = np.random.default_rng(rng)
    if separation is not None:
        separation = np.broadcast_to(np.asarray(separation, dtype=float), (d,))
        if np.any(r * separation >= 1):
            raise InfeasibleSeparation(f"cannot place {r} frequencies {separation} apart")
    freqs = np.empty((r, d))
    for ax in range(d):
        for _ in range(max_attempts):
            f = rng.random(r)
            if separation is None or _min_wrap_gap(f) >= separation[ax]:
                break
        else:
            raise InfeasibleSeparation(
                f"no separated draw after {max_attempts} attempts on axis {ax}"
            )
        freqs[:, ax] = f
    amps = 1 + 10 ** (0.5 * rng.random(r))
    coeffs = amps * np.exp(2j * np.pi * rng.random(r))
    taus = np.zeros((r, d))
    if damping_ranges is not None:
        for ax, (lo, hi) in enumerate(damping_ranges):
            taus[:, ax] = 1.0 / rng.uniform(lo, hi, size=r)
    return SpectralModel(freqs, taus, coeffs)


def complex_gaussian(rng, size) -> np.ndarray:
    """i.i.d. complex normals with unit variance per entry."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)


def add_noise(observed, support, theta: float, rng=None) -> np.ndarray:
    """Add ``theta * ||P(x)|| * w / ||w||`` on the observed ``support``.

    ``observed`` is a flat (or shaped) signal; ``support`` holds the distinct
    observed flat indices (or a :class:`~hankel_pgd.sampling.SampleSet`).
    Entries off the support are left untouched.
    """
    if theta < 0:
        raise ValueError("noise level must be nonnegative")
    support = getattr(support, "support", support)
    out = np.array(observed, dtype=complex)
    flat = out.reshape(-1)
    if theta == 0:
        return out
    rng = np.random.default_rng(rng)
    w = complex_gaussian(rng, len(support))
    level = np.linalg.norm(flat[support])
    flat[support] += theta * level * w / np.linalg.norm(w)
    return out


def rmse(x_rec, x_true) -> float:
    """Relative error ``||x_rec - x|| / ||x||``."""
    x_true = np.asarray(x_true).reshape(-1)
    x_rec = np.asarray(x_rec).reshape(-1)
    if x_rec.size != x_true.size:
        raise ValueError("length mismatch")
    ref = np.linalg.norm(x_true)
    if ref == 0:
        raise ValueError("relative error undefined for a zero reference signal")
    return float(np.linalg.norm(x_rec - x_true) / ref)


def success(x_rec, x_true, threshold: float = SUCCESS_RMSE) -> bool:
    return rmse(x_rec, x_true) <= threshold


def snr_db(x_rec, x_true) -> float:
    """Output SNR ``-20 log10(rmse)``."""
    e = rmse(x_rec, x_true)
    return math.inf if e == 0 else -20.0 * math.log10(e)


def coherence_report(model: SpectralModel, shape: HankelShape, rank_tol: float = 1e-10) -> dict:
    """Incoherence and conditioning of the lifted ground truth.

    Builds ``G y`` densely (diagnostic sizes only) and reports
    ``mu0 = n / (c_s r) * max(||U||_{2,inf}^2, ||V||_{2,inf}^2)``.
    """
    from .reference_oracle import dense_g

    x = synthesize(model, shape.dims)
    y = d_scale(shape, x.reshape(-1), "forward")
    U, s, Vh = np.linalg.svd(dense_g(shape, y), full_matrices=False)
    r = model.r
    U, V = U[:, :r], Vh[:r].conj().T
    row = max((np.abs(U) ** 2).sum(1).max(), (np.abs(V) ** 2).sum(1).max())
    sigma_r = float(s[r - 1])
    deficient = sigma_r <= rank_tol * s[0]
    return {
        "mu0": float(shape.n / (shape.c_s * r) * row),
        "sigma1": float(s[0]),
        "sigma_r": sigma_r,
        "kappa": math.inf if sigma_r == 0 else float(s[0] / sigma_r),
        "rank_deficient": bool(deficient),
    }
