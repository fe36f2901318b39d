"""Observation model: index multisets and the sampling projection.

Indices are flat positions in ``[0, n)``; for multi-dimensional signals they
follow numpy's row-major ordering over ``dims``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

WITH_REPLACEMENT = "with-replacement"
WITHOUT_REPLACEMENT = "without-replacement"
MODES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Multiset of observed flat indices.

    Attributes
    ----------
    n : int
        Ambient length.
    indices : ndarray of int
        Observed indices ``a_1..a_m`` in draw order; duplicates are allowed
        in with-replacement mode.
    mode : str
        ``"with-replacement"`` or ``"without-replacement"``.
    """

    n: int
    indices: np.ndarray
    mode: str = WITHOUT_REPLACEMENT

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        if self.mode not in MODES:
            raise SamplingError(f"unknown sampling mode {self.mode!r}")
        if self.n < 1 or idx.size < 1:
            raise SamplingError("need n >= 1 and at least one sample")
        if idx.min() < 0 or idx.max() >= self.n:
            raise SamplingError(f"indices must lie in [0, {self.n})")
        if self.mode == WITHOUT_REPLACEMENT and np.unique(idx).size != idx.size:
            raise SamplingError("duplicate indices in without-replacement sample")

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (
            self.n == other.n
            and self.mode == other.mode
            and np.array_equal(self.indices, other.indices)
        )

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @property
    def p(self) -> float:
        return self.m / self.n

    @cached_property
    def multiplicity(self) -> np.ndarray:
        """How many times each index in ``[0, n)`` was drawn."""
        c = np.bincount(self.indices, minlength=self.n).astype(float)
        c.setflags(write=False)
        return c

    @cached_property
    def support(self) -> np.ndarray:
        """Sorted distinct observed indices."""
        return np.unique(self.indices)

    def to_csv_line(self) -> str:
        return ",".join(str(int(a)) for a in self.indices)

    @classmethod
    def from_csv_line(cls, line: str, n: int, mode: str = WITHOUT_REPLACEMENT) -> "SampleSet":
        return cls(n, [int(tok) for tok in line.strip().split(",") if tok.strip()], mode)

    def to_dict(self) -> dict:
        return {"n": self.n, "mode": self.mode, "indices": self.indices.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "SampleSet":
        return cls(int(obj["n"]), obj["indices"], obj.get("mode", WITHOUT_REPLACEMENT))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SampleSet":
        return cls.from_dict(json.loads(text))


def draw(n: int, m: int, mode: str = WITHOUT_REPLACEMENT, seed=None) -> SampleSet:
    """Draw ``m`` indices uniformly from ``[0, n)``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if n < 1 or m < 1:
        raise SamplingError(f"need n, m >= 1, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    if mode == WITH_REPLACEMENT:
        idx = rng.integers(0, n, size=m)
    elif mode == WITHOUT_REPLACEMENT:
        if m > n:
            raise SamplingError(f"cannot draw {m} distinct indices from {n}")
        idx = rng.choice(n, size=m, replace=False)
    else:
        raise SamplingError(f"unknown sampling mode {mode!r}")
    return SampleSet(n, idx, mode)


def project(s: SampleSet, z) -> np.ndarray:
    """``P_Omega(z)``: entry ``a`` becomes ``multiplicity[a] * z[a]``."""
    z = np.asarray(z)
    if z.size != s.n:
        raise SamplingError(f"vector length {z.size} does not match n={s.n}")
    return s.multiplicity.reshape(z.shape) * z
