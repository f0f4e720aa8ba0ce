"""Small symmetric positive-definite matrix helper."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["SpdMatrix"]


@dataclass(frozen=True)
class SpdMatrix:
    values: np.ndarray

    def __post_init__(self):
        m = np.array(self.values, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError("matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise DomainError("matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise DomainError("matrix must be positive definite")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "values", m)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @classmethod
    def identity(cls, d: int) -> "SpdMatrix":
        return cls(np.eye(d))

    @classmethod
    def diag(cls, entries) -> "SpdMatrix":
        return cls(np.diag(np.asarray(entries, dtype=np.float64)))

    def sqrt(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.values)
        return (v * np.sqrt(w)) @ v.T

    def inv_sqrt(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.values)
        return (v / np.sqrt(w)) @ v.T

    def proportional_to(self, other: "SpdMatrix", tol: float = 1e-10) -> bool:
        """Whether self / tr(self) equals other / tr(other) within tol."""
        a = self.values / np.trace(self.values)
        b = other.values / np.trace(other.values)
        return bool(np.abs(a - b).max() < tol)
