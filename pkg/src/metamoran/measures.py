"""Atomic probability measures on the product space [0,1] x R^d."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from metamoran.kernels import Trait, as_trait

MASS_TOL = 1e-10


@dataclass(frozen=True)
class AtomicMeasure:
    """A probability measure given by weighted atoms ``(r, x, w)``.

    Duplicate ``(r, x)`` pairs are merged on construction and total mass
    must equal 1 within ``1e-10``.  Instances are immutable; build new ones
    with :meth:`from_atoms`.
    """

    atoms: Tuple[Tuple[float, Trait, float], ...]

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence]) -> "AtomicMeasure":
        merged: dict = {}
        order: list = []
        for r, x, w in atoms:
            r = float(r)
            x = as_trait(x)
            w = float(w)
            if w < 0:
                raise ValueError(f"atom weight must be >= 0, got {w}")
            key = (r, x)
            if key not in merged:
                merged[key] = 0.0
                order.append(key)
            merged[key] += w
        total = sum(merged.values())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"atom weights must sum to 1 within {MASS_TOL}, got {total!r}")
        return cls(atoms=tuple((r, x, merged[(r, x)]) for r, x in order))

    @property
    def total_weight(self) -> float:
        return sum(w for _, _, w in self.atoms)

    def positions(self) -> np.ndarray:
        return np.array([r for r, _, _ in self.atoms])

    def traits(self) -> list:
        return [x for _, x, _ in self.atoms]

    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.atoms])

    def sample(self, rng: np.random.Generator) -> Tuple[float, Trait]:
        """Draw one atom (r, x) with probability proportional to its weight."""
        u = rng.random() * self.total_weight
        acc = 0.0
        for r, x, w in self.atoms:
            acc += w
            if u < acc:
                return r, x
        r, x, _ = self.atoms[-1]
        return r, x

    def restrict_traits(self) -> "AtomicMeasure":
        """Marginal over traits (positions dropped, same trait merged)."""
        return AtomicMeasure.from_atoms((0.0, x, w) for _, x, w in self.atoms)
