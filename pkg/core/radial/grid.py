from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from config.settings import settings_manager

MIN_R_MAX = 30.0
MIN_POINTS = 2000


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Log-uniform nodes r_j = r_min exp(j delta), j = 0..n_points-1"""
    r_min: float
    r_max: float
    n_points: int

    def __post_init__(self):
        if not self.r_min > 0.0:
            raise ValueError(f"r_min must be positive, got {self.r_min}")
        if self.r_max < MIN_R_MAX:
            raise ValueError(f"r_max must be at least {MIN_R_MAX}, got {self.r_max}")
        if self.n_points < MIN_POINTS:
            raise ValueError(f"n_points must be at least {MIN_POINTS}, got {self.n_points}")
        if self.r_max <= self.r_min:
            raise ValueError("r_max must exceed r_min")

    @cached_property
    def delta(self) -> float:
        return float(np.log(self.r_max / self.r_min) / (self.n_points - 1))

    @cached_property
    def r(self) -> np.ndarray:
        nodes = self.r_min * np.exp(self.delta * np.arange(self.n_points))
        nodes[-1] = self.r_max
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def weights(self) -> np.ndarray:
        """dr = r dx quadrature weights (the integrands vanish at both ends)"""
        w = self.delta * self.r
        w.setflags(write=False)
        return w

    @cached_property
    def kinetic(self) -> np.ndarray:
        """Matrix Numerov -d2/dx2 + 1/4 acting on v = u / sqrt(r).

        Below r_min the orbital follows u ~ r, so the ghost node is v_{-1} = v_0 exp(-delta / 2);
        v vanishes beyond r_max. With this operator, integral of u (-u'') dr = delta v^T kinetic v.
        """
        n = self.n_points
        ghost = np.exp(-0.5 * self.delta)
        laplacian = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
        laplacian[0, 0] += ghost
        # B = I + laplacian / 12, so B^-1 laplacian stays symmetric
        banded = np.zeros((3, n))
        banded[0, 1:] = 1.0 / 12.0
        banded[1, :] = 1.0 - 2.0 / 12.0
        banded[1, 0] += ghost / 12.0
        banded[2, :-1] = 1.0 / 12.0
        kin = -linalg.solve_banded((1, 1), banded, laplacian) / self.delta ** 2
        return 0.5 * (kin + kin.T) + 0.25 * np.eye(n)

    @cached_property
    def coulomb_kernel(self) -> np.ndarray:
        """delta / max(r_a, r_b)"""
        return self.delta / np.maximum.outer(self.r, self.r)

    def refined(self, factor: int = 2) -> "RadialGrid":
        return RadialGrid(self.r_min, self.r_max, factor * (self.n_points - 1) + 1)

    def to_dict(self) -> Dict[str, Any]:
        return {"r_min": self.r_min, "r_max": self.r_max, "n_points": self.n_points}


def log_grid(r_min: Optional[float] = None, r_max: Optional[float] = None,
             n_points: Optional[int] = None) -> RadialGrid:
    defaults = settings_manager.settings.radial
    return RadialGrid(float(r_min if r_min is not None else defaults.r_min),
                      float(r_max if r_max is not None else defaults.r_max),
                      int(n_points if n_points is not None else defaults.n_points))
