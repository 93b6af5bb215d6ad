"""Value types shared by the identifier, the follower model and the planner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StyleParams:
    """Driving-style weights of the competing vehicle.

    ``beta_long`` = (safety, efficiency, comfort) and ``beta_lat`` =
    (lane-change request, smoothness).
    """

    beta_long: tuple = (1.0, 1.0, 1.0)
    beta_lat: tuple = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "beta_long", tuple(float(b) for b in self.beta_long))
        object.__setattr__(self, "beta_lat", tuple(float(b) for b in self.beta_lat))
        if len(self.beta_long) != 3 or len(self.beta_lat) != 2:
            raise ValueError("expected 3 longitudinal and 2 lateral weights")
        if not np.all(np.isfinite(self.as_vector())):
            raise ValueError("style weights must be finite")

    def as_vector(self) -> np.ndarray:
        return np.array(self.beta_long + self.beta_lat)

    @classmethod
    def from_vector(cls, beta) -> "StyleParams":
        beta = np.asarray(beta, dtype=float)
        return cls(tuple(beta[:3]), tuple(beta[3:5]))

    def state_weights(self) -> np.ndarray:
        b1, b2, _, b4, b5 = self.as_vector()
        return np.diag([b1, 0.0, b2, b4, b5])

    def is_aggressive(self, threshold: float = 1.0) -> bool:
        return self.beta_long[1] > threshold


# Identified values reported for IDM-driven CVs of the two styles.
CONSERVATIVE_STYLE = StyleParams((1.0, 0.00139, 0.873), (1.0, 0.132))
AGGRESSIVE_STYLE = StyleParams((1.0, 3.540, 0.657), (1.0, 0.101))


@dataclass(frozen=True)
class CvDesired:
    delta_x_des: float = 25.0
    v_des: float = 18.0
    y_des: float = 0.0
    psi_des: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.delta_x_des, self.v_des, self.y_des, self.psi_des])):
            raise ValueError("desired targets must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_x_des, 0.0, self.v_des, self.y_des, self.psi_des])
