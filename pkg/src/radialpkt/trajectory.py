"""Golden-angle radial k-space geometry.

Spokes are full diameters through the k-space origin. Spoke ``i`` is rotated
by ``i * golden_angle`` degrees (mod 360) and carries ``n_readout`` samples on
the half-open radius grid ``k_j = (j - n_readout/2) * dk`` with
``dk = 2 * k_max / n_readout``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
GOLDEN_ANGLE_DEG = 180.0 / GOLDEN_RATIO  # 111.2461179...


@dataclass(frozen=True)
class TrajectoryConfig:
    """Readout length (including 2x oversampling) and angular increment.

    ``k_max`` defaults to ``n_readout / 4`` cycles/FOV, which puts the image
    grid Nyquist limit at ``n_readout / 2`` pixels.
    """

    n_readout: int = 128
    golden_angle_deg: float = GOLDEN_ANGLE_DEG
    k_max: float | None = None

    def __post_init__(self):
        if self.n_readout < 4 or self.n_readout % 2:
            raise ValueError(f"n_readout must be even and >= 4, got {self.n_readout}")
        if not 0.0 < self.golden_angle_deg < 360.0:
            raise ValueError(f"golden_angle_deg must lie in (0, 360), got {self.golden_angle_deg}")
        if self.k_max is None:
            object.__setattr__(self, "k_max", self.n_readout / 4.0)
        if self.k_max <= 0:
            raise ValueError("k_max must be positive")

    @property
    def image_size(self) -> int:
        return self.n_readout // 2

    @property
    def dk(self) -> float:
        return 2.0 * self.k_max / self.n_readout

    def radii(self) -> np.ndarray:
        """Signed sample radii of one spoke, DC at position ``n_readout // 2``."""
        return (np.arange(self.n_readout) - self.n_readout // 2) * self.dk


@dataclass(frozen=True)
class SpokeCoords:
    index: int
    angle_deg: float
    kx: np.ndarray
    ky: np.ndarray


def spoke_angle(index, cfg: TrajectoryConfig = TrajectoryConfig()):
    """Angle in degrees, in [0, 360), of the spoke acquired at ``index``.

    Accepts a scalar or an integer array.
    """
    idx = np.asarray(index)
    if np.any(idx < 0):
        raise ValueError("spoke index must be non-negative")
    # fmod on exact integer products keeps the recurrence exact mod 360
    ang = np.mod(idx.astype(np.float64) * cfg.golden_angle_deg, 360.0)
    ang = np.where(ang >= 360.0, 0.0, ang)
    return float(ang) if ang.ndim == 0 else ang


def spoke_coords(index: int, cfg: TrajectoryConfig = TrajectoryConfig()) -> SpokeCoords:
    theta = spoke_angle(index, cfg)
    k = cfg.radii()
    rad = math.radians(theta)
    return SpokeCoords(int(index), theta, k * math.cos(rad), k * math.sin(rad))


def trajectory_coords(indices, cfg: TrajectoryConfig = TrajectoryConfig()):
    """Stacked ``(kx, ky)`` arrays of shape ``(n_spokes, n_readout)``."""
    theta = np.radians(np.atleast_1d(spoke_angle(np.asarray(indices), cfg)))
    k = cfg.radii()
    return np.cos(theta)[:, None] * k, np.sin(theta)[:, None] * k


def nyquist_spoke_count(n_readout_nominal: int) -> int:
    """Spokes needed for Nyquist-complete coverage of ``n_readout_nominal`` points.

    ``n_readout_nominal`` excludes readout oversampling (256 for a 512-sample
    oversampled readout). Rounds up so the result never undersamples.
    """
    if n_readout_nominal < 2:
        raise ValueError("n_readout_nominal must be >= 2")
    return math.ceil(n_readout_nominal * math.pi / 2.0)


def max_angular_gap(n_spokes: int, cfg: TrajectoryConfig = TrajectoryConfig()) -> float:
    """Largest gap in degrees between adjacent spoke directions folded mod 180."""
    if n_spokes < 1:
        raise ValueError("n_spokes must be >= 1")
    folded = np.sort(np.mod(np.atleast_1d(spoke_angle(np.arange(n_spokes), cfg)), 180.0))
    gaps = np.diff(np.concatenate([folded, [folded[0] + 180.0]]))
    return float(gaps.max())
