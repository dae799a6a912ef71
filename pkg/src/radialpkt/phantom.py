"""Synthetic complex phantoms and smooth multi-coil sensitivity maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORT_FRACTION = 0.95


@dataclass(frozen=True)
class PhantomSpec:
    """Random-ellipse phantom description.

    ``phase_mode`` is ``"smooth-polynomial"`` (random polynomial phase of
    degree ``phase_degree``) or ``"uniform-random"`` (one global phase drawn
    uniformly in ``[-phase_amplitude, phase_amplitude]``; amplitude 0 gives a
    real image).
    """

    n_ellipses: int = 8
    intensity_range: tuple[float, float] = (0.2, 1.0)
    phase_mode: str = "smooth-polynomial"
    rng_seed: int = 0
    size: int = 64
    phase_degree: int = 2
    phase_amplitude: float = np.pi / 2

    def __post_init__(self):
        if not 1 <= self.n_ellipses <= 20:
            raise ValueError(f"n_ellipses must be in [1, 20], got {self.n_ellipses}")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise ValueError("intensity_range must satisfy lo < hi")
        if self.phase_mode not in ("uniform-random", "smooth-polynomial"):
            raise ValueError(f"unknown phase_mode {self.phase_mode!r}")
        if self.size < 4:
            raise ValueError("size must be >= 4")


@dataclass
class CoilMaps:
    maps: np.ndarray  # (n_coils, size, size) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps)
        if self.maps.ndim != 3 or self.maps.shape[1] != self.maps.shape[2]:
            raise ValueError(f"coil maps must be (n_coils, N, N), got {self.maps.shape}")

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def size(self) -> int:
        return self.maps.shape[-1]


def image_grid(size: int):
    """Centered integer pixel coordinates ``(x, y)``, both in ``[-size/2, size/2)``.

    Rows index ``y`` and columns index ``x``.
    """
    c = np.arange(size) - size // 2
    return np.meshgrid(c, c, indexing="xy")


def support_mask(size: int) -> np.ndarray:
    x, y = image_grid(size)
    return np.hypot(x, y) <= SUPPORT_FRACTION * size / 2


def random_ellipses(spec: PhantomSpec) -> list[dict]:
    """Ellipse parameters in unit coordinates (support disc radius 0.95).

    The first ellipse is always additive so every phantom carries signal;
    later ones subtract with probability 1/3.
    """
    rng = np.random.default_rng([spec.rng_seed, 0])
    lo, hi = spec.intensity_range
    out = []
    for i in range(spec.n_ellipses):
        sign = 1.0 if i == 0 else rng.choice([-1.0, 1.0, 1.0])
        out.append(dict(
            cx=rng.uniform(-0.5, 0.5),
            cy=rng.uniform(-0.5, 0.5),
            a=rng.uniform(0.1, 0.6),
            b=rng.uniform(0.1, 0.6),
            rot=rng.uniform(0.0, np.pi),
            value=sign * rng.uniform(lo, hi),
        ))
    return out


def ellipse_mask(size: int, e: dict) -> np.ndarray:
    x, y = image_grid(size)
    u, v = x / (size / 2), y / (size / 2)
    c, s = np.cos(e["rot"]), np.sin(e["rot"])
    du, dv = u - e["cx"], v - e["cy"]
    return ((c * du + s * dv) / e["a"]) ** 2 + ((-s * du + c * dv) / e["b"]) ** 2 <= 1.0


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Complex phantom: superposed rotated ellipses with a random phase.

    The magnitude is clipped to the support disc of radius
    ``0.95 * size / 2``. Overlapping ellipses add; negative intensities carve
    holes. The magnitude is the absolute value of the sum.
    """
    n = spec.size
    mag = np.zeros((n, n))
    for e in random_ellipses(spec):
        mag[ellipse_mask(n, e)] += e["value"]
    mag = np.abs(mag)
    mag[~support_mask(n)] = 0.0

    rng = np.random.default_rng([spec.rng_seed, 1])
    x, y = image_grid(n)
    u, v = x / (n / 2), y / (n / 2)

    if spec.phase_mode == "uniform-random":
        phase = np.full((n, n), rng.uniform(-spec.phase_amplitude, spec.phase_amplitude))
    else:
        phase = np.zeros((n, n))
        for p in range(spec.phase_degree + 1):
            for q in range(spec.phase_degree + 1 - p):
                phase += rng.uniform(-1.0, 1.0) * u**p * v**q
        phase *= spec.phase_amplitude / max(spec.phase_degree, 1)
    return mag * np.exp(1j * phase)


def make_coil_maps(n_coils: int, size: int, rng_seed: int = 0, width: float = 0.9) -> CoilMaps:
    """Smooth complex Gaussian-bump coil sensitivities.

    Coil ``c`` peaks on a ring of radius ``0.7 * size / 2`` at angle
    ``2 pi c / n_coils + offset`` (``offset`` random unless ``n_coils == 1``),
    carries a smooth linear phase, and the set is normalized so that the
    root-sum-of-squares equals one on the support disc.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x, y = image_grid(size)
    u, v = x / (size / 2), y / (size / 2)
    if n_coils == 1:
        return CoilMaps(np.ones((1, size, size), dtype=np.complex128))
    # keep every peak inside its own quadrant-sized sector
    offset = np.pi / n_coils + rng.uniform(-0.25, 0.25) * np.pi / n_coils
    maps = []
    for c in range(n_coils):
        ang = offset + 2 * np.pi * c / n_coils
        px, py = 0.7 * np.cos(ang), 0.7 * np.sin(ang)
        bump = np.exp(-((u - px) ** 2 + (v - py) ** 2) / (2 * width**2))
        gx, gy, g0 = rng.uniform(-0.5, 0.5, size=3)
        maps.append(bump * np.exp(1j * (np.pi * g0 + gx * u + gy * v)))
    maps = np.stack(maps)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / rss)


def apply_coils(img: np.ndarray, coils: CoilMaps) -> np.ndarray:
    """Coil images ``maps * img`` with shape ``(n_coils, size, size)``."""
    if img.shape != coils.maps.shape[1:]:
        raise ValueError(f"image shape {img.shape} does not match coil maps {coils.maps.shape[1:]}")
    return coils.maps * img[None]


def root_sum_of_squares(coil_images: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=0))
