"""Exact Fourier machinery for radial k-space.

Conventions (fixed, since projections are fed to the network):

* image pixels sit on centered integer coordinates ``x, y`` in ``[-N/2, N/2)``;
  rows are ``y``, columns are ``x``;
* ``F(k) = sum_xy img(y, x) exp(-2 pi i (kx x + ky y) / N)`` with ``k`` in
  cycles/FOV, evaluated directly (no gridding);
* 1D spoke/projection transforms are centered and unitary: DC at index
  ``n // 2``, scaling ``1 / sqrt(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajectory import TrajectoryConfig, spoke_angle, trajectory_coords


@dataclass
class SpokeSet:
    """Chronologically ordered spokes of one slice.

    ``samples`` has shape ``(n_spokes, n_readout)`` or, for multi-coil data,
    ``(n_coils, n_spokes, n_readout)``. ``indices`` are the original
    chronological indices, so angles always follow ``spoke_angle(indices)``;
    ``relative_indices`` re-bases them to start at zero.
    """

    cfg: TrajectoryConfig
    indices: np.ndarray
    samples: np.ndarray
    scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.samples = np.asarray(self.samples)
        if self.indices.ndim != 1 or self.indices.size == 0:
            raise ValueError("a SpokeSet needs a non-empty 1D index array")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("spoke indices must be strictly increasing")
        if self.samples.shape[-2:] != (self.indices.size, self.cfg.n_readout):
            raise ValueError(
                f"samples shape {self.samples.shape} inconsistent with "
                f"{self.indices.size} spokes of {self.cfg.n_readout} samples"
            )

    @property
    def n_spokes(self) -> int:
        return self.indices.size

    @property
    def n_coils(self) -> int:
        return 1 if self.samples.ndim == 2 else self.samples.shape[0]

    @property
    def angles_deg(self) -> np.ndarray:
        return np.atleast_1d(spoke_angle(self.indices, self.cfg))

    @property
    def relative_indices(self) -> np.ndarray:
        return self.indices - self.indices[0]

    def coil(self, c: int) -> "SpokeSet":
        if self.samples.ndim == 2:
            if c != 0:
                raise IndexError(c)
            return self
        return SpokeSet(self.cfg, self.indices, self.samples[c], self.scale, dict(self.meta))

    def select(self, positions) -> "SpokeSet":
        """Subset by position along the spoke axis (keeps original indices)."""
        positions = np.asarray(positions)
        return SpokeSet(self.cfg, self.indices[positions], self.samples[..., positions, :],
                        self.scale, dict(self.meta))


def _phase_factors(kx: np.ndarray, ky: np.ndarray, n: int):
    # exp(-2 pi i k x / N) separates over x and y; shapes (n_samples, n)
    c = np.arange(n) - n // 2
    ex = np.exp(-2j * np.pi * np.outer(kx.ravel(), c) / n)
    ey = np.exp(-2j * np.pi * np.outer(ky.ravel(), c) / n)
    return ex, ey


def ndft_forward(img: np.ndarray, indices, cfg: TrajectoryConfig = TrajectoryConfig()) -> SpokeSet:
    """Direct nonuniform DFT of ``img`` onto the golden-angle spokes ``indices``.

    ``img`` is ``(N, N)`` or a coil stack ``(C, N, N)``; the returned samples
    follow the same leading-axis layout.
    """
    img = np.asarray(img, dtype=np.complex128)
    if img.shape[-1] != img.shape[-2]:
        raise ValueError(f"image must be square, got {img.shape}")
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if indices.size == 0:
        raise ValueError("no spoke indices given")
    n = img.shape[-1]
    kx, ky = trajectory_coords(indices, cfg)
    ex, ey = _phase_factors(kx, ky, n)
    stack = img.reshape(-1, n, n)
    # F_j = sum_y ey[j, y] sum_x img[y, x] ex[j, x]
    out = np.stack([np.einsum("jy,jy->j", ey, ex @ im.T) for im in stack])
    out = out.reshape(img.shape[:-2] + kx.shape)
    return SpokeSet(cfg, indices, out)


def density_weights(cfg: TrajectoryConfig, n_spokes: int) -> np.ndarray:
    """Ramp weights ``|k| dk`` per sample, DC weight ``dk**2 / 8``, summing to one."""
    k = np.abs(cfg.radii())
    w = k * cfg.dk
    w[k == 0] = cfg.dk**2 / 8.0
    w = np.tile(w, (n_spokes, 1))
    return w / w.sum()


def adjoint_recon(spokes: SpokeSet, size: int | None = None, compensate: bool = True) -> np.ndarray:
    """Adjoint NDFT of (optionally density-compensated) spoke samples.

    With ``compensate=False`` this is the exact conjugate transpose of
    :func:`ndft_forward`. Multi-coil input yields one image per coil.
    """
    cfg = spokes.cfg
    n = cfg.image_size if size is None else size
    kx, ky = trajectory_coords(spokes.indices, cfg)
    ex, ey = _phase_factors(kx, ky, n)
    data = spokes.samples.reshape(-1, kx.size)
    if compensate:
        data = data * density_weights(cfg, spokes.n_spokes).ravel()
    # img[y, x] = sum_j conj(ey[j, y]) d_j conj(ex[j, x])
    out = np.stack([(ey.conj().T * d) @ ex.conj() for d in data])
    return out.reshape(spokes.samples.shape[:-2] + (n, n))


def spoke_to_projection(samples: np.ndarray) -> np.ndarray:
    """Centered unitary inverse DFT along the last axis (spoke -> projection)."""
    return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(samples, axes=-1), axis=-1, norm="ortho"), axes=-1)


def projection_to_spoke(samples: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`spoke_to_projection`."""
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(samples, axes=-1), axis=-1, norm="ortho"), axes=-1)


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered 2D DFT matching the sign and scale of :func:`ndft_forward`."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1))), axes=(-2, -1))
