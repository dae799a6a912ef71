"""Sequential training data from radial acquisitions.

A slice's chronological spokes are cut into overlapping windows, each
window's spokes become projection tokens (real and imaginary halves
concatenated), and every window yields one training sample per output block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fourier import SpokeSet, projection_to_spoke, spoke_to_projection
from .trajectory import TrajectoryConfig

NORMALIZATION_PERCENTILE = 90.0
N_BLOCKS = 3


@dataclass(frozen=True)
class AugmentationPlan:
    """Sliding-window settings and the acquisition counts entering the data-size formula."""

    window: int = 400
    step: int = 200
    n_sub: int = 1
    n_reg: int = 1
    n_slc: int = 1
    n_coil: int = 1
    M: int = 400

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def window_count(M: int, window: int, step: int) -> int:
    """Number of full sliding windows over ``M`` spokes."""
    if window > M:
        raise ValueError(f"window {window} exceeds available spokes {M}")
    if step < 1:
        raise ValueError("step must be >= 1")
    return (M - window) // step + 1


def effective_dataset_size(plan: AugmentationPlan) -> int:
    """``n_sub * n_reg * n_slc * n_coil * floor(M / 400)``.

    The trailing factor is the fixed 400-spoke block count the original data
    budget uses; it is kept as written and does not follow ``plan.step``.
    """
    return plan.n_sub * plan.n_reg * plan.n_slc * plan.n_coil * (plan.M // 400)


def make_windows(spokes: SpokeSet, window: int, step: int) -> list[SpokeSet]:
    """Chronological windows ``[w*step, w*step + window)``.

    Original spoke indices (and therefore angles) are kept; positional
    encoding uses ``SpokeSet.relative_indices``.
    """
    if spokes.n_spokes < window:
        raise ValueError(f"need at least {window} spokes, got {spokes.n_spokes}")
    n = window_count(spokes.n_spokes, window, step)
    return [spokes.select(np.arange(w * step, w * step + window)) for w in range(n)]


@dataclass
class ProjectionSequence:
    """Token matrix ``(L, 2 * n_readout)`` plus the scale that was divided out."""

    tokens: np.ndarray
    start_index: int
    scale: float

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1 or self.tokens.shape[1] % 2:
            raise ValueError(f"tokens must be (L >= 1, even d_model), got {self.tokens.shape}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def d_model(self) -> int:
        return self.tokens.shape[1]

    def slice(self, start: int, stop: int) -> "ProjectionSequence":
        return ProjectionSequence(self.tokens[start:stop], self.start_index + start, self.scale)


@dataclass
class TrainSample:
    src: ProjectionSequence
    tgt: ProjectionSequence
    block: int


def projection_scale(spokes: SpokeSet) -> float:
    """90th percentile of projection magnitudes across a single-coil spoke set."""
    proj = spoke_to_projection(spokes.samples)
    s = float(np.percentile(np.abs(proj), NORMALIZATION_PERCENTILE))
    if not s > 0:
        raise ValueError("zero-signal slice: normalization scale is 0")
    return s


def tokenize(spokes: SpokeSet, scale: float | None = None) -> ProjectionSequence:
    """Projection tokens of a single-coil spoke set.

    If ``scale`` is omitted it is computed from ``spokes`` with
    :func:`projection_scale`.
    """
    if spokes.samples.ndim != 2:
        raise ValueError("tokenize expects a single-coil SpokeSet")
    if scale is None:
        scale = projection_scale(spokes)
    elif not scale > 0:
        raise ValueError("zero-signal slice: normalization scale is 0")
    proj = spoke_to_projection(spokes.samples) / scale
    return ProjectionSequence(np.concatenate([proj.real, proj.imag], axis=-1), int(spokes.indices[0]), float(scale))


def tokens_to_spokes(tokens: np.ndarray, scale: float) -> np.ndarray:
    half = tokens.shape[-1] // 2
    proj = (tokens[..., :half] + 1j * tokens[..., half:]) * scale
    return projection_to_spoke(proj)


def detokenize(seq: ProjectionSequence, cfg: TrajectoryConfig) -> SpokeSet:
    if seq.d_model != 2 * cfg.n_readout:
        raise ValueError(f"token width {seq.d_model} does not match n_readout {cfg.n_readout}")
    indices = seq.start_index + np.arange(len(seq))
    return SpokeSet(cfg, indices, tokens_to_spokes(seq.tokens, seq.scale), seq.scale)


def make_train_samples(seq: ProjectionSequence, L_in: int) -> list[TrainSample]:
    """Input block ``[0, L_in)`` paired with each output block ``[b*L_in, (b+1)*L_in)``."""
    if len(seq) != (N_BLOCKS + 1) * L_in:
        raise ValueError(f"sequence length {len(seq)} != {(N_BLOCKS + 1) * L_in}")
    src = seq.slice(0, L_in)
    return [TrainSample(src, seq.slice(b * L_in, (b + 1) * L_in), b) for b in range(1, N_BLOCKS + 1)]


def split_subjects(n_subjects: int, fractions=(0.75, 0.125, 0.125), seed: int = 0):
    """Disjoint train/val/test subject id arrays (each non-empty when possible)."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or fr.sum() <= 0:
        raise ValueError("fractions must be three non-negative numbers")
    fr = fr / fr.sum()
    perm = np.random.default_rng(seed).permutation(n_subjects)
    n_val = int(round(fr[1] * n_subjects))
    n_test = int(round(fr[2] * n_subjects))
    if fr[1] > 0:
        n_val = max(n_val, 1)
    if fr[2] > 0:
        n_test = max(n_test, 1)
    n_train = n_subjects - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{n_subjects} subjects are too few for split {tuple(fractions)}")
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    test = np.sort(perm[n_train + n_val:])
    return train, val, test


def window_sequences(spokes: SpokeSet, window: int, step: int, L_in: int):
    """Tokenize every coil of every window; scale comes from the acquired ``L_in`` spokes.

    Yields ``(coil, ProjectionSequence)``. Using only the acquired spokes for
    the scale makes it reproducible at inference time.
    """
    for win in make_windows(spokes, window, step):
        for c in range(win.n_coils):
            one = win.coil(c)
            scale = projection_scale(one.select(np.arange(L_in)))
            yield c, tokenize(one, scale)
