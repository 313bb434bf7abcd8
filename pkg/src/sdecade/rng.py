"""Counter-based random substreams for reproducible parallel sampling.

Every Monte Carlo path draws from its own Philox generator keyed by
(master seed, stream index), so path nu's increments never depend on how
many other paths are sampled, in what order, or in what batch size.
Harness-level draws (dataset generation, optimizer perturbations, path
refinement) use reserved stream indices far above any path index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Reserved stream labels. Path sampling uses stream = path index, which in
# practice stays far below 2**61.
REFINE_STREAM = 1 << 61
DATASET_STREAM = 1 << 62
PERTURB_STREAM = (1 << 62) + 1
OPTIMIZER_STREAM = (1 << 62) + 2


@dataclass(frozen=True)
class SeedRecord:
    """Provenance of a sampled object: master seed plus substream index."""

    master: int
    stream: int = 0

    def __post_init__(self):
        for field_name in ("master", "stream"):
            value = getattr(self, field_name)
            if not (0 <= int(value) < 2 ** 64):
                raise ValueError(f"{field_name} must be a u64, got {value!r}")


def as_seed(seed) -> SeedRecord:
    """Coerce an int, (master, stream) pair, or SeedRecord to a SeedRecord."""
    if isinstance(seed, SeedRecord):
        return seed
    if isinstance(seed, (int, np.integer)):
        return SeedRecord(int(seed))
    master, stream = seed
    return SeedRecord(int(master), int(stream))


def substream(master, stream: int | None = None) -> np.random.Generator:
    """Independent generator for (master, stream).

    Philox is counter-based: distinct keys give statistically independent
    streams, and construction is cheap enough to hand every path its own.
    """
    record = as_seed(master if stream is None else (master, stream))
    key = np.array([record.master, record.stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(
    rng: np.random.Generator, n_steps: int, n_channels: int, dt: float
) -> np.ndarray:
    """Draw (n_steps, n_channels) increments of standard Brownian motion."""
    return rng.normal(0.0, np.sqrt(dt), size=(n_steps, n_channels))


def refine_increments(
    incs: np.ndarray, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """Levy midpoint refinement of Brownian increments onto the halved grid.

    Each increment over a step of length dt splits into two increments over
    dt/2 conditioned on the coarse value: dv/2 + xi and dv/2 - xi with
    xi ~ N(0, dt/4). Pairwise sums reproduce the coarse increments (up to
    one rounding), so convergence studies refine a single underlying path.
    """
    incs = np.asarray(incs, dtype=float)
    xi = rng.normal(0.0, 0.5 * np.sqrt(dt), size=incs.shape)
    out = np.empty((2 * incs.shape[0],) + incs.shape[1:], dtype=float)
    half = 0.5 * incs
    out[0::2] = half + xi
    out[1::2] = half - xi
    return out
