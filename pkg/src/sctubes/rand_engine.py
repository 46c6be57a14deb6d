"""Reproducible random sources for the Monte Carlo machinery.

Everything here is counter-based: a draw is a pure function of a
``(seed, replicate_index, substream)`` triple, never of how many draws
came before it. That is what lets the simulation engine run replicates
in any order, on any number of workers, sliced into any batch sizes,
and still produce bit-identical output.

The mapping onto numpy is ``Philox(key=[seed, substream],
counter=[0, 0, 0, replicate_index])``: the key separates logical
streams (substream 0 carries the Wishart noise, substream i >= 1 the
i-th group's normal matrix), while the counter jumps straight to a
replicate without generating its predecessors.

Two layers share that mapping:

* scalar ops (``normal_matrix``, ``chi_square``, ``wishart_identity``)
  draw one object from the generator at ``replicate_index``;
* block ops (``normal_block``, ``wishart_factor_block``) draw a whole
  batch from the generator at the batch's first replicate index. A
  normal block fills element by element, so a shorter block is a prefix
  of a longer one; a Wishart factor block draws all diagonals before
  all off-diagonals, so its content is pinned only for a fixed batch
  size. The engine therefore always draws full fixed-size blocks and
  slices off what it needs.

Within one generator the draw order is pinned and documented per
function; changing it would silently change every downstream result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegreesOfFreedomTooSmall

_U64 = 1 << 64


@dataclass(frozen=True)
class StreamKey:
    """Address of one random stream position.

    Parameters
    ----------
    seed : int
        Run-level seed, 0 <= seed < 2**64.
    replicate_index : int
        Counter position, i.e. which Monte Carlo replicate (or which
        block start) this draw belongs to.
    substream : int
        Logical channel within the run. The simulation engine uses 0
        for the shared Wishart draw and i for group i's normal matrix.
    """

    seed: int
    replicate_index: int = 0
    substream: int = 0

    def __post_init__(self):
        for name in ("seed", "replicate_index", "substream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise TypeError(f"{name} must be an integer, got {v!r}")
            if not 0 <= v < _U64:
                raise ValueError(f"{name} out of range [0, 2**64): {v}")

    def generator(self) -> np.random.Generator:
        bits = np.random.Philox(
            key=[self.seed, self.substream],
            counter=[0, 0, 0, self.replicate_index],
        )
        return np.random.Generator(bits)


def normal_matrix(rows: int, cols: int, key: StreamKey) -> np.ndarray:
    """Draw a rows x cols matrix of independent standard normals."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return key.generator().standard_normal((rows, cols))


def chi_square(dof: int, key: StreamKey) -> float:
    """Draw one chi-square variate with ``dof`` degrees of freedom.

    Uses a single gamma(dof/2) draw scaled by 2, so the cost does not
    grow with dof.
    """
    if not isinstance(dof, (int, np.integer)) or isinstance(dof, bool) or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof!r}")
    return float(key.generator().standard_gamma(dof / 2.0) * 2.0)


def _bartlett_factor(rng: np.random.Generator, m: int, nu: int,
                     count: int | None = None) -> np.ndarray:
    """Lower-triangular Bartlett factor(s) L with L L' ~ Wishart(I_m, nu).

    Draw order within the generator: first the m diagonal chi-square
    variates (as gammas, all at once), then the m(m-1)/2 strict
    lower-triangle normals, row-major.
    """
    shape = (m,) if count is None else (count, m)
    dofs = nu - np.arange(m)
    chi = rng.standard_gamma(np.broadcast_to(dofs / 2.0, shape)) * 2.0
    n = 1 if count is None else count
    L = np.zeros((n, m, m))
    L[:, np.arange(m), np.arange(m)] = np.sqrt(chi.reshape(n, m))
    if m > 1:
        ii, jj = np.tril_indices(m, -1)
        L[:, ii, jj] = rng.standard_normal((n, ii.size))
    return L[0] if count is None else L


def wishart_factor(m: int, nu: int, key: StreamKey) -> np.ndarray:
    """Lower-triangular L with L L' distributed Wishart(identity, nu)."""
    if m < 1:
        raise ValueError(f"dimension must be positive, got {m}")
    if nu < m:
        raise DegreesOfFreedomTooSmall(
            f"Wishart needs dof >= dimension, got dof={nu}, dimension={m}")
    return _bartlett_factor(key.generator(), m, nu)


def wishart_identity(m: int, nu: int, key: StreamKey) -> np.ndarray:
    """Draw an m x m Wishart(identity scale, nu dof) matrix."""
    L = wishart_factor(m, nu, key)
    return L @ L.T


# --- block layer -------------------------------------------------------
#
# Blocks draw `count` objects from the single generator at `key`; entry
# b is attributed to replicate key.replicate_index + b. Entry values are
# a pure function of (key, count), and for normals of key alone.

def normal_block(rows: int, cols: int, key: StreamKey, count: int) -> np.ndarray:
    """Draw ``count`` stacked rows x cols standard normal matrices."""
    if rows < 1 or cols < 1 or count < 1:
        raise ValueError("block dimensions must be positive")
    return key.generator().standard_normal((count, rows, cols))


def wishart_factor_block(m: int, nu: int, key: StreamKey, count: int) -> np.ndarray:
    """Draw ``count`` stacked Bartlett factors (see wishart_factor)."""
    if m < 1 or count < 1:
        raise ValueError("block dimensions must be positive")
    if nu < m:
        raise DegreesOfFreedomTooSmall(
            f"Wishart needs dof >= dimension, got dof={nu}, dimension={m}")
    return _bartlett_factor(key.generator(), m, nu, count=count)
