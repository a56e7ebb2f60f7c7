"""Gaussian random fields on the torus and their Wick-ordered functionals.

Sampling conventions (the reference free-field ensemble):

* Schrodinger component u: uhat(n) = g_n / <n> for every |n| <= N including
  n = 0, with Re g_n, Im g_n independent N(0, 1/2), so E|uhat(n)|^2 = <n>^-2.
* Wave pair (w0, w1): w0hat(n) = h_n <n>^{gamma-1}, w1hat(n) = l_n <n>^{gamma},
  where h_0, l_0 are real N(0, 1) and for n != 0 the coefficients are drawn on
  the half lattice (Z x Z_+) u (Z_+ x {0}) with Re, Im independent N(0, 1/2)
  and extended by h_{-n} = conj(h_n), so the fields are real-valued.

Randomness is counter-based and splittable: every draw is a pure function of
(seed, stream, kind, member index), generated by Philox keyed per fixed-size
block of member indices.  Identical keys give bit-identical fields on every
platform and under any chunking of batch queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral import (
    SpectralField,
    ball_mask,
    bracket_sq_grid,
    convolve_truncated,
    conjugate_reflect,
    grid_values,
    mode_grids,
    project_dirichlet,
)

# Fixed block size for member-indexed draws.  Part of the reproducibility
# contract: changing it changes every sampled field.
BLOCK = 128
_KEY_DOMAIN = 0x5A59_4642  # domain separator for this package's streams

KIND_SCHRODINGER = 0
KIND_WAVE_POSITION = 1
KIND_WAVE_VELOCITY = 2
KIND_ESTIMATE_TRIALS = 3  # per-trial draws in the estimates lab


def sigma_n(cutoff: int) -> float:
    """sigma_N = sum_{|n| <= N} <n>^{-2}, the Wick constant (~ 2 pi log N)."""
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    total = 0.0
    # row-chunked so N = 4096 stays within memory and under a second
    n2 = np.arange(-cutoff, cutoff + 1, dtype=np.int64)
    for lo in range(-cutoff, cutoff + 1, 512):
        rows = np.arange(lo, min(lo + 512, cutoff + 1), dtype=np.int64)
        r2 = rows[:, None] ** 2 + n2[None, :] ** 2
        sel = r2 <= cutoff * cutoff
        total += float(np.sum(1.0 / (1.0 + r2[sel])))
    return total


@lru_cache(maxsize=None)
def _half_lattice_mask(cutoff: int) -> np.ndarray:
    """Mask of the half lattice (Z x Z_+) u (Z_+ x {0}) on the dense square."""
    n1, n2 = mode_grids(cutoff)
    m = (n2 >= 1) | ((n2 == 0) & (n1 >= 1))
    m.setflags(write=False)
    return m


def _block_normals(seed: int, stream: int, kind: int, block: int, d: int) -> np.ndarray:
    """N(0,1) draws of shape (BLOCK, 2, d, d) for one block of member indices."""
    ss = np.random.SeedSequence([_KEY_DOMAIN, int(seed), int(stream), int(kind), int(block)])
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.normal(size=(BLOCK, 2, d, d))


def _complex_blocks(seed, stream, kind, cutoff, start, count):
    """Standard complex draws (E|z|^2 = 1) for member indices [start, start+count)."""
    d = 2 * cutoff + 1
    out = np.empty((count, d, d), dtype=np.complex128)
    pos = 0
    first, last = start // BLOCK, (start + count - 1) // BLOCK
    for b in range(first, last + 1):
        raw = _block_normals(seed, stream, kind, b, d)
        lo = max(start, b * BLOCK) - b * BLOCK
        hi = min(start + count, (b + 1) * BLOCK) - b * BLOCK
        z = (raw[lo:hi, 0] + 1j * raw[lo:hi, 1]) * np.sqrt(0.5)
        out[pos:pos + (hi - lo)] = z
        pos += hi - lo
    return out


def _hermitianize(z: np.ndarray, cutoff: int) -> np.ndarray:
    """Keep the half-lattice part of z, reflect conjugates, make the zero mode
    real N(0,1) by rescaling the real part of the drawn zero coefficient."""
    half = _half_lattice_mask(cutoff)
    h = np.where(half, z, 0.0)
    h = h + np.conj(h[..., ::-1, ::-1])
    # zero mode: z real part has variance 1/2, rescale to variance 1
    h[..., cutoff, cutoff] = z[..., cutoff, cutoff].real * np.sqrt(2.0)
    return h


@dataclass(frozen=True)
class GaussianSampler:
    """Deterministic field sampler keyed by (seed, stream).

    Distinct streams are statistically independent; the field for member
    index i is a pure function of (seed, stream, i), so batch queries may be
    chunked arbitrarily without changing any bit of the output.
    """

    seed: int
    stream: int = 0

    def schrodinger_batch(self, cutoff: int, start: int, count: int) -> np.ndarray:
        """Complex free-field coefficients, shape (count, 2N+1, 2N+1)."""
        z = _complex_blocks(self.seed, self.stream, KIND_SCHRODINGER, cutoff, start, count)
        scale = ball_mask(cutoff) / np.sqrt(bracket_sq_grid(cutoff))
        return z * scale

    def wave_batch(self, cutoff: int, gamma: float, start: int, count: int,
                   velocity: bool = False) -> np.ndarray:
        """Real (hermitian) wave coefficients: position weight <n>^{gamma-1},
        velocity weight <n>^{gamma}."""
        _check_gamma(gamma)
        kind = KIND_WAVE_VELOCITY if velocity else KIND_WAVE_POSITION
        z = _complex_blocks(self.seed, self.stream, kind, cutoff, start, count)
        h = _hermitianize(z, cutoff)
        expo = 0.5 * gamma if velocity else 0.5 * (gamma - 1.0)
        scale = ball_mask(cutoff) * bracket_sq_grid(cutoff) ** expo
        return h * scale

    def schrodinger(self, cutoff: int, index: int = 0) -> SpectralField:
        coeffs = self.schrodinger_batch(cutoff, index, 1)[0]
        return SpectralField(cutoff, coeffs, hermitian=False)

    def wave_pair(self, cutoff: int, gamma: float, index: int = 0):
        w0 = self.wave_batch(cutoff, gamma, index, 1, velocity=False)[0]
        w1 = self.wave_batch(cutoff, gamma, index, 1, velocity=True)[0]
        return (SpectralField(cutoff, w0, hermitian=True),
                SpectralField(cutoff, w1, hermitian=True))


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")


def sample_schrodinger(sampler: GaussianSampler, cutoff: int, index: int = 0) -> SpectralField:
    return sampler.schrodinger(cutoff, index)


def sample_wave_pair(sampler: GaussianSampler, cutoff: int, gamma: float, index: int = 0):
    return sampler.wave_pair(cutoff, gamma, index)


# ---------------------------------------------------------------------------
# Wick functionals


def wick_square(u: SpectralField, cutoff: int) -> SpectralField:
    """Wick-ordered squared modulus :|u_N|^2: as a field with cutoff 2N.

    Off-zero coefficients are sum_{n1 - n2 = n} uhat(n1) conj(uhat(n2)) over
    the ball |n_j| <= N; the zero mode is sum |uhat(n)|^2 - sigma_N.
    """
    un = project_dirichlet(u, cutoff)
    sq = convolve_truncated(un, conjugate_reflect(un))
    sq.coeffs[sq.cutoff, sq.cutoff] = un.l2_norm_sq() - sigma_n(cutoff)
    sq.hermitian = True
    return sq


def wick_mass(u: SpectralField, cutoff: int) -> float:
    """Integral of :|u_N|^2: over the torus = sum_{|n| <= N}|uhat|^2 - sigma_N."""
    return project_dirichlet(u, cutoff).l2_norm_sq() - sigma_n(cutoff)


def potential_qn(u: SpectralField, w: SpectralField, cutoff: int) -> float:
    """Coupling potential Q_N(u, w) = 1/2 integral of :|u_N|^2: w dx.

    Evaluated spectrally as 1/2 sum_n wick(n) conj(what(n)) over |n| <= cutoff(w).
    The wave field must be real (hermitian coefficients).
    """
    if not w.is_hermitian(tol=1e-12):
        raise ValueError("wave field must have hermitian coefficients")
    ws = wick_square(u, cutoff)
    m = min(ws.cutoff, w.cutoff)
    a = project_dirichlet(ws, m)
    b = project_dirichlet(w, m)
    val = 0.5 * np.sum(a.coeffs * np.conj(b.coeffs))
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError("coupling potential must be real for real wave fields")
    return float(val.real)


def neg_sobolev_sup_norm(f: SpectralField, eps: float, grid: int | None = None) -> float:
    """Sup-norm surrogate for a negative-regularity field: smooth by the
    multiplier (1 + |n|^2)^{-eps}, then take the max modulus on a grid.

    Default grid is 4 * cutoff, fine enough that the max is stable.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    g = 4 * f.cutoff if grid is None else grid
    smoothed = SpectralField(f.cutoff, f.coeffs * bracket_sq_grid(f.cutoff) ** (-eps), f.hermitian)
    return float(np.max(np.abs(grid_values(smoothed, g))))
