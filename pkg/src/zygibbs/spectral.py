"""Fourier-side fields on the two-dimensional torus.

Frequencies are integer pairs n = (n1, n2); the Japanese bracket is
<n> = sqrt(1 + |n|^2).  A field with cutoff N stores its coefficients
exactly on the Euclidean ball {|n| <= N}, laid out in a dense
(2N+1) x (2N+1) complex array indexed by [n1 + N, n2 + N].

Integrals always use the normalized Lebesgue measure (2 pi)^{-2} dx, so
Parseval reads  ||f||_{L^2}^2 = sum_n |fhat(n)|^2  with no extra factor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import fft2, ifft2, next_fast_len

SNAPSHOT_MAGIC = b"ZYF1"
SNAPSHOT_VERSION = 1


def bracket(n) -> float:
    """<n> = sqrt(1 + n1^2 + n2^2)."""
    return float(np.sqrt(1.0 + n[0] * n[0] + n[1] * n[1]))


@lru_cache(maxsize=None)
def mode_grids(cutoff: int):
    """Integer coordinate arrays (n1, n2), each (2N+1, 2N+1), C-contiguous."""
    r = np.arange(-cutoff, cutoff + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    n1.setflags(write=False)
    n2.setflags(write=False)
    return n1, n2


@lru_cache(maxsize=None)
def ball_mask(cutoff: int) -> np.ndarray:
    """Boolean mask of the Euclidean ball {|n| <= N} on the dense square."""
    n1, n2 = mode_grids(cutoff)
    m = n1 * n1 + n2 * n2 <= cutoff * cutoff
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def bracket_sq_grid(cutoff: int) -> np.ndarray:
    """<n>^2 = 1 + |n|^2 on the dense square."""
    n1, n2 = mode_grids(cutoff)
    b = 1.0 + (n1 * n1 + n2 * n2).astype(float)
    b.setflags(write=False)
    return b


@lru_cache(maxsize=None)
def lex_modes(cutoff: int):
    """Modes of the ball in lexicographic (n1, n2) order, as an (k, 2) array.

    This order is the serialization order of snapshots and the draw order of
    per-mode random streams, so it must never change.
    """
    n1, n2 = mode_grids(cutoff)
    mask = ball_mask(cutoff)
    modes = np.stack([n1[mask], n2[mask]], axis=1)
    order = np.lexsort((modes[:, 1], modes[:, 0]))
    modes = modes[order]
    modes.setflags(write=False)
    return modes


@dataclass
class SpectralField:
    """Truncated Fourier series with cutoff N.

    coeffs[n1 + N, n2 + N] is the coefficient of e^{i n . x}; entries outside
    the ball {|n| <= N} are identically zero.  `hermitian` records whether the
    field is real-valued, i.e. coeffs(-n) = conj(coeffs(n)).
    """

    cutoff: int
    coeffs: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        d = 2 * self.cutoff + 1
        if self.coeffs.shape != (d, d):
            raise ValueError(f"coeff array must be {(d, d)}, got {self.coeffs.shape}")
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)
        off = ~ball_mask(self.cutoff)
        if np.any(self.coeffs[off] != 0):
            raise ValueError("coefficients outside the ball |n| <= N must be zero")

    def __getitem__(self, n) -> complex:
        n1, n2 = n
        if abs(n1) > self.cutoff or abs(n2) > self.cutoff:
            return 0.0 + 0.0j
        return complex(self.coeffs[n1 + self.cutoff, n2 + self.cutoff])

    def copy(self) -> "SpectralField":
        return SpectralField(self.cutoff, self.coeffs.copy(), self.hermitian)

    def l2_norm_sq(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def is_hermitian(self, tol: float = 0.0) -> bool:
        refl = np.conj(self.coeffs[::-1, ::-1])
        return bool(np.max(np.abs(self.coeffs - refl)) <= tol)


def zero_field(cutoff: int, hermitian: bool = False) -> SpectralField:
    d = 2 * cutoff + 1
    return SpectralField(cutoff, np.zeros((d, d), dtype=np.complex128), hermitian)


def field_from_modes(cutoff: int, entries: dict, hermitian: bool = False) -> SpectralField:
    """Field with the given {(n1, n2): coefficient} entries, zero elsewhere."""
    f = zero_field(cutoff, hermitian)
    for (n1, n2), c in entries.items():
        if n1 * n1 + n2 * n2 > cutoff * cutoff:
            raise ValueError(f"mode {(n1, n2)} outside ball of radius {cutoff}")
        f.coeffs[n1 + cutoff, n2 + cutoff] = c
    return f


def project_dirichlet(f: SpectralField, m: int) -> SpectralField:
    """Sharp Fourier projector: zero out every coefficient with |n| > m.

    No-op (a copy) when m >= cutoff; otherwise the result carries cutoff m.
    The projector is idempotent and self-adjoint for the l^2 pairing.
    """
    if m < 0:
        raise ValueError("projector cutoff must be nonnegative")
    if m >= f.cutoff:
        return f.copy()
    lo, hi = f.cutoff - m, f.cutoff + m + 1
    sub = f.coeffs[lo:hi, lo:hi] * ball_mask(m)
    return SpectralField(m, sub.astype(np.complex128), f.hermitian)


def littlewood_paley(f: SpectralField) -> dict:
    """Dyadic shell decomposition {Ndyad: piece}, summing exactly back to f.

    Shell 1 collects |n| <= 1; shell 2^k collects 2^{k-1} < |n| <= 2^k.
    Pieces keep the cutoff of f so that recombination is a plain array sum.
    """
    n1, n2 = mode_grids(f.cutoff)
    r2 = n1 * n1 + n2 * n2
    pieces = {}
    nd = 1
    lo2 = -1  # shell 1 is |n|^2 in (-1, 1]
    while True:
        hi2 = nd * nd
        sel = (r2 > lo2) & (r2 <= hi2)
        piece = np.where(sel, f.coeffs, 0.0).astype(np.complex128)
        pieces[nd] = SpectralField(f.cutoff, piece, f.hermitian)
        if nd >= f.cutoff:
            break
        lo2 = hi2
        nd *= 2
    return pieces


def _embed_modes(coeffs: np.ndarray, cutoff: int, g: int) -> np.ndarray:
    """Place the dense square into a (g, g) FFT array at bins n mod g."""
    out = np.zeros((g, g), dtype=np.complex128)
    idx = (np.arange(-cutoff, cutoff + 1)) % g
    out[np.ix_(idx, idx)] = coeffs
    return out


def _extract_modes(spec: np.ndarray, cutoff: int) -> np.ndarray:
    g = spec.shape[0]
    idx = (np.arange(-cutoff, cutoff + 1)) % g
    return spec[np.ix_(idx, idx)]


def grid_values(f: SpectralField, g: int) -> np.ndarray:
    """Values f(x_j) on the uniform grid x_j = 2 pi j / g, j in {0..g-1}^2.

    Requires g >= 2 cutoff + 2 so that distinct modes occupy distinct bins.
    """
    if g < 2 * f.cutoff + 2:
        raise ValueError(f"grid size {g} too small for cutoff {f.cutoff}")
    return ifft2(_embed_modes(f.coeffs, f.cutoff, g)) * (g * g)


def field_from_grid(values: np.ndarray, cutoff: int, hermitian: bool = False) -> SpectralField:
    """Recover coefficients on the ball from grid values (inverse of grid_values)."""
    g = values.shape[0]
    if g < 2 * cutoff + 2:
        raise ValueError(f"grid size {g} too small for cutoff {cutoff}")
    spec = fft2(values) / (g * g)
    coeffs = _extract_modes(spec, cutoff) * ball_mask(cutoff)
    return SpectralField(cutoff, coeffs.astype(np.complex128), hermitian)


def convolve_truncated(f: SpectralField, g: SpectralField) -> SpectralField:
    """Exact convolution (f * g)(n) = sum_{n1 + n2 = n} f(n1) g(n2).

    The result lives on the ball of radius cutoff(f) + cutoff(g).  Computed by
    a zero-padded FFT product, which is exact up to roundoff; tests pin it
    against the quartic-cost direct double loop.  Convolving two hermitian
    fields yields a hermitian field (the product of two real functions).
    """
    nout = f.cutoff + g.cutoff
    gsz = next_fast_len(2 * nout + 1)
    vf = ifft2(_embed_modes(f.coeffs, f.cutoff, gsz)) * (gsz * gsz)
    vg = ifft2(_embed_modes(g.coeffs, g.cutoff, gsz)) * (gsz * gsz)
    spec = fft2(vf * vg) / (gsz * gsz)
    coeffs = _extract_modes(spec, nout) * ball_mask(nout)
    return SpectralField(nout, coeffs.astype(np.complex128), f.hermitian and g.hermitian)


def sobolev_norm_sq(f: SpectralField, s: float) -> float:
    """Squared Sobolev norm sum_n <n>^{2s} |fhat(n)|^2."""
    w = bracket_sq_grid(f.cutoff) ** s
    return float(np.sum(w * np.abs(f.coeffs) ** 2))


def conjugate_reflect(f: SpectralField) -> SpectralField:
    """Coefficients of the complex conjugate field: n -> conj(fhat(-n))."""
    return SpectralField(f.cutoff, np.conj(f.coeffs[::-1, ::-1]), f.hermitian)


# ---------------------------------------------------------------------------
# binary snapshots
#
# Layout: magic "ZYF1" | version u16 | cutoff u32 | hermitian u8, followed by
# the coefficients on the ball in lexicographic (n1, n2) order, each as a
# little-endian float64 (re, im) pair.

_HEADER = struct.Struct("<4sHIB")


def save_field(f: SpectralField, path) -> None:
    modes = lex_modes(f.cutoff)
    flat = f.coeffs[modes[:, 0] + f.cutoff, modes[:, 1] + f.cutoff]
    payload = np.empty((flat.size, 2), dtype="<f8")
    payload[:, 0] = flat.real
    payload[:, 1] = flat.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, f.cutoff, int(f.hermitian)))
        fh.write(payload.tobytes())


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, cutoff, herm = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        modes = lex_modes(cutoff)
        raw = fh.read(modes.shape[0] * 16)
        if len(raw) != modes.shape[0] * 16:
            raise ValueError(f"{path}: truncated payload")
    payload = np.frombuffer(raw, dtype="<f8").reshape(-1, 2)
    f = zero_field(cutoff, hermitian=bool(herm))
    f.coeffs[modes[:, 0] + cutoff, modes[:, 1] + cutoff] = payload[:, 0] + 1j * payload[:, 1]
    return f
