"""Desk-scale verification of lattice counting and tensor-norm estimates.

Everything here is exact or reproducibly Monte Carlo: shell enumerations are
exhaustive over pinned dyadic annuli, Gaussian-integer divisor counts go
through the rational factorization of the norm, and sparse frequency tensors
are built entry-by-entry so their partition operator norms can be measured
and compared against the claimed scaling bounds.  Asymptotic statements with
unspecified constants are phrased as ratio boundedness across dyadic doubling
with the window constant fixed to 1 and the "+" exponents fixed to a small
epsilon.

A dyadic shell is pinned to {N/2 < |n| <= 2N} throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.fft import ifft2, next_fast_len
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from sympy import factorint
from sympy.ntheory.residue_ntheory import sqrt_mod

from .randomfields import _KEY_DOMAIN, KIND_ESTIMATE_TRIALS, GaussianSampler

ESTIMATES_HEADER = "check,n_scale,n1_scale,n2_scale,measured,bound,ratio"

TENSOR_KINDS = ("lemma5_3", "lemma5_4", "lemma5_5")
_INDEX_NAMES = ("n", "n1", "n2")


# ---------------------------------------------------------------------------
# shells and counting

@lru_cache(maxsize=None)
def shell_points(scale: float) -> np.ndarray:
    """Lattice points of the dyadic shell {scale/2 < |n| <= 2 scale},
    lexicographically sorted; read-only (k, 2) int64 array."""
    if scale <= 0:
        raise ValueError("shell scale must be positive")
    r = int(math.floor(2 * scale))
    ax = np.arange(-r, r + 1, dtype=np.int64)
    x, y = np.meshgrid(ax, ax, indexing="ij")
    q = x * x + y * y
    keep = (4 * q.astype(np.float64) > scale * scale) & (q <= 4 * scale * scale)
    pts = np.stack([x[keep], y[keep]], axis=1)
    pts.setflags(write=False)
    return pts


def count_high_high(n, n1_scale: float, n2_scale: float, window: float,
                    sign: int = 1, cap: int = 10_000_000) -> int:
    """Exact size of {n1 : ||n1|^2 +- |n| - |n2|^2| <= window, n1 + n2 = n,
    |n1| ~ N1, |n2| ~ N2} by exhaustive enumeration over the N1 shell.

    The expected regime is 1 << |n| <~ N1 ~ N2 with window << N1; leaving it
    is legal (the count stays exact) but warned, since the comparison bound
    (window/|n| + 1) N1 is only meaningful inside the regime.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if window < 0:
        raise ValueError("window must be nonnegative")
    n = np.asarray(n, dtype=np.int64)
    scale_n = float(np.hypot(n[0], n[1]))
    if window >= n1_scale or not (0.25 <= n2_scale / n1_scale <= 4.0):
        warnings.warn("outside the counting regime (window << N1 ~ N2); "
                      "the (window/|n|+1) N1 comparison may be vacuous",
                      RuntimeWarning, stacklevel=2)
    if scale_n > 2 * n1_scale * 4:
        warnings.warn("|n| far above the N1 shell; intersection likely empty",
                      RuntimeWarning, stacklevel=2)
    pts = shell_points(n1_scale)
    if len(pts) > cap:
        raise ValueError(f"shell enumeration of {len(pts)} points exceeds "
                         f"the budget cap {cap}")
    n2 = n[None, :] - pts
    q2 = (n2 * n2).sum(axis=1).astype(np.float64)
    in_n2 = (4 * q2 > n2_scale * n2_scale) & (q2 <= 4 * n2_scale * n2_scale)
    q1 = (pts * pts).sum(axis=1).astype(np.float64)
    phi = q1 + sign * scale_n - q2
    return int(np.count_nonzero(in_n2 & (np.abs(phi) <= window)))


def _zi_divmod_exact(ax, ay, bx, by):
    """(a / b) in Z[i] if exact, else None; all Python ints."""
    q = bx * bx + by * by
    rx = ax * bx + ay * by
    ry = ay * bx - ax * by
    if rx % q or ry % q:
        return None
    return rx // q, ry // q


def _zi_gcd(ax, ay, bx, by):
    """Euclidean gcd in Z[i] via rounded division (unique up to units)."""
    while bx or by:
        q = bx * bx + by * by
        # nearest-integer quotient of a/b
        qx = (2 * (ax * bx + ay * by) + q) // (2 * q)
        qy = (2 * (ay * bx - ax * by) + q) // (2 * q)
        ax, ay, bx, by = bx, by, ax - (qx * bx - qy * by), ay - (qx * by + qy * bx)
    return ax, ay


def _zi_valuation(mx, my, px, py):
    """Largest e with p^e | m in Z[i], plus the cofactor m / p^e."""
    e = 0
    while True:
        d = _zi_divmod_exact(mx, my, px, py)
        if d is None:
            return e, (mx, my)
        mx, my = d
        e += 1


def gaussian_divisors(m) -> list:
    """All Gaussian-integer divisors of m != 0 as (x, y) pairs.

    Found by factoring the norm over Z: 2 ramifies through 1+i, primes
    p = 3 mod 4 stay inert (even exponent in the norm), and p = 1 mod 4
    splits into a conjugate pair recovered by gcd(p, x+i) with x^2 = -1
    mod p.  Unit multiples count as distinct divisors.
    """
    mx, my = _as_gaussian(m)
    if mx == 0 and my == 0:
        raise ValueError("m must be a nonzero Gaussian integer")
    norm = mx * mx + my * my
    primes = []  # (px, py, exponent in m)
    for p, e in factorint(norm).items():
        if p == 2:
            primes.append((1, 1, e))
        elif p % 4 == 3:
            primes.append((p, 0, e // 2))
        else:
            x = int(sqrt_mod(p - 1, p))
            gx, gy = _zi_gcd(p, 0, x, 1)
            e1, _ = _zi_valuation(mx, my, gx, gy)
            if e1:
                primes.append((gx, gy, e1))
            if e - e1:
                primes.append((gx, -gy, e - e1))
    divs = [(1, 0)]
    for px, py, e in primes:
        grown = []
        for dx, dy in divs:
            for _ in range(e + 1):
                grown.append((dx, dy))
                dx, dy = dx * px - dy * py, dx * py + dy * px
        divs = grown
    out = set()
    for dx, dy in divs:
        out.update([(dx, dy), (-dy, dx), (-dx, -dy), (dy, -dx)])
    return sorted(out)


def _as_gaussian(z):
    if isinstance(z, tuple):
        x, y = z
    else:
        zc = complex(z)
        x, y = zc.real, zc.imag
    if x != int(x) or y != int(y):
        raise ValueError(f"{z!r} is not a Gaussian integer")
    return int(x), int(y)


def count_gaussian_divisors(m, a0, b0, m_window: float, n_window: float) -> int:
    """Exact number of (a, b) in Z[i]^2 with ab = m, |a - a0| <= m_window,
    |b - b0| <= n_window."""
    mx, my = _as_gaussian(m)
    a0 = complex(a0)
    b0 = complex(b0)
    count = 0
    for ax, ay in gaussian_divisors((mx, my)):
        bx, by = _zi_divmod_exact(mx, my, ax, ay)
        if (abs(complex(ax, ay) - a0) <= m_window
                and abs(complex(bx, by) - b0) <= n_window):
            count += 1
    return count


# ---------------------------------------------------------------------------
# frequency tensors

@dataclass(frozen=True, eq=False)
class DyadicTensor:
    """Sparse tensor over frequency triples (n, n1, n2).

    Entry values at time t are weight * exp(-i t phase_freq): the magnitudes
    are t-independent and the phase is a function of a single index, so every
    partition norm is independent of t (asserted in tests, computed at 0).
    """

    kind: str
    n: np.ndarray        # (k, 2) int64
    n1: np.ndarray
    n2: np.ndarray
    weight: np.ndarray   # (k,) positive
    phase_freq: np.ndarray
    scales: tuple        # (n_scale, n1_scale, n2_scale)
    s: float
    gamma: float
    window: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.weight)
        for name in ("n", "n1", "n2"):
            arr = getattr(self, name)
            if arr.shape != (k, 2):
                raise ValueError(f"{name} must have shape ({k}, 2)")

    @property
    def size(self) -> int:
        return len(self.weight)

    def values(self, t: float = 0.0) -> np.ndarray:
        if t == 0.0:
            return self.weight.astype(np.complex128)
        return self.weight * np.exp(-1j * t * self.phase_freq)

    def index(self, name: str) -> np.ndarray:
        if name not in _INDEX_NAMES:
            raise ValueError(f"unknown index {name!r}")
        return getattr(self, name)


def _bracket(pts: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + (pts.astype(np.float64) ** 2).sum(axis=-1))


def _in_shell(pts: np.ndarray, scale: float) -> np.ndarray:
    q = (pts.astype(np.float64) ** 2).sum(axis=-1)
    return (4 * q > scale * scale) & (q <= 4 * scale * scale)


def _tile_of(pts: np.ndarray, side: float) -> np.ndarray:
    return np.floor(pts / side).astype(np.int64)


def _pack(triples):
    n, n1, n2, w, ph = triples
    order = np.lexsort((n1[:, 1], n1[:, 0], n[:, 1], n[:, 0]))
    return (np.ascontiguousarray(n[order]), np.ascontiguousarray(n1[order]),
            np.ascontiguousarray(n2[order]), np.ascontiguousarray(w[order]),
            np.ascontiguousarray(ph[order]))


def build_tensor(kind: str, n_scale: float, n1_scale: float, n2_scale: float,
                 s: float = 0.1, gamma: float = 0.2, *, sign: int = 1,
                 eps: float = 0.01, window: float | None = None,
                 cap: int = 5_000_000) -> DyadicTensor:
    """Enumerate one of the three low-modulation interaction tensors.

    Supports and weights, with phase phi = |n1|^2 + sign |n2| - |n|^2 and
    window constant 1 (|phi| strictly below the window, so a zero window
    means an empty tensor):

    * lemma5_3: n2 = n + n1, weight <n1>^-1, |phi| <= N1^(2s+2gamma+eps),
      shells N1 ~ N >> N2 (>> pinned to a factor >= 2, which admits the
      N2 = sqrt(N1) family down to N1 = 8).
    * lemma5_4: n = n1 + n2, weight <n1>^-1, |phi| <= N^(s+1/4+eps) N2^(3/4),
      shells N1 ~ N >~ N2.
    * lemma5_5: n = n1 + n2 with |n2| ~ N2 the only shell constraint, weight
      <n2>^(gamma-1), |phi| <= N2^(1+gamma+eps), and n1, n restricted to
      square tiles of side N2 laid over the plane (n1 in the tile at the
      positive axis of the N1 shell, n in the most-populated image tile; the
      measured tile multiplicity of the image is recorded in meta).
    """
    if kind not in TENSOR_KINDS:
        raise ValueError(f"kind must be one of {TENSOR_KINDS}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not 0.5 <= n1_scale / n_scale <= 2.0:
        raise ValueError("need N1 ~ N (within a factor of 2)")
    if kind == "lemma5_3":
        if n_scale < 2 * n2_scale:
            raise ValueError("lemma5_3 needs N >> N2 (pinned to N >= 2 N2)")
        if window is None:
            window = n1_scale ** (2 * s + 2 * gamma + eps)
    elif kind == "lemma5_4":
        if n2_scale > n_scale:
            raise ValueError("lemma5_4 needs N >= N2")
        if window is None:
            window = n_scale ** (s + 0.25 + eps) * n2_scale ** 0.75
    else:
        if n2_scale > n_scale:
            raise ValueError("lemma5_5 needs N >= N2")
        if window is None:
            window = n2_scale ** (1 + gamma + eps)
    scales = (float(n_scale), float(n1_scale), float(n2_scale))
    meta = {"sign": sign, "eps": eps}

    small = shell_points(n2_scale)
    if kind == "lemma5_3":
        big = shell_points(n_scale)  # n runs over the N shell, n1 = n2 - n
        parts = []
        step = max(1, cap // max(len(big), 1))
        for lo in range(0, len(small), step):
            n2c = small[lo:lo + step]
            n = np.broadcast_to(big[None, :, :], (len(n2c), len(big), 2))
            n2 = np.broadcast_to(n2c[:, None, :], n.shape)
            n1 = n2 - n
            keep = _in_shell(n1, n1_scale)
            phi = ((n1.astype(np.float64) ** 2).sum(-1)
                   + sign * np.hypot(n2[..., 0], n2[..., 1])
                   - (n.astype(np.float64) ** 2).sum(-1))
            keep &= np.abs(phi) < window
            parts.append((n[keep], n1[keep], n2[keep]))
        n, n1, n2 = (np.concatenate([p[i] for p in parts]) for i in range(3))
        w = 1.0 / _bracket(n1)
        ph = (n1.astype(np.float64) ** 2).sum(-1)
    elif kind == "lemma5_4":
        big = shell_points(n1_scale)  # n1 free, n = n1 + n2
        parts = []
        step = max(1, cap // max(len(big), 1))
        for lo in range(0, len(small), step):
            n2c = small[lo:lo + step]
            n1 = np.broadcast_to(big[None, :, :], (len(n2c), len(big), 2))
            n2 = np.broadcast_to(n2c[:, None, :], n1.shape)
            n = n1 + n2
            keep = _in_shell(n, n_scale)
            phi = ((n1.astype(np.float64) ** 2).sum(-1)
                   + sign * np.hypot(n2[..., 0], n2[..., 1])
                   - (n.astype(np.float64) ** 2).sum(-1))
            keep &= np.abs(phi) < window
            parts.append((n[keep], n1[keep], n2[keep]))
        n, n1, n2 = (np.concatenate([p[i] for p in parts]) for i in range(3))
        w = 1.0 / _bracket(n1)
        ph = (n1.astype(np.float64) ** 2).sum(-1)
    else:
        side = float(n2_scale)
        anchor = np.array([int(round(1.5 * n1_scale)), 0], dtype=np.int64)
        tile1 = _tile_of(anchor.astype(np.float64), side)
        ball1 = shell_points(n1_scale)
        ball1 = ball1[(_tile_of(ball1.astype(np.float64), side) == tile1).all(axis=1)]
        n1 = np.repeat(ball1, len(small), axis=0)
        n2 = np.tile(small, (len(ball1), 1))
        n = n1 + n2
        phi = ((n1.astype(np.float64) ** 2).sum(-1)
               + sign * np.hypot(n2[:, 0], n2[:, 1])
               - (n.astype(np.float64) ** 2).sum(-1))
        tiles_all = _tile_of(n.astype(np.float64), side)
        meta["l2_multiplicity"] = len(np.unique(tiles_all, axis=0))
        keep = np.abs(phi) < window
        n, n1, n2 = n[keep], n1[keep], n2[keep]
        if len(n):
            tiles, inv, cnt = np.unique(_tile_of(n.astype(np.float64), side),
                                        axis=0, return_inverse=True,
                                        return_counts=True)
            best = int(np.argmax(cnt))  # unique argmax order is deterministic
            sel = inv == best
            n, n1, n2 = n[sel], n1[sel], n2[sel]
            meta["j2_tile"] = tuple(int(v) for v in tiles[best])
        meta["j1_tile"] = tuple(int(v) for v in tile1)
        w = _bracket(n2) ** (gamma - 1.0)
        ph = np.hypot(n2[:, 0], n2[:, 1]).astype(np.float64)
    if len(n) > cap:
        raise ValueError(f"tensor support {len(n)} exceeds the budget cap {cap}")
    n, n1, n2, w, ph = _pack((n, n1, n2, w, ph))
    return DyadicTensor(kind, n, n1, n2, w, ph, scales, s, gamma,
                        float(window), meta)


# ---------------------------------------------------------------------------
# partition norms

def _check_partition(partition):
    b, c = partition
    b, c = tuple(b), tuple(c)
    names = b + c
    if sorted(names) != sorted(set(names)) or set(names) != set(_INDEX_NAMES):
        raise ValueError("partition must split {n, n1, n2} into two disjoint "
                         f"groups, got {partition!r}")
    return b, c


def _keys(h: DyadicTensor, names) -> np.ndarray:
    if not names:
        return np.zeros((h.size, 0), dtype=np.int64)
    return np.hstack([getattr(h, name) for name in names])


def _unfold(h: DyadicTensor, partition, t: float = 0.0) -> sp.csr_matrix:
    """Sparse unfolding matrix mapping the B index group to the C group."""
    b, c = _check_partition(partition)
    if h.size == 0:
        return sp.csr_matrix((0, 0), dtype=np.complex128)
    _, cols = np.unique(_keys(h, b), axis=0, return_inverse=True)
    _, rows = np.unique(_keys(h, c), axis=0, return_inverse=True)
    mat = sp.coo_matrix((h.values(t), (rows.ravel(), cols.ravel())),
                        shape=(int(rows.max()) + 1, int(cols.max()) + 1))
    return mat.tocsr()


def _abs_schur(a) -> float:
    """sqrt(max row l1 x max column l1) of |a|; classic operator upper bound."""
    if a.shape[0] == 0 or a.shape[1] == 0 or a.nnz == 0:
        return 0.0
    mags = abs(a)
    return math.sqrt(float(mags.sum(axis=1).max()) * float(mags.sum(axis=0).max()))


def _opnorm_sparse(a, tol: float = 1e-8, max_iter: int = 20000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    The Rayleigh value is a certified lower bound at every step; on
    stagnation the (Rayleigh, Schur) bracket is reported in a warning and
    the lower end returned.
    """
    if a.shape[0] == 0 or a.shape[1] == 0 or a.nnz == 0:
        return 0.0
    if a.shape[0] < a.shape[1]:
        a = a.T  # iterate on the column side; norm is transpose-invariant
    ah = a.conj().T.tocsr()
    rng = np.random.default_rng(0x5A59)
    x = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    stable = 0
    for _ in range(max_iter):
        y = a @ x
        prev, lam = lam, float(np.vdot(y, y).real)
        x = ah @ y
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
        if abs(lam - prev) <= tol * max(lam, 1e-300):
            stable += 1
            if stable >= 3:
                return math.sqrt(lam)
        else:
            stable = 0
    lo = math.sqrt(lam)
    hi = _abs_schur(a)
    warnings.warn(f"operator norm iteration stalled; bracket [{lo:.9g}, "
                  f"{hi:.9g}], returning the certified lower end",
                  RuntimeWarning, stacklevel=2)
    return lo


def _top_gram_eig(g: np.ndarray) -> float:
    """Largest eigenvalue of a dense Hermitian PSD Gram matrix."""
    if g.shape[0] <= 200:
        return float(np.linalg.eigvalsh(g)[-1])
    v0 = np.ones(g.shape[0])
    try:
        return float(eigsh(g, k=1, which="LA", v0=v0,
                           return_eigenvectors=False)[0])
    except ArpackNoConvergence:
        return float(np.linalg.eigvalsh(g)[-1])


def _opnorm_gram(a) -> float:
    """Largest singular value via the dense Gram on the shorter side.

    The trial matrices put thousands of random entries behind a short n2
    (or n1) side, where plain power iteration crawls through a crowded
    spectral top; the Gram fits comfortably and Lanczos resolves its top
    eigenvalue in a few dozen matrix products.  Deterministic (fixed
    start vector)."""
    if a.shape[0] == 0 or a.shape[1] == 0 or a.nnz == 0:
        return 0.0
    if a.shape[0] > a.shape[1]:
        a = a.T
    g = (a @ a.conj().T).toarray()
    return math.sqrt(max(_top_gram_eig(g), 0.0))


def tensor_norm(h: DyadicTensor, partition, *, t: float = 0.0,
                tol: float = 1e-8, max_iter: int = 20000) -> float:
    """Operator norm of the B -> C unfolding.

    The time phase is diagonal in whichever group holds the phase-carrying
    index, so the value is independent of t; the parameter exists so that
    this can be asserted rather than assumed.
    """
    return _opnorm_sparse(_unfold(h, partition, t), tol=tol, max_iter=max_iter)


def schur_bound(h: DyadicTensor, partition) -> float:
    """Schur-test upper bound for the same unfolding; >= tensor_norm always."""
    return _abs_schur(_unfold(h, partition))


# ---------------------------------------------------------------------------
# random contractions

_CONTRACTED = {"lemma5_3": "n1", "lemma5_4": "n1", "lemma5_5": "n2"}
# (rows, cols) of the contracted random matrix, per kind
_MATRIX_AXES = {"lemma5_3": ("n2", "n"), "lemma5_4": ("n", "n2"),
                "lemma5_5": ("n", "n1")}
_BENCHMARKS = {
    "lemma5_3": ((("n1", "n"), ("n2",)), (("n",), ("n2", "n1"))),
    "lemma5_4": ((("n1", "n2"), ("n",)), (("n2",), ("n", "n1"))),
    "lemma5_5": ((("n1", "n2"), ("n",)), (("n1",), ("n", "n2"))),
}


def _trial_normals(sampler: GaussianSampler, trial: int, count: int) -> np.ndarray:
    """Standard complex draws (E|g|^2 = 1), a pure function of
    (seed, stream, trial); chunk-independent by construction."""
    ss = np.random.SeedSequence([_KEY_DOMAIN, int(sampler.seed),
                                 int(sampler.stream), KIND_ESTIMATE_TRIALS,
                                 int(trial)])
    raw = np.random.Generator(np.random.Philox(ss)).normal(size=(2, count))
    return (raw[0] + 1j * raw[1]) * np.sqrt(0.5)


@dataclass(frozen=True)
class OpnormTrials:
    """Sampled operator norms of the Gaussian contraction of one tensor."""

    kind: str
    scales: tuple
    values: np.ndarray          # per-trial |H| operator norms, trial order
    benchmark: float            # max of the two claimed-partition norms
    quantiles: dict

    @property
    def trials(self) -> int:
        return len(self.values)


def _contraction_plan(h: DyadicTensor, t: float):
    """Index maps shared by every trial on one tensor: (source count,
    per-entry source index, row index, column index, shape, base values).
    Hoisting these out of the trial loop matters; the unique() passes cost
    more than a whole trial at the largest shells."""
    cname = _CONTRACTED[h.kind]
    rname, colname = _MATRIX_AXES[h.kind]
    freqs, inv = np.unique(getattr(h, cname), axis=0, return_inverse=True)
    _, rows = np.unique(getattr(h, rname), axis=0, return_inverse=True)
    _, cols = np.unique(getattr(h, colname), axis=0, return_inverse=True)
    shape = (int(rows.max()) + 1, int(cols.max()) + 1)
    return len(freqs), inv.ravel(), rows.ravel(), cols.ravel(), shape, h.values(t)


def _trial_matrix(plan, sampler: GaussianSampler, trial: int) -> sp.csr_matrix:
    count, inv, rows, cols, shape, base = plan
    g = _trial_normals(sampler, trial, count)
    return sp.coo_matrix((base * g[inv], (rows, cols)), shape=shape).tocsr()


def contract_trial(h: DyadicTensor, sampler: GaussianSampler, trial: int,
                   t: float = 0.0) -> sp.csr_matrix:
    """The random matrix of one trial: the tensor contracted against unit
    complex Gaussians indexed by its contracted frequency."""
    if h.size == 0:
        return sp.csr_matrix((0, 0), dtype=np.complex128)
    return _trial_matrix(_contraction_plan(h, t), sampler, trial)


def opnorm_trials(h: DyadicTensor, trials: int, sampler: GaussianSampler,
                  *, t: float = 0.0) -> OpnormTrials:
    if trials < 100:
        raise ValueError("need at least 100 trials")
    values = np.empty(trials)
    if h.size:
        plan = _contraction_plan(h, t)
        for trial in range(trials):
            values[trial] = _opnorm_gram(_trial_matrix(plan, sampler, trial))
    else:
        values[:] = 0.0
    bench = max(tensor_norm(h, p) for p in _BENCHMARKS[h.kind])
    values.setflags(write=False)
    quants = {q: float(np.quantile(values, q)) for q in (0.5, 0.9, 0.99)}
    return OpnormTrials(h.kind, h.scales, values, bench, quants)


def random_matrix_opnorm(kind: str, shells, s: float, gamma: float, t: float,
                         trials: int, sampler: GaussianSampler) -> OpnormTrials:
    """Build the kind's tensor on the given (N, N1, N2) shells and sample the
    operator norm of its Gaussian contraction over independent trials."""
    n_scale, n1_scale, n2_scale = shells
    h = build_tensor(kind, n_scale, n1_scale, n2_scale, s, gamma)
    return opnorm_trials(h, trials, sampler, t=t)


def hs_vs_op(matrix) -> tuple:
    """(operator norm of T, Hilbert-Schmidt norm of T T*).

    The second quantity always dominates the square of the first; the slack
    is the price of estimating an operator norm through Hilbert-Schmidt
    bookkeeping, and it grows with the effective rank.  Both come from the
    Gram matrix on the shorter side (same spectrum up to padding zeros).
    """
    if sp.issparse(matrix):
        a = matrix.tocsr()
        if a.shape[0] == 0 or a.shape[1] == 0 or a.nnz == 0:
            return 0.0, 0.0
        if a.shape[0] > a.shape[1]:
            a = a.T
        gram = (a @ a.conj().T).toarray()
    else:
        t = np.asarray(matrix, dtype=np.complex128)
        if t.size == 0:
            return 0.0, 0.0
        if t.shape[0] > t.shape[1]:
            t = t.conj().T
        gram = t @ t.conj().T
    hs = float(np.linalg.norm(gram))
    op = math.sqrt(max(_top_gram_eig(gram), 0.0))
    if op * op > hs + 1e-10 * max(1.0, hs):
        raise AssertionError(f"op^2 = {op * op} exceeded HS = {hs}")
    return op, hs


def schur_matrix_bound(sigma) -> float:
    """Diagonal/off-diagonal upper bound for the squared operator norm of a
    kernel matrix sigma(n1, n) acting in its second index:

        max_n sum_n1 |sigma(n1, n)|^2
        + (sum_{n != n'} |sum_n1 sigma(n1, n') conj(sigma(n1, n))|^2)^(1/2)

    Asserted >= the exact squared norm (triangle plus Cauchy-Schwarz, so the
    constant is 1)."""
    if sp.issparse(sigma):
        sigma = sigma.toarray()
    t = np.asarray(sigma, dtype=np.complex128)
    if t.size == 0:
        return 0.0
    gram = t.conj().T @ t
    diag = float(np.max(np.abs(np.diag(gram))))
    off = gram - np.diag(np.diag(gram))
    bound = diag + float(np.linalg.norm(off))
    op2 = float(np.linalg.svd(t, compute_uv=False)[0]) ** 2
    if op2 > bound * (1 + 1e-12) + 1e-12:
        raise AssertionError(f"bound {bound} fell below the exact norm {op2}")
    return bound


def appendix_contrast(n2_scale: float, gamma: float, trials: int,
                      sampler: GaussianSampler, *, s: float = 0.1,
                      t: float = 0.0) -> np.ndarray:
    """Per-trial HS(TT*) / op(T)^2 ratios for the ball-localized kernel at
    N1 = N = 8 N2: the measured gap between the two norm bookkeepings."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    h = build_tensor("lemma5_5", 8 * n2_scale, 8 * n2_scale, n2_scale,
                     s, gamma)
    if h.size == 0:
        raise ValueError(f"kernel support is empty at N2 = {n2_scale}")
    plan = _contraction_plan(h, t)
    ratios = np.empty(trials)
    for trial in range(trials):
        op, hs = hs_vs_op(_trial_matrix(plan, sampler, trial))
        ratios[trial] = hs / (op * op) if op > 0 else np.nan
    ratios.setflags(write=False)
    return ratios


# ---------------------------------------------------------------------------
# Strichartz probe

def strichartz_ratio(center, radius: int, *, coeffs: str = "ones",
                     decay: float = 0.0, tsteps: int = 256,
                     grid: int | None = None,
                     sampler: GaussianSampler | None = None) -> float:
    """L4([0,1] x T2) norm over l2 norm for the linear Schrodinger wave
    sum_{|m - center| <= radius} a_m exp(i(<m, x> + |m|^2 t)).

    The x integral uses the normalized measure and an alias-free uniform
    grid (exact for trig polynomials once grid > 4 radius); the t integral
    is a trapezoid rule with at least 64 steps.  The center only shifts
    phases, so the computation recenters the ball at the origin.  coeffs is
    "ones", "random", or an explicit vector over the ball's modes (ordered
    lexicographically); decay applies an extra <m>^-decay falloff measured
    from the true (uncentered) frequency.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if tsteps < 64:
        raise ValueError("need at least 64 time steps")
    if grid is None:
        grid = next_fast_len(max(4 * radius + 1, 16))
    elif grid < 4 * radius + 1:
        raise ValueError(f"grid {grid} aliases |f|^4; need > 4 radius")
    center = np.asarray(center, dtype=np.int64)
    ax = np.arange(-radius, radius + 1, dtype=np.int64)
    m1, m2 = np.meshgrid(ax, ax, indexing="ij")
    inside = m1 * m1 + m2 * m2 <= radius * radius
    modes = np.stack([m1[inside], m2[inside]], axis=1)
    true_modes = modes + center[None, :]
    if isinstance(coeffs, str):
        if coeffs == "ones":
            a = np.ones(len(modes), dtype=np.complex128)
        elif coeffs == "random":
            if sampler is None:
                raise ValueError("random coefficients need a sampler")
            a = _trial_normals(sampler, 0, len(modes))
        else:
            raise ValueError("coeffs must be 'ones', 'random', or a vector")
    else:
        a = np.asarray(coeffs, dtype=np.complex128)
        if a.shape != (len(modes),):
            raise ValueError(f"need {len(modes)} coefficients for radius "
                             f"{radius}, got shape {a.shape}")
    if decay:
        a = a * (1.0 + (true_modes.astype(np.float64) ** 2).sum(1)) ** (-decay / 2)
    omega = (true_modes.astype(np.float64) ** 2).sum(axis=1)
    l2 = float(np.linalg.norm(a))
    if l2 == 0.0:
        raise ValueError("coefficients vanish")
    idx1, idx2 = modes[:, 0] % grid, modes[:, 1] % grid
    ts = np.linspace(0.0, 1.0, tsteps + 1)
    quart = np.empty(tsteps + 1)
    spec = np.zeros((grid, grid), dtype=np.complex128)
    for k, t in enumerate(ts):
        spec[:, :] = 0.0
        np.add.at(spec, (idx1, idx2), a * np.exp(1j * omega * t))
        vals = ifft2(spec, norm="forward")
        mag2 = vals.real ** 2 + vals.imag ** 2
        quart[k] = float(np.mean(mag2 ** 2))
    return float(np.trapezoid(quart, ts) ** 0.25 / l2)


# ---------------------------------------------------------------------------
# result tables

@dataclass(frozen=True)
class EstimateRow:
    check: str
    scales: tuple      # (n_scale, n1_scale, n2_scale); nan where not meaningful
    measured: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.measured / self.bound if self.bound else math.inf


def write_estimates_csv(rows, path, digest: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if digest is not None:
            fh.write(f"# config_digest={digest}\n")
        fh.write(ESTIMATES_HEADER + "\n")
        for r in rows:
            a, b, c = r.scales
            fh.write(f"{r.check},{a!r},{b!r},{c!r},{r.measured!r},"
                     f"{r.bound!r},{r.ratio!r}\n")


def _shell_map(kind: str, n1_scale: float) -> tuple:
    if kind == "lemma5_3":
        return (n1_scale, n1_scale, max(2.0, n1_scale / 8))
    return (n1_scale, n1_scale, max(2.0, n1_scale / 4))


_CLAIMS = {
    # (partition, bound(n1, n2, s, gamma)) pairs per kind
    "lemma5_3": (
        ((("n1", "n"), ("n2",)),
         lambda n1, n2, s, g: n1 ** (s + g - 0.5) * n2 ** -0.5 + n1 ** -0.5),
        ((("n",), ("n2", "n1")),
         lambda n1, n2, s, g: n1 ** -0.5),
    ),
    "lemma5_4": (
        ((("n1", "n2"), ("n",)),
         lambda n1, n2, s, g: n1 ** (s / 2 - 0.5)),
        ((("n2",), ("n1", "n")),
         lambda n1, n2, s, g: n1 ** (s / 2 - 0.375) * n2 ** -0.125 + n1 ** -0.5),
    ),
    "lemma5_5": (
        ((("n1", "n2"), ("n",)),
         lambda n1, n2, s, g: n2 ** (-0.5 + 1.5 * g)),
        ((("n1",), ("n", "n2")),
         lambda n1, n2, s, g: n2 ** (-0.5 + 1.5 * g)),
    ),
}


def _fmt_partition(partition) -> str:
    b, c = partition
    return "".join(b) + "->" + "".join(c)


def tensor_rows(n1_scales=(8, 16, 32, 64), s: float = 0.1,
                gamma: float = 0.2) -> list:
    """Measured partition norms against the claimed scaling bounds, plus the
    Schur and duality cross-checks, over the dyadic doubling grid."""
    rows = []
    for kind in TENSOR_KINDS:
        for n1 in n1_scales:
            shells = _shell_map(kind, n1)
            h = build_tensor(kind, *shells, s, gamma)
            for partition, claim in _CLAIMS[kind]:
                measured = tensor_norm(h, partition)
                upper = schur_bound(h, partition)
                if measured > upper * (1 + 1e-9):
                    raise AssertionError(
                        f"norm {measured} above Schur bound {upper} "
                        f"({kind}, N1={n1})")
                swapped = tensor_norm(h, (partition[1], partition[0]))
                if abs(measured - swapped) > 1e-8 * max(1.0, measured):
                    raise AssertionError(
                        f"duality violated: {measured} vs {swapped} "
                        f"({kind}, N1={n1})")
                rows.append(EstimateRow(
                    f"{kind}:{_fmt_partition(partition)}", shells,
                    measured, claim(n1, shells[2], s, gamma)))
    return rows


def counting_rows(n1_scales=(8, 16, 32, 64)) -> list:
    """count_high_high against the (window/|n| + 1) N1 ceiling on the
    reference tuples n = (N1/4, 0), N2 = N1, window = |n|."""
    rows = []
    for n1 in n1_scales:
        scale_n = max(2, n1 // 4)
        n = (scale_n, 0)
        count = count_high_high(n, n1, n1, float(scale_n))
        rows.append(EstimateRow("count_high_high", (scale_n, n1, n1),
                                float(count), 2.0 * n1))
    return rows


def random_opnorm_rows(n1_scales=(8, 16, 32, 64, 128), trials: int = 200,
                       sampler: GaussianSampler = GaussianSampler(0),
                       s: float = 0.1, gamma: float = 0.2) -> list:
    """99th percentile of the contracted operator norm against the claimed
    partition-norm scaling, on N2 = sqrt(N1) shells."""
    rows = []
    for n1 in n1_scales:
        n2 = math.sqrt(n1)
        stats = random_matrix_opnorm("lemma5_3", (n1, n1, n2), s, gamma,
                                     0.0, trials, sampler)
        bound = n1 ** (s + gamma - 0.5) * n2 ** -0.5 + n1 ** -0.5
        rows.append(EstimateRow("random_opnorm_5_3", (n1, n1, n2),
                                stats.quantiles[0.99], bound))
    return rows


def appendix_rows(n2_scales=(4, 8, 16, 32), trials: int = 200,
                  sampler: GaussianSampler = GaussianSampler(0),
                  gamma: float = 0.2) -> list:
    """Median HS/op^2 gap of the ball-localized kernel per N2 (bound column
    is 1: the ratio itself is the measurement)."""
    rows = []
    for n2 in n2_scales:
        ratios = appendix_contrast(n2, gamma, trials, sampler)
        rows.append(EstimateRow("appendix_hs_gap", (8 * n2, 8 * n2, n2),
                                float(np.median(ratios)), 1.0))
    return rows


def strichartz_rows(radii=(4, 8, 16, 32, 64)) -> list:
    """Ones-coefficient L4/l2 ratios against the radius^0.1 reference."""
    rows = []
    for r in radii:
        measured = strichartz_ratio((0, 0), r)
        rows.append(EstimateRow("strichartz_ones", (r, math.nan, math.nan),
                                measured, r ** 0.1))
    return rows
