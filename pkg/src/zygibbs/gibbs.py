"""Gibbs density over the Gaussian reference ensemble.

The unnormalized density of a configuration (u, w) at cutoff N is

    1{ |integral :|u_N|^2: dx| <= K } * exp(-Q_N(u, w)),

absolutely continuous with respect to the free-field reference, so everything
here is importance sampling: draw from the reference, weight by the density.
The partition function, weighted ensembles with effective-sample-size
diagnostics, and the fixed-drift variational objective all live in this
module.  Estimation is chunked (memory-bounded) and chunk-invariant: results
are a pure function of (seed, stream, member count).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import ifft2, next_fast_len

from .randomfields import (
    GaussianSampler,
    potential_qn,
    sigma_n,
    wick_mass,
    wick_square,
)
from .spectral import (
    SpectralField,
    ball_mask,
    bracket_sq_grid,
    conjugate_reflect,
    convolve_truncated,
    lex_modes,
    project_dirichlet,
)

QUANTILE_PROBS = (0.5, 0.9, 0.99)
ESS_RELIABLE = 50.0


@dataclass(frozen=True)
class GibbsParams:
    """Density parameters: cutoff N, coupling exponent gamma, Wick-mass bound
    K (wick_bound), and the taming penalty A |integral :u^2:|^alpha."""

    cutoff: int
    gamma: float
    wick_bound: float
    penalty_a: float = 1.0
    penalty_alpha: float = 4.0

    def __post_init__(self):
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not (math.isfinite(self.wick_bound) and self.wick_bound > 0):
            raise ValueError("wick_bound must be positive and finite")
        if not (math.isfinite(self.penalty_a) and self.penalty_a >= 0):
            raise ValueError("penalty_a must be nonnegative and finite")
        if not (math.isfinite(self.penalty_alpha) and self.penalty_alpha >= 1):
            raise ValueError("penalty_alpha must be >= 1 and finite")


class _BatchDensity:
    """Vectorized -log density pieces for stacks of coefficient arrays.

    The quadrature grid has size > 3N so the integral of |u|^2 w (a trig
    polynomial of degree 3N) equals the grid mean exactly.
    """

    def __init__(self, cutoff: int):
        self.cutoff = cutoff
        self.sigma = sigma_n(cutoff)
        self.g = next_fast_len(3 * cutoff + 2)
        self.idx = np.arange(-cutoff, cutoff + 1) % self.g

    def values(self, a: np.ndarray) -> np.ndarray:
        big = np.zeros(a.shape[:-2] + (self.g, self.g), dtype=np.complex128)
        big[..., self.idx[:, None], self.idx[None, :]] = a
        return ifft2(big) * (self.g * self.g)

    def q_potential(self, u: np.ndarray, w: np.ndarray):
        """(Q_N, wick mass) for batches u, w of shape (m, 2N+1, 2N+1)."""
        c = self.cutoff
        axes = (-2, -1)
        mass = np.sum(u.real ** 2 + u.imag ** 2, axis=axes)
        u_vals = self.values(u)
        w_vals = self.values(w).real
        mean_u2w = np.mean((u_vals.real ** 2 + u_vals.imag ** 2) * w_vals, axis=axes)
        w0 = w[..., c, c].real
        q = 0.5 * (mean_u2w - self.sigma * w0)
        return q, mass - self.sigma


def _default_chunk(cutoff: int) -> int:
    # keep the padded grid buffers around 200 MB per chunk
    g = next_fast_len(3 * cutoff + 2)
    return int(max(64, min(4096, 2.0e8 / (g * g * 16))))


def log_density(state, params: GibbsParams):
    """(log weight, in-cutoff flag) of a configuration under the density.

    log weight = -Q_N(u, w); the flag is |wick mass at cutoff N| <= K.  The
    state may carry a larger cutoff; it is projected down to params.cutoff.
    """
    n = params.cutoff
    if state.u.cutoff < n:
        raise ValueError("state cutoff must be >= params.cutoff")
    logw = -potential_qn(state.u, project_dirichlet(state.w, n), n)
    return logw, bool(abs(wick_mass(state.u, n)) <= params.wick_bound)


@dataclass(frozen=True)
class PartitionEstimate:
    """Monte Carlo estimate of Z_N = E[1_cutoff exp(-Q_N)] with diagnostics.

    p2_moment estimates E[1_cutoff exp(-2 Q_N)] (the L^2 bound subject);
    max_log_density is the running maximum of the log weight on the cutoff
    set (None when no sample lands there) and quantiles are of that same
    restricted log weight.
    """

    mean: float
    stderr: float
    p2_moment: float
    max_log_density: float | None
    quantiles: dict
    ess: float
    members: int


def estimate_partition(params: GibbsParams, m: int, sampler: GaussianSampler,
                       chunk: int | None = None) -> PartitionEstimate:
    """Plain (unnormalized) importance estimate of the partition function.

    Sampling is streamed in chunks; the reduction is an ordered fold over the
    full log-weight vector, so the result is independent of chunk size.
    Accumulation is in shifted exponential space (log-sum-exp), so finite
    inputs never produce inf/NaN.
    """
    if m < 100:
        raise ValueError("need at least 100 samples")
    if chunk is None:
        chunk = _default_chunk(params.cutoff)
    dens = _BatchDensity(params.cutoff)
    kept = []
    start = 0
    while start < m:
        count = min(chunk, m - start)
        u = sampler.schrodinger_batch(params.cutoff, start, count)
        w = sampler.wave_batch(params.cutoff, params.gamma, start, count)
        q, wm = dens.q_potential(u, w)
        kept.append(-q[np.abs(wm) <= params.wick_bound])
        start += count
    logw = np.concatenate(kept)
    if logw.size == 0:
        return PartitionEstimate(0.0, 0.0, 0.0, None, {}, 0.0, m)
    s = float(np.max(logw))
    a = np.exp(logw - s)
    s1, s2 = float(np.sum(a)), float(np.sum(a * a))
    mean = math.exp(s) * s1 / m
    second = math.exp(2 * s) * s2 / m
    stderr = math.sqrt(max(second - mean * mean, 0.0) / m)
    qs = {p: float(np.quantile(logw, p)) for p in QUANTILE_PROBS}
    return PartitionEstimate(mean, stderr, second, s, qs, s1 * s1 / s2, m)


@dataclass
class GibbsEnsemble:
    """Weighted ensemble: reference draws with frozen log weights.

    Fields are stacked coefficient arrays of shape (m, 2N+1, 2N+1); member i
    is a pure function of (seed, stream, i).  Weighted expectations are
    self-normalized over the in-cutoff members.
    """

    params: GibbsParams
    u: np.ndarray
    w: np.ndarray
    v: np.ndarray
    log_weight: np.ndarray
    in_cutoff: np.ndarray
    seed: int
    stream: int

    def __len__(self) -> int:
        return self.log_weight.size

    def member(self, i: int):
        """(State, log weight, in-cutoff) view of one member."""
        from .dynamics import State

        n = self.params.cutoff
        st = State(SpectralField(n, self.u[i].copy()),
                   SpectralField(n, self.w[i].copy(), hermitian=True),
                   SpectralField(n, self.v[i].copy(), hermitian=True),
                   self.params.gamma)
        return st, float(self.log_weight[i]), bool(self.in_cutoff[i])

    @property
    def ess(self) -> float:
        return effective_sample_size(self.log_weight, self.in_cutoff)

    @property
    def reliable(self) -> bool:
        return self.ess >= ESS_RELIABLE

    def expect(self, values: np.ndarray):
        return weighted_expectation(values, self.log_weight, self.in_cutoff)


def effective_sample_size(log_weight: np.ndarray, in_cutoff: np.ndarray) -> float:
    """(sum w)^2 / sum w^2 with w = 1_cutoff exp(log weight)."""
    lw = np.asarray(log_weight, dtype=float)[np.asarray(in_cutoff, dtype=bool)]
    if lw.size == 0:
        return 0.0
    a = np.exp(lw - np.max(lw))
    s1, s2 = float(np.sum(a)), float(np.sum(a * a))
    return s1 * s1 / s2


def weighted_expectation(values: np.ndarray, log_weight: np.ndarray,
                         in_cutoff: np.ndarray | None = None):
    """Self-normalized mean and delta-method standard error.

    Invariant under shifting every log weight by a constant; with all weights
    equal and no cutoff it reduces to the plain Monte Carlo mean.
    """
    values = np.asarray(values, dtype=float)
    lw = np.asarray(log_weight, dtype=float)
    if in_cutoff is not None:
        keep = np.asarray(in_cutoff, dtype=bool)
        values, lw = values[keep], lw[keep]
    if values.size == 0:
        raise ValueError("no members inside the cutoff set")
    wts = np.exp(lw - np.max(lw))
    total = np.sum(wts)
    mean = float(np.sum(wts * values) / total)
    norm = wts / total
    stderr = float(np.sqrt(np.sum(norm ** 2 * (values - mean) ** 2)))
    return mean, stderr


def sample_gibbs_ensemble(params: GibbsParams, m: int, sampler: GaussianSampler,
                          chunk: int | None = None) -> GibbsEnsemble:
    """Draw m reference configurations and attach frozen density weights.

    No sample-count floor here: a snapshot is a snapshot.  Statistical use
    goes through ess / weighted_expectation, which carry their own flags.
    """
    if m < 1:
        raise ValueError("need at least one sample")
    if chunk is None:
        chunk = _default_chunk(params.cutoff)
    n = params.cutoff
    d = 2 * n + 1
    dens = _BatchDensity(n)
    u = np.empty((m, d, d), dtype=np.complex128)
    w = np.empty((m, d, d), dtype=np.complex128)
    v = np.empty((m, d, d), dtype=np.complex128)
    logw = np.empty(m)
    flags = np.empty(m, dtype=bool)
    start = 0
    while start < m:
        count = min(chunk, m - start)
        sl = slice(start, start + count)
        u[sl] = sampler.schrodinger_batch(n, start, count)
        w[sl] = sampler.wave_batch(n, params.gamma, start, count)
        v[sl] = sampler.wave_batch(n, params.gamma, start, count, velocity=True)
        q, wm = dens.q_potential(u[sl], w[sl])
        logw[sl] = -q
        flags[sl] = np.abs(wm) <= params.wick_bound
        start += count
    return GibbsEnsemble(params, u, w, v, logw, flags, sampler.seed, sampler.stream)


# ---------------------------------------------------------------------------
# Fixed-drift variational objective


@dataclass(frozen=True)
class DriftPair:
    """Deterministic time-constant drift (theta1 complex, theta2 real)."""

    theta1: SpectralField
    theta2: SpectralField

    def __post_init__(self):
        if not self.theta2.hermitian:
            raise ValueError("theta2 must be hermitian (real drift)")

    def cost(self) -> float:
        """(1/2)(|theta1|_{L^2}^2 + |theta2|_{L^2}^2); for a time-constant
        drift the time integral of the squared speed is exactly this."""
        return 0.5 * (self.theta1.l2_norm_sq() + self.theta2.l2_norm_sq())


def drift_fields(drift: DriftPair, params: GibbsParams):
    """Smoothed shifts (Theta1, Theta2) = (pi_N <nabla>^{-1} theta1,
    pi_N <nabla>^{gamma-1} theta2) entering the shifted density."""
    n = params.cutoff
    if drift.theta1.cutoff > n or drift.theta2.cutoff > n:
        raise ValueError("drift cutoff must be <= params.cutoff")
    br = np.sqrt(bracket_sq_grid(n))
    mask = ball_mask(n)

    def embed(f, expo):
        d = 2 * n + 1
        lo = n - f.cutoff
        full = np.zeros((d, d), dtype=np.complex128)
        full[lo:lo + 2 * f.cutoff + 1, lo:lo + 2 * f.cutoff + 1] = f.coeffs
        return full * br ** expo * mask

    t1 = SpectralField(n, embed(drift.theta1, -1.0))
    t2 = SpectralField(n, embed(drift.theta2, params.gamma - 1.0), hermitian=True)
    return t1, t2


@dataclass(frozen=True)
class VariationalTerms:
    """The seven summands of the shifted coupling functional plus the drift
    cost.  wick_* pair :Y1^2: with the wave-type factor, cross_* pair
    2 Re(Y1 conj(Theta1)), square_* pair |Theta1|^2; penalty is the taming
    term A |integral of the full shifted square|^alpha."""

    wick_y2: float
    wick_theta2: float
    cross_y2: float
    cross_theta2: float
    square_y2: float
    square_theta2: float
    penalty: float
    drift_cost: float

    def objective(self) -> float:
        return (self.wick_y2 + self.wick_theta2 + self.cross_y2
                + self.cross_theta2 + self.square_y2 + self.square_theta2
                + self.penalty + self.drift_cost)


def _pairing(f: SpectralField, g: SpectralField) -> float:
    """integral f g dx for real f, g via Parseval over the common ball."""
    c = min(f.cutoff, g.cutoff)
    a = project_dirichlet(f, c)
    b = project_dirichlet(g, c)
    return float(np.sum(a.coeffs * np.conj(b.coeffs)).real)


def variational_terms(y1: SpectralField, y2: SpectralField, drift: DriftPair,
                      params: GibbsParams) -> VariationalTerms:
    """Evaluate the shifted coupling integral term by term.

    The shifted square :|Y1 + Theta1|^2: expands into the Wick square of Y1,
    the cross term 2 Re(Y1 conj(Theta1)) and |Theta1|^2; each is paired with
    Y2 and with Theta2, giving six integrals, and the taming penalty closes
    the list.  The Wick subtraction touches only the Y1 square (the shift is
    deterministic).
    """
    n = params.cutoff
    y1n = project_dirichlet(y1, n)
    y2n = project_dirichlet(y2, n)
    t1, t2 = drift_fields(drift, params)
    wick = wick_square(y1n, n)
    cross_half = convolve_truncated(y1n, conjugate_reflect(t1))
    cross = SpectralField(cross_half.cutoff,
                          cross_half.coeffs + np.conj(cross_half.coeffs[::-1, ::-1]),
                          hermitian=True)
    square = convolve_truncated(t1, conjugate_reflect(t1))
    square.hermitian = True
    shifted_integral = (wick[(0, 0)].real + cross[(0, 0)].real
                        + square[(0, 0)].real)
    penalty = params.penalty_a * abs(shifted_integral) ** params.penalty_alpha
    return VariationalTerms(
        wick_y2=_pairing(wick, y2n),
        wick_theta2=_pairing(wick, t2),
        cross_y2=_pairing(cross, y2n),
        cross_theta2=_pairing(cross, t2),
        square_y2=_pairing(square, y2n),
        square_theta2=_pairing(square, t2),
        penalty=penalty,
        drift_cost=drift.cost(),
    )


# ---------------------------------------------------------------------------
# gamma scan (phase-transition diagnostic)

SCAN_HEADER = "N,gamma,K,M,seed,Z_mean,Z_stderr,p2_moment,max_logw,ESS"


def _scan_cell(n, g, template: GibbsParams, m: int, seed: int, stream: int,
               chunk: int | None = None) -> dict:
    """One (N, gamma) cell of the scan grid; module level so a process pool
    can map it without re-deriving the stream layout."""
    params = GibbsParams(int(n), float(g), template.wick_bound,
                         template.penalty_a, template.penalty_alpha)
    est = estimate_partition(params, m, GaussianSampler(seed, stream),
                             chunk=chunk)
    return {
        "N": int(n), "gamma": float(g), "K": params.wick_bound,
        "M": m, "seed": seed, "Z_mean": est.mean,
        "Z_stderr": est.stderr, "p2_moment": est.p2_moment,
        "max_logw": est.max_log_density, "ESS": est.ess,
    }


def scan_gamma(cutoffs, gammas, template: GibbsParams, m: int,
               sampler: GaussianSampler, chunk: int | None = None):
    """Partition estimates over the (N, gamma) grid.

    Each cell gets its own stream (offset from the sampler's in row-major
    cell order), so cells are independent and any sub-grid rerun reproduces
    the full-grid numbers bit for bit.
    """
    if not cutoffs or not gammas:
        raise ValueError("cutoff and gamma lists must be nonempty")
    grid = [(n, g) for n in cutoffs for g in gammas]
    return [_scan_cell(n, g, template, m, sampler.seed, sampler.stream + cell,
                       chunk) for cell, (n, g) in enumerate(grid)]


def write_scan_csv(rows, path, digest: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if digest is not None:
            fh.write(f"# config_digest={digest}\n")
        fh.write(SCAN_HEADER + "\n")
        for r in rows:
            max_logw = r["max_logw"]
            fh.write(",".join([
                str(r["N"]), repr(float(r["gamma"])), repr(float(r["K"])),
                str(r["M"]), str(r["seed"]), repr(float(r["Z_mean"])),
                repr(float(r["Z_stderr"])), repr(float(r["p2_moment"])),
                "nan" if max_logw is None else repr(float(max_logw)),
                repr(float(r["ESS"])),
            ]) + "\n")


# ---------------------------------------------------------------------------
# Ensemble snapshots ("ZYE1")

_ENS_MAGIC = b"ZYE1"
_ENS_VERSION = 1
_ENS_HEADER = struct.Struct("<4sHIdddd qqQH")


def _member_dtype(cutoff: int) -> np.dtype:
    nb = len(lex_modes(cutoff))
    return np.dtype([("u", np.complex128, (nb,)), ("w", np.complex128, (nb,)),
                     ("v", np.complex128, (nb,)), ("logw", np.float64),
                     ("flag", np.uint8)], align=False)


def _lex_index(cutoff: int):
    modes = lex_modes(cutoff)
    i1 = np.array([a + cutoff for a, _ in modes])
    i2 = np.array([b + cutoff for _, b in modes])
    return i1, i2


def save_ensemble(ens: GibbsEnsemble, path, digest: str | None = None) -> None:
    """Snapshot: header (magic, version, params, seed metadata, digest,
    member count), then per member the three ball coefficient vectors in
    serialization order, the log weight, and the in-cutoff flag."""
    dig = (digest or "").encode("ascii")
    header = _ENS_HEADER.pack(_ENS_MAGIC, _ENS_VERSION, ens.params.cutoff,
                              ens.params.gamma, ens.params.wick_bound,
                              ens.params.penalty_a, ens.params.penalty_alpha,
                              ens.seed, ens.stream, len(ens), len(dig))
    i1, i2 = _lex_index(ens.params.cutoff)
    rec = np.empty(len(ens), dtype=_member_dtype(ens.params.cutoff))
    rec["u"] = ens.u[:, i1, i2]
    rec["w"] = ens.w[:, i1, i2]
    rec["v"] = ens.v[:, i1, i2]
    rec["logw"] = ens.log_weight
    rec["flag"] = ens.in_cutoff.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dig)
        fh.write(rec.tobytes())


def load_ensemble(path):
    """Inverse of save_ensemble; returns (GibbsEnsemble, digest)."""
    with open(path, "rb") as fh:
        raw = fh.read(_ENS_HEADER.size)
        if len(raw) < _ENS_HEADER.size:
            raise ValueError("truncated ensemble file")
        (magic, version, cutoff, gamma, k, a, alpha,
         seed, stream, m, dlen) = _ENS_HEADER.unpack(raw)
        if magic != _ENS_MAGIC:
            raise ValueError("not an ensemble snapshot (bad magic)")
        if version != _ENS_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        digest = fh.read(dlen).decode("ascii") or None
        dtype = _member_dtype(cutoff)
        body = fh.read()
    if len(body) != m * dtype.itemsize:
        raise ValueError("truncated ensemble file")
    rec = np.frombuffer(body, dtype=dtype)
    d = 2 * cutoff + 1
    i1, i2 = _lex_index(cutoff)
    params = GibbsParams(cutoff, gamma, k, a, alpha)
    fields = {}
    for name in ("u", "w", "v"):
        arr = np.zeros((m, d, d), dtype=np.complex128)
        arr[:, i1, i2] = rec[name]
        fields[name] = arr
    ens = GibbsEnsemble(params, fields["u"], fields["w"], fields["v"],
                        rec["logw"].copy(), rec["flag"].astype(bool),
                        seed, stream)
    return ens, digest
