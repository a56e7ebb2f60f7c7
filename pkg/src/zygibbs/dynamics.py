"""Truncated flow of the renormalized Schrodinger-wave system.

On the Fourier ball {|n| <= N} the system reads

    d/dt uhat(n) = -i |n|^2 uhat(n) - i F(pi_N(u w))(n)
    d/dt what(n) = vhat(n)
    d/dt vhat(n) = -<n>^2 what(n) - <n>^{2 gamma} F(pi_N rsq(u))(n)

where rsq(u) is the renormalized square |u|^2 - avg|u|^2 (zero mode removed).
The renormalization decouples the zero mode of the wave pair, which then
oscillates as what(0, t) = what(0) cos t + vhat(0) sin t.

Time stepping is Strang splitting: an exact linear half flow (Schrodinger
phases; wave rotation by cos/sin of <n> dt/2), an rk4 substep for the coupling
terms with the linear parts frozen, then the second linear half flow.  The
scheme is second order, preserves hermitian symmetry of (w, v) exactly,
conserves mass to roundoff (the coupling substep is an isometry of u, and the
norm is restored after rk4), and conserves the renormalized energy up to
integrator error.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft2, ifft2, next_fast_len

from .randomfields import sigma_n
from .spectral import SpectralField, ball_mask, bracket_sq_grid


@dataclass
class State:
    """One configuration (u, w, v) at a common cutoff, with the coupling
    exponent gamma carried along (it enters the wave forcing)."""

    u: SpectralField
    w: SpectralField
    v: SpectralField
    gamma: float

    def __post_init__(self):
        if not (self.u.cutoff == self.w.cutoff == self.v.cutoff):
            raise ValueError("u, w, v must share one cutoff")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not (self.w.hermitian and self.v.hermitian):
            raise ValueError("wave fields must be hermitian (real-valued)")

    @property
    def cutoff(self) -> int:
        return self.u.cutoff

    def copy(self) -> "State":
        return State(self.u.copy(), self.w.copy(), self.v.copy(), self.gamma)


@dataclass
class FlowConfig:
    dt: float
    substeps: int = 1
    stability_ceiling: float = 0.5  # warn when dt * N^2 exceeds this
    coupling: bool = True  # False switches off u<->w forcing (linear flow)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass
class Trajectory:
    """Recorded diagnostics of one evolution; columns match the CSV layout."""

    t: np.ndarray
    mass: np.ndarray
    energy_renorm: np.ndarray
    energy_plain: np.ndarray
    wick_mass: np.ndarray
    w0: np.ndarray  # complex zero mode of w
    final: State = field(repr=False, default=None)

    def write_csv(self, path, digest: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if digest is not None:
                fh.write(f"# config_digest={digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "mass", "energy_renorm", "energy_plain",
                             "wick_mass", "w0_re", "w0_im"])
            for k in range(self.t.size):
                writer.writerow([repr(float(self.t[k])), repr(float(self.mass[k])),
                                 repr(float(self.energy_renorm[k])),
                                 repr(float(self.energy_plain[k])),
                                 repr(float(self.wick_mass[k])),
                                 repr(float(self.w0[k].real)), repr(float(self.w0[k].imag))])


class BatchKernel:
    """Vectorized Strang stepper for a stack of states (B, 2N+1, 2N+1).

    All members share (cutoff, gamma, dt).  Products are evaluated on a grid
    of size >= 3N+1 so that reading the ball |n| <= N back from the product
    of two cutoff-N fields is alias-free and exact.
    """

    def __init__(self, cutoff: int, gamma: float, dt: float, substeps: int = 1,
                 coupling: bool = True):
        self.cutoff = cutoff
        self.gamma = gamma
        self.dt = dt
        self.substeps = substeps
        self.coupling = coupling
        self.ball = ball_mask(cutoff)
        br2 = bracket_sq_grid(cutoff)
        self.br2 = br2
        self.absn2 = br2 - 1.0
        self.br2g = br2 ** gamma * self.ball
        (self.u_phase, self.w_cos,
         self.w_sin_over, self.w_sin_times) = self._rotation(0.5 * dt)
        # product of two cutoff-N fields read back on the ball is alias-free
        # as soon as G > 3N; the buffers below are reused across calls, so a
        # kernel instance is not safe to share between threads
        self.g = next_fast_len(3 * cutoff + 1)
        self.idx = np.arange(-cutoff, cutoff + 1) % self.g
        # the mode square splits into four contiguous corner blocks of the
        # padded grid; block copies beat fancy indexing on the hot path
        neg = slice(self.g - cutoff, self.g)
        pos = slice(0, cutoff + 1)
        lo = slice(0, cutoff)
        hi = slice(cutoff, 2 * cutoff + 1)
        self._blocks = [(big_r, big_c, a_r, a_c)
                        for big_r, a_r in ((neg, lo), (pos, hi))
                        for big_c, a_c in ((neg, lo), (pos, hi))]
        self._mneg_j_ball = -1j * self.ball
        self._mbr2g = -self.br2g
        self._pad = None
        self._sq = None
        self._t1 = None

    def _buffers(self, lead, dtype):
        shape = lead + (self.g, self.g)
        if self._pad is None or self._pad.shape != shape or self._pad.dtype != dtype:
            real = np.zeros(1, dtype=dtype).real.dtype
            self._pad = np.zeros(shape, dtype=dtype)
            self._sq = np.zeros(shape, dtype=dtype)
            self._t1 = np.empty(shape, dtype=real)
            self._stage = np.empty(lead + self.ball.shape, dtype=dtype)
        return self._pad, self._sq, self._t1

    # -- grid helpers ------------------------------------------------------
    def _values(self, a: np.ndarray) -> np.ndarray:
        big, _, _ = self._buffers(a.shape[:-2], a.dtype)
        for big_r, big_c, a_r, a_c in self._blocks:
            big[..., big_r, big_c] = a[..., a_r, a_c]
        return ifft2(big, norm="forward")

    def _ball_coeffs(self, vals: np.ndarray) -> np.ndarray:
        spec = fft2(vals, norm="forward", overwrite_x=True)
        d = 2 * self.cutoff + 1
        out = np.empty(vals.shape[:-2] + (d, d), dtype=vals.dtype)
        for big_r, big_c, a_r, a_c in self._blocks:
            out[..., a_r, a_c] = spec[..., big_r, big_c]
        out *= self.ball
        return out

    def _square_coeffs(self, u_vals: np.ndarray) -> np.ndarray:
        """Ball coefficients of |u|^2 (grid values), exactly hermitian,
        zero mode removed."""
        _, sq, t1 = self._buffers(u_vals.shape[:-2], u_vals.dtype)
        np.square(u_vals.real, out=sq.real)
        np.square(u_vals.imag, out=t1)
        sq.real += t1
        sq.imag = 0.0  # the in-place fft below scratches the buffer
        rs = self._ball_coeffs(sq)
        rs += np.conj(rs[..., ::-1, ::-1])  # enforce exact symmetry
        rs *= 0.5
        rs[..., self.cutoff, self.cutoff] = 0.0
        return rs

    def renormalized_square(self, u: np.ndarray) -> np.ndarray:
        """|u|^2 with its mean removed, cutoff N, exactly hermitian."""
        return self._square_coeffs(self._values(u))

    # -- split steps -------------------------------------------------------
    def _rotation(self, t: float):
        """Exact linear-flow multipliers for time t."""
        br = np.sqrt(self.br2)
        return (np.exp(-1j * self.absn2 * t) * self.ball,
                np.cos(br * t) * self.ball,
                np.sin(br * t) / br * self.ball,
                np.sin(br * t) * br * self.ball)

    @staticmethod
    def _apply_linear(u, w, v, phase, cos, sin_over, sin_times):
        u *= phase
        tmp = w * sin_times
        w *= cos
        w += v * sin_over
        v *= cos
        v -= tmp

    def half_linear(self, u, w, v):
        self._apply_linear(u, w, v, self.u_phase, self.w_cos,
                           self.w_sin_over, self.w_sin_times)

    def _coupling_rhs(self, u, w_vals):
        """du = -i pi_N(u w), dv = -<n>^{2 gamma} rsq(u) with w frozen."""
        u_vals = self._values(u)
        dv = self._square_coeffs(u_vals)
        dv *= self._mbr2g
        u_vals *= w_vals
        du = self._ball_coeffs(u_vals)
        du *= self._mneg_j_ball
        return du, dv

    @staticmethod
    def _abs_sq_sum(a):
        m = np.einsum("...ij,...ij->...", a.real, a.real)
        m += np.einsum("...ij,...ij->...", a.imag, a.imag)
        return m[..., None, None]

    def nonlinear(self, u, w, v):
        w_vals = self._values(w)
        h = self.dt / self.substeps
        st = self._stage
        for _ in range(self.substeps):
            m0 = self._abs_sq_sum(u)
            k1u, k1v = self._coupling_rhs(u, w_vals)
            np.multiply(k1u, 0.5 * h, out=st)
            st += u
            k2u, k2v = self._coupling_rhs(st, w_vals)
            np.multiply(k2u, 0.5 * h, out=st)
            st += u
            k3u, k3v = self._coupling_rhs(st, w_vals)
            np.multiply(k3u, h, out=st)
            st += u
            k4u, k4v = self._coupling_rhs(st, w_vals)
            for acc, k1, k2, k3, k4 in ((u, k1u, k2u, k3u, k4u),
                                        (v, k1v, k2v, k3v, k4v)):
                k1 += k4
                k2 += k3
                k2 *= 2.0
                k1 += k2
                k1 *= h / 6.0
                acc += k1
            # the exact coupling flow is an isometry of u (w is real); restore
            # the norm rk4 dissipates, an O(h^6) correction per substep
            m1 = self._abs_sq_sum(u)
            np.divide(m0, m1, out=m0, where=m1 > 0.0)
            np.sqrt(m0, out=m0)
            u *= m0

    def step(self, u, w, v):
        self.half_linear(u, w, v)
        if self.coupling:
            self.nonlinear(u, w, v)
        self.half_linear(u, w, v)

    def run(self, u, w, v, steps: int):
        """steps Strang steps with the interior half flows fused into full
        rotations; with the coupling off the whole span is one exact rotation.
        Ends at the same time as `step` applied `steps` times (the interior
        composition differs only in roundoff)."""
        if steps < 0:
            raise ValueError("steps must be nonnegative")
        if steps == 0:
            return
        if not self.coupling:
            self._apply_linear(u, w, v, *self._rotation(self.dt * steps))
            return
        full = self._rotation(self.dt)
        self.half_linear(u, w, v)
        self.nonlinear(u, w, v)
        for _ in range(steps - 1):
            self._apply_linear(u, w, v, *full)
            self.nonlinear(u, w, v)
        self.half_linear(u, w, v)

    # -- diagnostics -------------------------------------------------------
    def diagnostics(self, u, w, v, sigma: float) -> dict:
        axes = (-2, -1)
        mass = np.sum(np.abs(u) ** 2, axis=axes).real
        kinetic = 0.5 * np.sum(self.absn2 * np.abs(u) ** 2, axis=axes).real
        rs = self.renormalized_square(u)
        coupling = 0.5 * np.sum(rs * np.conj(w), axis=axes).real
        wave = (0.25 * np.sum(self.br2 ** (1.0 - self.gamma) * np.abs(w) ** 2, axis=axes)
                + 0.25 * np.sum(self.br2 ** (-self.gamma) * np.abs(v) ** 2, axis=axes)).real
        w0 = w[..., self.cutoff, self.cutoff]
        e_ren = kinetic + coupling + wave
        # plain coupling keeps the mean: adds (1/2) * mass * Re w0
        e_plain = e_ren + 0.5 * mass * w0.real
        return {"mass": mass, "energy_renorm": e_ren, "energy_plain": e_plain,
                "wick_mass": mass - sigma, "w0": w0}


def _warn_dt(cfg: FlowConfig, cutoff: int) -> None:
    if cfg.dt * cutoff * cutoff > cfg.stability_ceiling:
        warnings.warn(
            f"dt * N^2 = {cfg.dt * cutoff * cutoff:.3g} exceeds the stability "
            f"ceiling {cfg.stability_ceiling}; splitting error may dominate",
            RuntimeWarning, stacklevel=3)


def renormalized_square(u: SpectralField, cutoff: int) -> SpectralField:
    """|u_N|^2 - avg |u_N|^2 as a field with cutoff N (zero mode exactly 0)."""
    kern = BatchKernel(cutoff, 0.0, 1.0)
    d = 2 * cutoff + 1
    lo = u.cutoff - cutoff
    if lo < 0:
        raise ValueError("renormalized_square needs cutoff(u) >= cutoff")
    sub = u.coeffs[lo:lo + d, lo:lo + d] * ball_mask(cutoff)
    rs = kern.renormalized_square(sub[None, ...])[0]
    return SpectralField(cutoff, rs, hermitian=True)


def rhs(state: State):
    """Right-hand side (du, dw, dv) of the truncated renormalized system."""
    n = state.cutoff
    kern = BatchKernel(n, state.gamma, 1.0)
    u, w, v = state.u.coeffs, state.w.coeffs, state.v.coeffs
    du_nl, dv_nl = kern._coupling_rhs(u[None, ...], kern._values(w[None, ...]))
    du = -1j * kern.absn2 * u + du_nl[0]
    dw = v.copy()
    dv = -kern.br2 * w * kern.ball + dv_nl[0]
    return (SpectralField(n, du), SpectralField(n, dw, hermitian=True),
            SpectralField(n, dv, hermitian=True))


def step(state: State, cfg: FlowConfig) -> State:
    """One Strang step of size cfg.dt."""
    _warn_dt(cfg, state.cutoff)
    kern = BatchKernel(state.cutoff, state.gamma, cfg.dt, cfg.substeps, cfg.coupling)
    u = state.u.coeffs.copy()[None, ...]
    w = state.w.coeffs.copy()[None, ...]
    v = state.v.coeffs.copy()[None, ...]
    kern.step(u, w, v)
    return State(SpectralField(state.cutoff, u[0]),
                 SpectralField(state.cutoff, w[0], hermitian=True),
                 SpectralField(state.cutoff, v[0], hermitian=True), state.gamma)


def mass(state: State) -> float:
    return state.u.l2_norm_sq()


def energy(state: State) -> dict:
    """Energy functionals of the flow.

    `renorm` uses the mean-free coupling (1/2) <rsq(u), w> and is conserved by
    the truncated flow; `plain` keeps the full coupling (1/2) integral |u|^2 w,
    which differs by (1/2) mass * Re what(0) and oscillates with the decoupled
    zero mode.
    """
    kern = BatchKernel(state.cutoff, state.gamma, 1.0)
    d = kern.diagnostics(state.u.coeffs[None, ...], state.w.coeffs[None, ...],
                         state.v.coeffs[None, ...], sigma_n(state.cutoff))
    return {"renorm": float(d["energy_renorm"][0]), "plain": float(d["energy_plain"][0])}


def evolve(state: State, t_final: float, cfg: FlowConfig, record_every: int = 1) -> Trajectory:
    """Integrate to t_final, recording diagnostics every record_every steps."""
    _warn_dt(cfg, state.cutoff)
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    n_steps = int(round(t_final / cfg.dt))
    if abs(n_steps * cfg.dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be an integer number of steps")
    kern = BatchKernel(state.cutoff, state.gamma, cfg.dt, cfg.substeps, cfg.coupling)
    sigma = sigma_n(state.cutoff)
    u = state.u.coeffs.copy()[None, ...]
    w = state.w.coeffs.copy()[None, ...]
    v = state.v.coeffs.copy()[None, ...]
    rows = []

    def record(t):
        d = kern.diagnostics(u, w, v, sigma)
        rows.append((t, d["mass"][0], d["energy_renorm"][0], d["energy_plain"][0],
                     d["wick_mass"][0], d["w0"][0]))

    record(0.0)
    for k in range(1, n_steps + 1):
        kern.step(u, w, v)
        if k % record_every == 0 or k == n_steps:
            record(k * cfg.dt)
    cols = list(zip(*rows))
    final = State(SpectralField(state.cutoff, u[0]),
                  SpectralField(state.cutoff, w[0], hermitian=True),
                  SpectralField(state.cutoff, v[0], hermitian=True), state.gamma)
    return Trajectory(np.array(cols[0]), np.array(cols[1], dtype=float),
                      np.array(cols[2], dtype=float), np.array(cols[3], dtype=float),
                      np.array(cols[4], dtype=float), np.array(cols[5]), final)


def to_reduced(state: State):
    """Reduced variables: what_pm = what +- i <n>^{-1} vhat.

    They diagonalize the linear wave flow; the original field is recovered as
    w = (w_+ + w_-)/2 and v = <n>(w_+ - w_-)/(2i).
    """
    br = np.sqrt(bracket_sq_grid(state.cutoff))
    wp = state.w.coeffs + 1j * state.v.coeffs / br
    wm = state.w.coeffs - 1j * state.v.coeffs / br
    n = state.cutoff
    return (SpectralField(n, wp * ball_mask(n)), SpectralField(n, wm * ball_mask(n)))


def from_reduced(wp: SpectralField, wm: SpectralField, gamma: float, u: SpectralField) -> State:
    n = wp.cutoff
    br = np.sqrt(bracket_sq_grid(n))
    w = 0.5 * (wp.coeffs + wm.coeffs)
    v = -0.5j * br * (wp.coeffs - wm.coeffs)
    mask = ball_mask(n)
    return State(u, SpectralField(n, w * mask, hermitian=True),
                 SpectralField(n, v * mask, hermitian=True), gamma)
