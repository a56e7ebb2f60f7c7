"""Truncated flow: conservation, splitting order, symmetry, reduced variables."""

import numpy as np
import pytest

from zygibbs.dynamics import (
    FlowConfig,
    State,
    energy,
    evolve,
    from_reduced,
    mass,
    renormalized_square,
    rhs,
    step,
    to_reduced,
)
from zygibbs.randomfields import GaussianSampler, sigma_n, wick_mass
from zygibbs.spectral import SpectralField, ball_mask, field_from_modes, zero_field


def gibbs_scale_state(cutoff, gamma, seed=0, index=0):
    s = GaussianSampler(seed=seed)
    u = s.schrodinger(cutoff, index)
    w, v = s.wave_pair(cutoff, gamma, index)
    return State(u, w, v, gamma)


def test_renormalized_square_zero_mode_and_oracle():
    s = GaussianSampler(seed=1)
    u = s.schrodinger(3, index=0)
    rs = renormalized_square(u, 3)
    assert rs[(0, 0)] == 0.0
    assert rs.cutoff == 3
    assert rs.is_hermitian(tol=0.0)
    # direct loop oracle at a couple of modes
    for n in [(1, 0), (2, -1), (-1, 2)]:
        acc = 0.0 + 0.0j
        for a1 in range(-3, 4):
            for a2 in range(-3, 4):
                b1, b2 = a1 - n[0], a2 - n[1]
                acc += u[(a1, a2)] * np.conj(u[(b1, b2)])
        assert rs[n] == pytest.approx(acc, abs=1e-12)


def test_rhs_matches_direct_convolution():
    st = gibbs_scale_state(3, 0.5, seed=2)
    du, dw, dv = rhs(st)
    n = 3
    for m in [(0, 0), (1, 0), (-2, 1), (0, 3)]:
        conv = 0.0 + 0.0j
        for a1 in range(-n, n + 1):
            for a2 in range(-n, n + 1):
                conv += st.u[(a1, a2)] * st.w[(m[0] - a1, m[1] - a2)]
        m2 = m[0] ** 2 + m[1] ** 2
        expect = -1j * m2 * st.u[m] - 1j * conv
        assert du[m] == pytest.approx(expect, abs=1e-12)
        assert dw[m] == st.v[m]
        rs = renormalized_square(st.u, n)
        b2 = 1.0 + m2
        expect_v = -b2 * st.w[m] - b2 ** st.gamma * rs[m]
        assert dv[m] == pytest.approx(expect_v, abs=1e-12)


def test_linear_flow_is_exact_phase():
    # with u = single mode and coupling fields zero, the step is the free flow
    u = field_from_modes(4, {(2, 1): 1.5 - 0.5j})
    st = State(u, zero_field(4, True), zero_field(4, True), 0.5)
    cfg = FlowConfig(dt=0.01)
    out = st
    for _ in range(10):
        out = step(out, cfg)
    t = 0.1
    expect = (1.5 - 0.5j) * np.exp(-1j * 5.0 * t)
    assert out.u[(2, 1)] == pytest.approx(expect, abs=1e-12)


def test_zero_mode_oscillator_exact():
    st = gibbs_scale_state(8, 0.5, seed=3)
    w0, v0 = st.w[(0, 0)], st.v[(0, 0)]
    cfg = FlowConfig(dt=1e-3)
    traj = evolve(st, 1.0, cfg, record_every=200)
    for t, w0_t in zip(traj.t, traj.w0):
        expect = w0 * np.cos(t) + v0 * np.sin(t)
        assert w0_t == pytest.approx(expect, abs=1e-8)


def smooth_state(cutoff, gamma, seed, decay=2.0):
    """Random state with decay powers of extra smoothness over the Gibbs
    scale; used where the splitting error itself is under test."""
    from zygibbs.spectral import bracket_sq_grid

    st = gibbs_scale_state(cutoff, gamma, seed=seed)
    mult = bracket_sq_grid(cutoff) ** (-decay / 2.0) * ball_mask(cutoff)
    return State(SpectralField(cutoff, st.u.coeffs * mult),
                 SpectralField(cutoff, st.w.coeffs * mult, hermitian=True),
                 SpectralField(cutoff, st.v.coeffs * mult, hermitian=True), gamma)


def test_mass_and_renormalized_energy_conserved():
    cfg = FlowConfig(dt=1e-3)
    # rough (statistical-scale) data: mass is conserved to roundoff and the
    # energy drift is pure splitting error, order 1e-5 at dt * N^2 = 0.256
    st = gibbs_scale_state(16, 0.5, seed=4)
    traj = evolve(st, 1.0, cfg, record_every=100)
    m0, e0 = traj.mass[0], traj.energy_renorm[0]
    assert np.max(np.abs(traj.mass - m0)) / abs(m0) < 1e-8
    assert np.max(np.abs(traj.energy_renorm - e0)) / abs(e0) < 2e-5
    # the plain energy is not conserved (zero-mode oscillation), visibly so
    assert np.max(np.abs(traj.energy_plain - traj.energy_plain[0])) > 1e-4
    # well-resolved data: drift measures integrator accuracy alone
    st = smooth_state(16, 0.5, seed=11)
    traj = evolve(st, 1.0, cfg, record_every=10)
    m0, e0 = traj.mass[0], traj.energy_renorm[0]
    assert np.max(np.abs(traj.mass - m0)) / abs(m0) < 1e-8
    assert np.max(np.abs(traj.energy_renorm - e0)) / abs(e0) < 1e-6


def test_splitting_is_second_order():
    st = gibbs_scale_state(8, 0.5, seed=5)
    drift = {}
    for dt in (4e-3, 2e-3):
        traj = evolve(st, 0.5, FlowConfig(dt=dt), record_every=25)
        e0 = traj.energy_renorm[0]
        drift[dt] = np.max(np.abs(traj.energy_renorm - e0)) / abs(e0)
    ratio = drift[4e-3] / drift[2e-3]
    assert 3.2 < ratio < 4.8


def test_hermitian_symmetry_preserved_exactly():
    st = gibbs_scale_state(8, 0.7, seed=6)
    out = st
    cfg = FlowConfig(dt=5e-3)
    for _ in range(20):
        out = step(out, cfg)
    assert out.w.is_hermitian(tol=0.0)
    assert out.v.is_hermitian(tol=0.0)


def test_gauge_invariance_of_diagnostics():
    st = gibbs_scale_state(8, 0.5, seed=7)
    phase = np.exp(1j * 0.73)
    st2 = State(SpectralField(8, st.u.coeffs * phase * ball_mask(8)),
                st.w.copy(), st.v.copy(), st.gamma)
    cfg = FlowConfig(dt=2e-3)
    t1 = evolve(st, 0.2, cfg, record_every=20)
    t2 = evolve(st2, 0.2, cfg, record_every=20)
    for name in ("mass", "energy_renorm", "energy_plain", "wick_mass"):
        assert getattr(t1, name) == pytest.approx(getattr(t2, name), rel=1e-10)
    assert t1.w0 == pytest.approx(t2.w0, abs=1e-10)


def test_wick_mass_diagnostic_matches_field_op():
    st = gibbs_scale_state(6, 0.3, seed=8)
    traj = evolve(st, 0.01, FlowConfig(dt=1e-2), record_every=1)
    assert traj.wick_mass[0] == pytest.approx(wick_mass(st.u, 6), abs=1e-12)
    assert traj.mass[0] == pytest.approx(mass(st), abs=1e-13)


def test_energy_components_against_direct_sums():
    st = gibbs_scale_state(5, 0.4, seed=9)
    e = energy(st)
    n1 = np.arange(-5, 6)[:, None]
    n2 = np.arange(-5, 6)[None, :]
    absn2 = n1 ** 2 + n2 ** 2
    br2 = 1.0 + absn2
    rs = renormalized_square(st.u, 5)
    direct = (0.5 * np.sum(absn2 * np.abs(st.u.coeffs) ** 2)
              + 0.5 * np.real(np.sum(rs.coeffs * np.conj(st.w.coeffs)))
              + 0.25 * np.sum(br2 ** 0.6 * np.abs(st.w.coeffs) ** 2)
              + 0.25 * np.sum(br2 ** (-0.4) * np.abs(st.v.coeffs) ** 2))
    assert e["renorm"] == pytest.approx(direct, rel=1e-12)
    w0 = st.w[(0, 0)].real
    assert e["plain"] == pytest.approx(direct + 0.5 * mass(st) * w0, rel=1e-12)


def test_reduced_variables_roundtrip_and_example():
    st = gibbs_scale_state(6, 0.5, seed=10)
    wp, wm = to_reduced(st)
    back = from_reduced(wp, wm, st.gamma, st.u)
    assert np.max(np.abs(back.w.coeffs - st.w.coeffs)) < 1e-14
    assert np.max(np.abs(back.v.coeffs - st.v.coeffs)) < 1e-14
    # w = 0 and vhat(a) = <a> maps to what_+(a) = i
    a = (2, 1)
    br_a = np.sqrt(1.0 + 5.0)
    v = field_from_modes(6, {a: br_a, (-a[0], -a[1]): br_a}, hermitian=True)
    st2 = State(zero_field(6), zero_field(6, True), v, 0.5)
    wp2, wm2 = to_reduced(st2)
    assert wp2[a] == pytest.approx(1j)
    assert wm2[a] == pytest.approx(-1j)


def test_dt_stability_warning():
    st = gibbs_scale_state(8, 0.5, seed=11)
    with pytest.warns(RuntimeWarning):
        step(st, FlowConfig(dt=0.02))  # dt * N^2 = 1.28 > 0.5


def test_trajectory_csv_layout(tmp_path):
    st = gibbs_scale_state(4, 0.5, seed=12)
    traj = evolve(st, 0.02, FlowConfig(dt=1e-2), record_every=1)
    p = tmp_path / "traj.csv"
    traj.write_csv(p, digest="abc123")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_digest=abc123"
    assert lines[1] == "t,mass,energy_renorm,energy_plain,wick_mass,w0_re,w0_im"
    assert len(lines) == 2 + traj.t.size
