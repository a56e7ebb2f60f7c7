"""Spectral field core: projection, shells, exact convolution, grids, snapshots."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zygibbs.spectral import (
    SpectralField,
    ball_mask,
    bracket,
    conjugate_reflect,
    convolve_truncated,
    field_from_grid,
    field_from_modes,
    grid_values,
    lex_modes,
    littlewood_paley,
    load_field,
    project_dirichlet,
    save_field,
    sobolev_norm_sq,
    zero_field,
)


def random_field(cutoff, seed, hermitian=False):
    rng = np.random.default_rng(seed)
    d = 2 * cutoff + 1
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    a *= ball_mask(cutoff)
    if hermitian:
        a = 0.5 * (a + np.conj(a[::-1, ::-1]))
    return SpectralField(cutoff, a, hermitian)


def convolve_oracle(f, g):
    """Direct quartic-cost double loop; the reference for convolve_truncated."""
    nf, ng = f.cutoff, g.cutoff
    nout = nf + ng
    out = zero_field(nout)
    for a1 in range(-nf, nf + 1):
        for a2 in range(-nf, nf + 1):
            fa = f[(a1, a2)]
            if fa == 0:
                continue
            for b1 in range(-ng, ng + 1):
                for b2 in range(-ng, ng + 1):
                    gb = g[(b1, b2)]
                    if gb == 0:
                        continue
                    out.coeffs[a1 + b1 + nout, a2 + b2 + nout] += fa * gb
    return out


def test_lex_modes_order_and_count():
    modes = lex_modes(2)
    assert modes.shape[0] == 13  # ball of radius 2 has 13 lattice points
    as_tuples = [tuple(m) for m in modes]
    assert as_tuples == sorted(as_tuples)
    assert as_tuples[0] == (-2, 0) and as_tuples[-1] == (2, 0)


def test_bracket_values():
    assert bracket((0, 0)) == 1.0
    assert bracket((1, 0)) == pytest.approx(np.sqrt(2.0))
    assert bracket((3, 4)) == pytest.approx(np.sqrt(26.0))


def test_field_rejects_off_ball_support():
    d = 2 * 2 + 1
    bad = np.zeros((d, d), dtype=complex)
    bad[0, 0] = 1.0  # mode (-2, -2), |n| > 2
    with pytest.raises(ValueError):
        SpectralField(2, bad)
    with pytest.raises(ValueError):
        field_from_modes(2, {(2, 2): 1.0})


def test_projector_idempotent_and_self_adjoint():
    f = random_field(6, seed=1)
    g = random_field(6, seed=2)
    pf = project_dirichlet(f, 3)
    assert project_dirichlet(pf, 3).coeffs == pytest.approx(pf.coeffs)
    # <Pf, g> = <f, Pg> with the l^2 pairing
    pg = project_dirichlet(g, 3)
    lhs = np.vdot(pf.coeffs, g.coeffs[3:10, 3:10])
    rhs = np.vdot(f.coeffs[3:10, 3:10], pg.coeffs)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    # no-op when m >= cutoff
    same = project_dirichlet(f, 6)
    assert np.array_equal(same.coeffs, f.coeffs)


def test_littlewood_paley_partitions_exactly():
    f = random_field(9, seed=3)
    pieces = littlewood_paley(f)
    assert set(pieces) == {1, 2, 4, 8, 16}
    total = sum(p.coeffs for p in pieces.values())
    assert np.array_equal(total, f.coeffs)
    # shells are disjoint: each mode appears in exactly one piece
    support = sum((p.coeffs != 0).astype(int) for p in pieces.values())
    assert support.max() <= 1
    # shell 1 holds |n| <= 1, shell 2 holds 1 < |n| <= 2
    assert pieces[1][(1, 0)] == f[(1, 0)]
    assert pieces[2][(1, 1)] == f[(1, 1)]
    assert pieces[2][(2, 0)] == f[(2, 0)]
    assert pieces[4][(2, 1)] == f[(2, 1)]


@pytest.mark.parametrize("nf,ng", [(2, 2), (3, 1), (4, 4)])
def test_convolution_matches_direct_loop(nf, ng):
    f = random_field(nf, seed=10 + nf)
    g = random_field(ng, seed=20 + ng)
    fast = convolve_truncated(f, g)
    slow = convolve_oracle(f, g)
    scale = np.max(np.abs(slow.coeffs)) or 1.0
    assert np.max(np.abs(fast.coeffs - slow.coeffs)) / scale < 1e-12


def test_convolution_hermitian_closure():
    f = random_field(3, seed=5, hermitian=True)
    g = random_field(3, seed=6, hermitian=True)
    h = convolve_truncated(f, g)
    assert h.hermitian
    assert h.is_hermitian(tol=1e-13)
    mixed = convolve_truncated(f, random_field(3, seed=7))
    assert not mixed.hermitian


def test_sobolev_norm_single_mode():
    f = field_from_modes(4, {(1, 0): 1.0})
    assert sobolev_norm_sq(f, 1.0) == pytest.approx(2.0)  # <(1,0)>^2 = 2
    assert sobolev_norm_sq(f, 0.0) == pytest.approx(1.0)
    assert sobolev_norm_sq(f, -1.0) == pytest.approx(0.5)


def test_grid_roundtrip_and_parseval():
    f = random_field(5, seed=8)
    g = 2 * 5 + 2
    vals = grid_values(f, g)
    back = field_from_grid(vals, 5)
    assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12
    # Parseval under the normalized measure: mean |f|^2 over the grid
    assert np.mean(np.abs(vals) ** 2) == pytest.approx(f.l2_norm_sq(), rel=1e-12)


def test_grid_too_small_rejected():
    f = random_field(5, seed=9)
    with pytest.raises(ValueError):
        grid_values(f, 11)  # needs >= 12


def test_hermitian_field_real_on_grid():
    f = random_field(4, seed=11, hermitian=True)
    vals = grid_values(f, 12)
    assert np.max(np.abs(vals.imag)) < 1e-12


def test_conjugate_reflect_is_pointwise_conjugate():
    f = random_field(3, seed=12)
    vals = grid_values(f, 10)
    vals_c = grid_values(conjugate_reflect(f), 10)
    assert np.max(np.abs(vals_c - np.conj(vals))) < 1e-12


def test_snapshot_roundtrip_bitexact(tmp_path):
    f = random_field(6, seed=13, hermitian=False)
    p = tmp_path / "f.zyf"
    save_field(f, p)
    g = load_field(p)
    assert g.cutoff == f.cutoff and g.hermitian == f.hermitian
    assert np.array_equal(g.coeffs, f.coeffs)
    # byte-identical on re-save
    p2 = tmp_path / "g.zyf"
    save_field(g, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_snapshot_layout_pinned(tmp_path):
    f = field_from_modes(1, {(0, 0): 1 + 2j, (1, 0): 3 - 4j}, hermitian=False)
    p = tmp_path / "f.zyf"
    save_field(f, p)
    raw = p.read_bytes()
    assert raw[:4] == b"ZYF1"
    assert int.from_bytes(raw[4:6], "little") == 1  # version
    assert int.from_bytes(raw[6:10], "little") == 1  # cutoff
    assert raw[10] == 0  # hermitian flag
    pairs = np.frombuffer(raw[11:], dtype="<f8").reshape(-1, 2)
    # ball of radius 1 in lex order: (-1,0), (0,-1), (0,0), (0,1), (1,0)
    assert pairs.shape == (5, 2)
    assert pairs[2].tolist() == [1.0, 2.0]
    assert pairs[4].tolist() == [3.0, -4.0]


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.zyf"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        load_field(p)
    q = tmp_path / "trunc.zyf"
    f = random_field(3, seed=14)
    save_field(f, q)
    q.write_bytes(q.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_field(q)


@settings(max_examples=30, deadline=None)
@given(
    cutoff=st.integers(min_value=1, max_value=5),
    m=st.integers(min_value=0, max_value=7),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_projector_norm_never_increases(cutoff, m, seed):
    f = random_field(cutoff, seed=seed)
    p = project_dirichlet(f, m)
    assert p.l2_norm_sq() <= f.l2_norm_sq() + 1e-12


@settings(max_examples=25, deadline=None)
@given(
    nf=st.integers(min_value=1, max_value=3),
    ng=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_convolution_commutes(nf, ng, seed):
    f = random_field(nf, seed=seed)
    g = random_field(ng, seed=seed + 1)
    fg = convolve_truncated(f, g)
    gf = convolve_truncated(g, f)
    assert np.max(np.abs(fg.coeffs - gf.coeffs)) < 1e-11
