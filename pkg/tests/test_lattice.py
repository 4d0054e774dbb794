import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from biphoton_edge.lattice import (
    DisorderSpec,
    HaldaneSpec,
    LatticeError,
    QheSpec,
    apply_disorder,
    build_haldane,
    build_qhe,
    disorder_potential,
    operator_hash,
    plaquette_phases,
    region_mask,
)


def test_single_hexagon():
    H, geom = build_haldane(HaldaneSpec(1, 1))
    assert geom.n_sites == 6
    assert len(geom.bonds) == 6
    assert len(geom.nnn_bonds) == 6
    assert np.abs(H - H.conj().T).max() == 0


@pytest.mark.parametrize("nx,ny,n", [(1, 1, 6), (10, 90, 2000), (20, 90, 3820), (10, 180, 3980)])
def test_haldane_site_count(nx, ny, n):
    _, geom = build_haldane(HaldaneSpec(nx, ny))
    assert geom.n_sites == n == 2 * (2 * ny + 1) + (nx - 1) * (2 * ny + 2)


def test_haldane_matrix_elements():
    spec = HaldaneSpec(3, 6, t2=0.2, beta=0.3)
    H, geom = build_haldane(spec)
    i, j = geom.bonds.T
    assert np.all(H[i, j] == spec.kappa1)
    a, b = geom.nnn_bonds.T
    assert np.allclose(np.abs(H[a, b]), spec.t2)
    # phi = pi/2: purely imaginary +-i t2
    assert np.allclose(H[a, b].real, 0, atol=1e-15)
    assert np.allclose(np.diag(H), 0.3)
    # bond lengths 1 and sqrt(3)
    p = geom.positions
    assert np.allclose(np.linalg.norm(p[i] - p[j], axis=1), 1)
    assert np.allclose(np.linalg.norm(p[a] - p[b], axis=1), np.sqrt(3))


def test_haldane_locality():
    H, geom = build_haldane(HaldaneSpec(4, 8))
    allowed = np.eye(geom.n_sites, dtype=bool)
    for bonds in (geom.bonds, geom.nnn_bonds):
        allowed[bonds[:, 0], bonds[:, 1]] = allowed[bonds[:, 1], bonds[:, 0]] = True
    assert not np.any(H[~allowed])


@pytest.mark.parametrize("phi", [np.pi / 2, 0.3])
def test_haldane_nnn_triangles_carry_same_flux(phi):
    # traversed in the same rotational sense, both NNN triangles of a hexagon
    # pick up the same phase 3*phi (up to sign convention)
    H, geom = build_haldane(HaldaneSpec(1, 1, phi=phi))
    c = geom.positions.mean(axis=0)
    order = np.argsort(np.arctan2(*(geom.positions - c).T))
    p = order
    loop_a = H[p[0], p[2]] * H[p[2], p[4]] * H[p[4], p[0]]
    loop_b = H[p[1], p[3]] * H[p[3], p[5]] * H[p[5], p[1]]
    assert np.isclose(loop_a, loop_b)
    assert np.isclose(abs(np.angle(loop_a)), abs(np.angle(np.exp(3j * phi))))


def test_input_edge_is_top_row_left_to_right():
    _, geom = build_haldane(HaldaneSpec())
    edge = geom.input_edge
    assert len(edge) == 90
    x, y = geom.positions[edge].T
    assert np.all(x == x.min()) and x.min() == geom.positions[:, 0].min()
    assert np.all(np.diff(y) > 0)
    assert np.all(geom.coordination[edge] == 2)
    with pytest.raises(LatticeError):
        geom.input_sites(91)


def test_haldane_regions():
    _, geom = build_haldane(HaldaneSpec())
    mid = region_mask(geom, "middle")
    y = geom.positions[mid, 1]
    hex_w = np.sqrt(3)
    assert y.min() >= 35 * hex_w - 1e-9 and y.max() < 55 * hex_w + 1e-9
    assert set(np.unique(geom.region)) == {0, 1, 2}


@pytest.mark.parametrize("bad", [dict(nx=0), dict(ny=0), dict(t2=-0.1), dict(kappa1=0.0)])
def test_haldane_rejects_invalid(bad):
    with pytest.raises(LatticeError):
        HaldaneSpec(**bad)


def test_qhe_plaquette_flux_2x2():
    H, geom = build_qhe(QheSpec(2, 2, phi=np.pi / 2, disorder_length=0))
    assert np.allclose(plaquette_phases(H, geom), np.pi / 2)
    a, b, c, d = 0, 2, 3, 1
    assert np.isclose(H[a, b] * H[b, c] * H[c, d] * H[d, a], np.exp(1j * np.pi / 2))


def test_qhe_default_size_and_gauge():
    H, geom = build_qhe(QheSpec())
    assert geom.n_sites == 3600
    ny = geom.ny
    # row hops real, column hops carry exp(-i phi (m+1))
    assert H[0, 1] == 1.0
    m = 7
    assert np.isclose(H[m, m + ny], np.exp(-1j * np.pi / 2 * (m + 1)))
    assert np.array_equal(geom.input_edge, np.arange(20) * ny)


def test_qhe_zero_flux_is_real_symmetric():
    H, _ = build_qhe(QheSpec(4, 6, phi=0.0, disorder_length=2))
    assert np.all(H.imag == 0)
    assert np.array_equal(H, H.T)


@pytest.mark.parametrize("bad", [dict(nx=1), dict(ny=0), dict(kappa=0)])
def test_qhe_rejects_invalid(bad):
    with pytest.raises(LatticeError):
        QheSpec(**bad)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(2, 6), ny=st.integers(2, 8), phi=st.floats(-np.pi, np.pi))
def test_qhe_flux_quantization(nx, ny, phi):
    H, geom = build_qhe(QheSpec(nx, ny, phi=phi, disorder_length=0))
    assert np.abs(H - H.conj().T).max() == 0
    diff = np.angle(np.exp(1j * (plaquette_phases(H, geom) - phi)))
    assert np.abs(diff).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 4), ny=st.integers(1, 8), t2=st.floats(0, 1), phi=st.floats(-np.pi, np.pi))
def test_haldane_hermitian(nx, ny, t2, phi):
    H, geom = build_haldane(HaldaneSpec(nx, ny, t2=t2, phi=phi))
    assert np.abs(H - H.conj().T).max() == 0
    assert geom.n_sites == H.shape[0]


def test_disorder_zero_sigma_is_identity():
    H, geom = build_haldane(HaldaneSpec(2, 10))
    out = apply_disorder(H, geom, DisorderSpec(0.0))
    assert np.array_equal(out, H)
    assert out is not H


def test_disorder_deterministic_and_input_untouched():
    H, geom = build_haldane(HaldaneSpec(2, 30))
    H0 = H.copy()
    a = apply_disorder(H, geom, DisorderSpec(1.0, seed=7))
    b = apply_disorder(H, geom, DisorderSpec(1.0, seed=7))
    c = apply_disorder(H, geom, DisorderSpec(1.0, seed=8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(H, H0)


def test_disorder_support_is_diagonal_and_middle():
    H, geom = build_qhe(QheSpec(6, 40))
    out = apply_disorder(H, geom, DisorderSpec(1.0, seed=3))
    delta = out - H
    assert np.count_nonzero(delta - np.diag(np.diag(delta))) == 0
    d = np.diag(delta).real
    mid = region_mask(geom, "middle")
    assert np.all(d[~mid] == 0) and np.all(d[mid] != 0)


def test_disorder_sparse_matches_dense():
    H, geom = build_haldane(HaldaneSpec(2, 30))
    d = DisorderSpec(0.5, seed=1)
    dense = apply_disorder(H, geom, d)
    sparse = apply_disorder(sp.csr_matrix(H), geom, d)
    assert np.array_equal(sparse.toarray(), dense)


def test_disorder_statistics():
    _, geom = build_haldane(HaldaneSpec())
    mid = region_mask(geom, "middle")
    draws = []
    seed = 0
    while sum(len(x) for x in draws) < 100_000:
        draws.append(disorder_potential(geom, DisorderSpec(1.0, seed=seed))[mid])
        seed += 1
    x = np.concatenate(draws)
    n = len(x)
    assert abs(x.mean()) <= 3 / np.sqrt(n)
    assert abs(x.std() - 1) <= 0.02


def test_disorder_dimension_mismatch():
    H, _ = build_haldane(HaldaneSpec(1, 2))
    _, geom = build_haldane(HaldaneSpec(1, 3))
    with pytest.raises(LatticeError):
        apply_disorder(H, geom, DisorderSpec(1.0))


def test_region_larger_than_ribbon_is_clipped():
    _, geom = build_haldane(HaldaneSpec(1, 1))
    assert np.all(region_mask(geom, "middle"))
    with pytest.raises(LatticeError):
        HaldaneSpec(1, 10, disorder_start=5, disorder_length=8)


def test_geometry_csv(tmp_path):
    _, geom = build_haldane(HaldaneSpec(1, 2))
    path = geom.to_csv(tmp_path / "g.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "site,x,y,region,sublattice,coordination,input_index"
    assert len(lines) == geom.n_sites + 1


def test_operator_hash_sensitive():
    H, _ = build_haldane(HaldaneSpec(1, 2))
    G = H.copy()
    G[0, 0] += 1e-12
    assert operator_hash(H) == operator_hash(sp.csr_matrix(H))
    assert operator_hash(H) != operator_hash(G)
