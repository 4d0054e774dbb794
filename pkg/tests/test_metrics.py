import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biphoton_edge.biphoton import BiphotonState, StateError, named_recipe
from biphoton_edge.campaign import prepare_model
from biphoton_edge.evolve import ChebyshevPropagator, propagate_biphoton
from biphoton_edge.lattice import DisorderSpec, HaldaneSpec
from biphoton_edge.metrics import (
    MetricsError,
    MetricsRecord,
    append_records,
    edge_content,
    fidelity,
    record_for,
    transmitted_fidelity,
)


@pytest.fixture(scope="module")
def model():
    return prepare_model(HaldaneSpec(2, 20))


def test_fidelity_basics():
    a = BiphotonState.pair(5, 0, 1)
    b = BiphotonState.pair(5, 2, 3)
    assert fidelity(a, a) == pytest.approx(1, abs=1e-14)
    assert fidelity(a, b) == 0
    with pytest.raises(StateError):
        fidelity(a, BiphotonState.pair(6, 0, 1))


def test_projected_state_has_full_edge_content(model):
    st_, w = model.prepared(model.recipe(3.0, 1.0, m_e=10))
    assert 0 < w < 1
    assert edge_content(st_, model.basis) == pytest.approx(1, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(phase=st.floats(0, 2 * np.pi), z=st.floats(0, 60))
def test_edge_content_invariant_under_phase_and_clean_propagation(model, phase, z):
    st_, _ = model.prepared(model.recipe(2.0, 2.0, m_e=10))
    rotated = BiphotonState(st_.frame, st_.core * np.exp(1j * phase))
    moved = propagate_biphoton(rotated, ChebyshevPropagator(model.H), z=z)
    assert edge_content(moved, model.basis) == pytest.approx(1, abs=1e-8)


def test_transmitted_fidelity_clean_equals_one(model):
    st_, _ = model.prepared(model.recipe(2.0, 0.5, m_e=10))
    assert transmitted_fidelity(st_, st_, model.basis) == pytest.approx(1, abs=1e-8)
    assert fidelity(st_, st_) == pytest.approx(1, abs=1e-8)


def test_bulk_state_has_no_transmitted_fidelity(model):
    # a product of a vector orthogonal to every edge mode lies in B(x)B
    phi = model.basis.edge_vectors
    v = np.random.default_rng(0).standard_normal(model.geom.n_sites)
    v = v - phi @ (phi.conj().T @ v)
    state = BiphotonState.product(v)
    assert edge_content(state, model.basis) < 1e-20
    with pytest.raises(MetricsError):
        transmitted_fidelity(state, state, model.basis)


def test_fn_equals_f_over_e_for_edge_reference(model):
    ref, _ = model.prepared(model.recipe(2.0, 0.7, m_e=10))
    H = model.disordered(DisorderSpec(1.0, seed=3))
    out = propagate_biphoton(ref, ChebyshevPropagator(H), z=40.0)
    f = fidelity(out, ref)
    e = edge_content(out, model.basis)
    assert e < 1
    assert transmitted_fidelity(out, ref, model.basis) == pytest.approx(f / e, rel=1e-10)


def test_record_for_collects_everything(model):
    initial = model.prepared(named_recipe("product", m_e=10))[0]
    rec = record_for("product", initial, initial, initial, model.basis, seed=4, sigma=1.0, z_f=1.0, z_m=1.0,
                     lattice_hash=model.lattice_hash)
    assert rec.F == pytest.approx(1) and rec.E == pytest.approx(1) and rec.F_N == pytest.approx(1)
    assert rec.S_N == pytest.approx(1, abs=1e-8)
    assert rec.sigma_c == pytest.approx(np.sqrt(40))
    with pytest.raises(dataclasses.FrozenInstanceError):
        rec.E = 0.5


@pytest.mark.parametrize("field,value", [("F", 1.1), ("E", -0.1), ("F_N", 2.0), ("S_N", 0.5)])
def test_record_range_validation(field, value):
    base = dict(label="x", seed=0, sigma=1.0, sigma_c=1.0, sigma_a=1.0, z_f=1.0, z_m=1.0,
                F=0.5, F_N=0.5, E=0.5, S_N=1.0)
    base[field] = value
    with pytest.raises(MetricsError):
        MetricsRecord(**base)


def test_append_records(tmp_path):
    rec = MetricsRecord("x", 1, 1.0, 2.0, 3.0, 78.5, 75.1, 1 / 3, 0.5, 0.25, 1.0, "abc")
    path = tmp_path / "m.csv"
    append_records(path, [rec])
    append_records(path, [rec])
    rows = list(csv.reader(path.open()))
    assert rows[0] == MetricsRecord.columns()
    assert len(rows) == 3
    assert float(rows[1][rows[0].index("F")]) == 1 / 3
    assert rows[1][rows[0].index("F")] == "0.33333333333333331"
