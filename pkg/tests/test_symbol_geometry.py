import numpy as np
import pytest

from kfplab import symbol_geometry
from kfplab.errors import ImaginaryAxisEigenvalue, LatticeOverflow, NotAGraph
from kfplab.landscape import ModelSpec, Polynomial, find_critical_points
from kfplab.symbol_geometry import (SymbolSet, build_lattice, eikonal_residual, escape_form, fundamental_eigs,
                                    lattice_report, lyapunov_form, mu_lattice, principal_symbol, quadratic_q,
                                    stable_quadratic_form, subprincipal_eigs, tr_tilde, transport_direction)

SQRT5 = np.sqrt(5.0)


def _isotropic(A):
    phi = Polynomial.from_terms({(2, 0): 0.5, (0, 2): 0.5}, 2)
    model = ModelSpec("iso", 2, phi, np.asarray(A, dtype=float))
    return model, find_critical_points(model)[0]


def test_principal_symbol_parts(dw1):
    x, xi = np.array([2.0, 1.0]), np.array([1.0, 1.0])
    p = principal_symbol(dw1, x, xi)
    assert p == pytest.approx(1.0 - 5.0j)
    s = SymbolSet(dw1)
    assert s.q(x, xi) == pytest.approx(s.p2(x, xi) + s.p1(x, xi) - s.p0(x))
    assert s.q_check(x, xi) == pytest.approx(s.q(x, -xi))


def test_symbols_vectorize(dw1, rng):
    x = rng.standard_normal((5, 3, 2))
    xi = rng.standard_normal((5, 3, 2))
    assert SymbolSet(dw1).p(x, xi).shape == (5, 3)


def test_saddle_eigenvalues(dw1, dw1_wells):
    lambdas = fundamental_eigs(dw1, dw1_wells.saddle)
    assert np.allclose(lambdas, [(1 + SQRT5) / 4, (1 - SQRT5) / 4])
    assert np.all(lambdas.imag == 0)
    assert tr_tilde(lambdas) == pytest.approx(SQRT5)


def test_minimum_eigenvalues(dw1, dw1_wells):
    lambdas = fundamental_eigs(dw1, dw1_wells.minimum(1))
    root = np.sqrt(0.4375)
    assert np.allclose(lambdas, [0.25 + 1j * root, 0.25 - 1j * root])
    assert tr_tilde(lambdas) == pytest.approx(1.0)


def test_subprincipal_values_at_saddle(dw1, dw1_wells):
    lambdas = fundamental_eigs(dw1, dw1_wells.saddle)
    assert np.allclose(subprincipal_eigs(lambdas, 0), [(SQRT5 - 1) / 2])
    assert np.allclose(sorted(subprincipal_eigs(lambdas, 1).real), [0.0, SQRT5])
    assert np.allclose(subprincipal_eigs(lambdas, 2), [(1 + SQRT5) / 2])


def test_lattice_at_minimum(dw1, dw1_wells):
    lat = build_lattice(dw1, dw1_wells.minimum(-1), (0,), 1.9)
    values = [e.value for e in lat.lattice_by_degree[(0, 1.9)]]
    root = 2.0 * np.sqrt(0.4375)
    assert np.allclose(values, [0.0, 0.5 - 1j * root, 0.5 + 1j * root, 1.0])
    assert lat.values(0, 1.9)[0] == 0


def test_lattice_at_saddle(dw1, dw1_wells):
    lat = build_lattice(dw1, dw1_wells.saddle, (0, 1), 2.0)
    gamma = (SQRT5 - 1) / 2
    assert np.allclose([e.value for e in lat.lattice_by_degree[(0, 2.0)]], [gamma, 2 * gamma, 3 * gamma])
    assert lat.lattice_by_degree[(1, 2.0)][0].value == pytest.approx(0.0)


def test_lattice_resonance(witten):
    saddle = find_critical_points(witten)[2]
    entries = mu_lattice(fundamental_eigs(witten, saddle), 0, 5.0)
    assert [e.value.real for e in entries] == pytest.approx([2.0, 4.0])
    assert entries[1].multiplicity == 2
    assert entries[1].resonant
    assert not entries[0].resonant
    assert entries[1].to_dict()["nu_vector"] == [[0, 1], [1, 0]]


def test_lattice_overflow():
    with pytest.raises(LatticeOverflow):
        mu_lattice(np.array([1e-4 + 0j, 2e-4 + 0j]), 0, 1.0)


def test_imaginary_axis_is_rejected():
    model, cp = _isotropic([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(ImaginaryAxisEigenvalue) as info:
        fundamental_eigs(model, cp)
    assert info.value.exit_code == 3


def test_lattice_report_is_json_ready(dw1, dw1_points):
    report = lattice_report(dw1, dw1_points, (0, 1), 2.0)
    assert len(report) == 3
    saddle = report[2]
    assert saddle["index"] == 1
    assert saddle["tr_tilde"] == pytest.approx(SQRT5)
    assert set(saddle["degrees"]) == {"0", "1"}
    first = saddle["degrees"]["0"]["lattice"][0]
    assert set(first) == {"re", "im", "multiplicity", "nu_vector", "gamma_index", "resonant"}


def test_quadratic_q_matches_symbol_near_saddle(dw1, dw1_wells, rng):
    Q = quadratic_q(dw1, dw1_wells.saddle)
    assert np.allclose(Q, Q.T)
    z = 1e-3 * rng.standard_normal(4)
    expected = SymbolSet(dw1).q(z[:2], z[2:])
    assert z @ Q @ z == pytest.approx(expected, rel=1e-4, abs=1e-10)


def test_outgoing_form_at_saddle(dw1, dw1_wells):
    saddle = dw1_wells.saddle
    plus = stable_quadratic_form(dw1, saddle, "outgoing").matrix
    assert np.allclose(plus, [[SQRT5, -2.0], [-2.0, SQRT5]], atol=1e-8)
    assert np.abs(eikonal_residual(dw1, saddle, plus)).max() <= 1e-8
    assert np.linalg.eigvalsh(plus).min() > 0
    gap = np.linalg.eigvalsh(plus - saddle.hessian.matrix)
    assert gap.min() == pytest.approx(0.0, abs=1e-8)
    assert gap.max() > 1.0


def test_incoming_check_form_is_negated_outgoing(dw1, dw1_wells):
    saddle = dw1_wells.saddle
    plus = stable_quadratic_form(dw1, saddle, "outgoing").matrix
    minus = stable_quadratic_form(dw1, saddle, "incoming", symbol="q_check").matrix
    assert np.allclose(minus, -plus, atol=1e-8)


def test_gradient_case_forms_are_hessians(witten):
    minimum = find_critical_points(witten)[0]
    assert np.allclose(stable_quadratic_form(witten, minimum, "outgoing").matrix, np.diag([2.0, 1.0]))
    assert np.allclose(stable_quadratic_form(witten, minimum, "incoming").matrix, -np.diag([2.0, 1.0]))


def test_transport_direction(dw1, dw1_wells):
    kappa, zeta = transport_direction(dw1, dw1_wells.saddle)
    assert kappa == pytest.approx((1 - SQRT5) / 4)
    expected = np.array([1.0, (1 - SQRT5) / 2])
    assert np.allclose(zeta, expected / np.linalg.norm(expected))
    kappa_t, _ = transport_direction(dw1, dw1_wells.saddle, transpose=True)
    assert kappa_t == pytest.approx(kappa)


def test_lyapunov_form_increases_along_flow(dw1, dw1_wells):
    for M in (np.diag([1.0, -2.0]), dw1.A @ dw1_wells.saddle.hessian.matrix, np.array([[1.0, 5.0], [-5.0, 1.0]])):
        cert = lyapunov_form(M)
        assert cert.constant > 0


def test_escape_form_isotropic():
    model, cp = _isotropic(np.eye(2))
    cert = escape_form(model, cp)
    assert cert.epsilon_star == 0.25
    assert cert.margin >= 0


def test_escape_form_at_dw1_points(dw1, dw1_points):
    for cp in dw1_points:
        cert = escape_form(dw1, cp)
        assert 0 < cert.epsilon_star <= 0.5
        assert cert.margin >= 0


def test_gradient_case_saddle_form_is_absolute_hessian(witten):
    saddle = [cp for cp in find_critical_points(witten) if cp.index == 1][0]
    plus = stable_quadratic_form(witten, saddle, "outgoing").matrix
    assert np.allclose(plus, np.eye(2), atol=1e-8)
    minus = stable_quadratic_form(witten, saddle, "incoming").matrix
    assert np.allclose(minus, -np.eye(2), atol=1e-8)


def test_lyapunov_form_of_identity():
    cert = lyapunov_form(np.eye(2))
    assert cert.constant > 0
    assert np.allclose(cert.form.matrix, cert.form.matrix[0, 0] * np.eye(2))


def test_eikonal_residual_above_tolerance_is_rejected(dw1, dw1_wells, monkeypatch):
    monkeypatch.setattr(symbol_geometry, "eikonal_residual", lambda model, cp, M, symbol="q": np.eye(2))
    with pytest.raises(NotAGraph, match="eikonal"):
        stable_quadratic_form(dw1, dw1_wells.saddle, "outgoing")
