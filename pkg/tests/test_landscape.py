import numpy as np
import pytest

from kfplab.errors import NonConvergence, NotDoubleWell
from kfplab.landscape import (MODEL_REGISTRY, ModelSpec, Polynomial, QuadraticForm, _newton, basin_label,
                              classify_landscape, eval_phi, find_critical_points, get_model, kfp_matrix)


def test_polynomial_derivatives_are_exact(dw1):
    value, grad, hess = eval_phi(dw1, [2.0, 1.0])
    assert value == pytest.approx(2.5)
    assert np.allclose(grad, [6.0, 1.0])
    assert np.allclose(hess, [[11.0, 0.0], [0.0, 1.0]])


def test_polynomial_evaluates_batches():
    p = Polynomial.from_terms({(1, 1): 2.0, (0, 0): 1.0}, 2)
    x = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
    assert np.allclose(p(x), [5.0, 0.0, 1.0])
    assert p.gradient(x).shape == (3, 2)
    assert p.hessian(x).shape == (3, 2, 2)


def test_polynomial_sum_merges_terms():
    p = Polynomial.from_terms({(2, 0): 1.0}, 2) + Polynomial.from_terms({(2, 0): 2.0, (0, 1): 1.0}, 2)
    assert p.terms() == {(0, 1): 1.0, (2, 0): 3.0}
    assert p.degree == 2


def test_kfp_matrix_splits_into_friction_and_transport():
    A = kfp_matrix(1.0)
    model = get_model("DW1")
    assert np.allclose(A, [[0.0, 0.5], [-0.5, 0.5]])
    assert np.allclose(model.B, [[0.0, 0.0], [0.0, 0.5]])
    assert np.allclose(model.C, [[0.0, 0.5], [-0.5, 0.0]])


def test_model_rejects_indefinite_symmetric_part():
    phi = Polynomial.from_terms({(2, 0): 0.5, (0, 2): 0.5}, 2)
    with pytest.raises(ValueError):
        ModelSpec("bad", 2, phi, np.diag([-1.0, 1.0]))


def test_model_rejects_singular_matrix_unless_allowed():
    phi = Polynomial.from_terms({(2, 0): 0.5, (0, 2): 0.5}, 2)
    with pytest.raises(ValueError):
        ModelSpec("singular", 2, phi, np.diag([0.0, 1.0]))
    model = ModelSpec("singular", 2, phi, np.diag([0.0, 1.0]), check_invertible=False)
    assert model.dim == 2


def test_model_document_round_trip(dw1):
    again = ModelSpec.from_json(dw1.to_json())
    assert again.name == "DW1"
    assert np.allclose(again.A, dw1.A)
    assert again.phi.terms() == dw1.phi.terms()


def test_transposed_swaps_transport_sign(dw1):
    t = dw1.transposed()
    assert np.allclose(t.A, dw1.A.T)
    assert np.allclose(t.C, -dw1.C)
    assert np.allclose(t.B, dw1.B)


def test_registry_lookup():
    assert set(MODEL_REGISTRY) == {"DW1", "DW2", "single-well-test", "witten-DW1", "nu-zero-test"}
    with pytest.raises(KeyError):
        get_model("DW9")


def test_quadratic_form_inertia():
    form = QuadraticForm(np.diag([-1.0, 2.0, 3.0]))
    assert form.inertia == (2, 0, 1)
    with pytest.raises(ValueError):
        QuadraticForm(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_dw1_critical_points(dw1_points):
    assert len(dw1_points) == 3
    locations = [tuple(np.round(p.location, 10)) for p in dw1_points]
    assert locations == [(-1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]
    assert [p.index for p in dw1_points] == [0, 0, 1]
    assert dw1_points[0].value == pytest.approx(-0.25)
    assert np.allclose(dw1_points[2].hessian.matrix, np.diag([-1.0, 1.0]))


def test_dw1_actions(dw1_wells):
    assert dw1_wells.actions[-1] == pytest.approx(0.25)
    assert dw1_wells.actions[1] == pytest.approx(0.25)
    assert dw1_wells.s_min == pytest.approx(0.25)
    assert dw1_wells.minimum(-1).location[0] < 0 < dw1_wells.minimum(1).location[0]


def test_dw2_smaller_action_belongs_to_shallow_well(dw2):
    wells = classify_landscape(find_critical_points(dw2))
    assert wells.shallow == 1
    assert wells.s_min == pytest.approx(wells.actions[1])
    assert wells.actions[1] < wells.actions[-1]


def test_single_well_is_not_a_double_well():
    points = find_critical_points(get_model("single-well-test"))
    with pytest.raises(NotDoubleWell) as info:
        classify_landscape(points)
    assert info.value.exit_code == 2
    assert info.value.counts == {0: 1}


def test_critical_point_search_is_seed_order_independent(dw1):
    a = find_critical_points(dw1, seeds_per_dim=9)
    b = find_critical_points(dw1, seeds_per_dim=12)
    assert len(a) == len(b)
    for p, q in zip(a, b):
        assert np.allclose(p.location, q.location, atol=1e-9)


def test_basin_labels(dw1, dw1_wells):
    x = np.array([[-1.0, 0.1], [1.2, -0.2], [0.0, 2.0]])
    assert basin_label(dw1, dw1_wells, x).tolist() == [-1, 1, 0]


class _WrongCurvature:
    """Gradient of |x|^2 / 2 paired with the opposite Hessian, so Newton steps climb."""

    dim = 2

    def gradient(self, x):
        return np.asarray(x, dtype=float)

    def hessian(self, x):
        return -np.eye(2)


def test_newton_raises_when_line_search_fails():
    with pytest.raises(NonConvergence, match="line search failed"):
        _newton(_WrongCurvature(), [1.0, 0.5])


def test_newton_accepts_a_converged_seed(dw1):
    assert np.allclose(_newton(dw1, [0.9, 0.1]), [1.0, 0.0])
