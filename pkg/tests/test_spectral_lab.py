from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from kfplab import spectral_lab
from kfplab.discrete_complex import GridSpec, assemble_complex, inf_norm
from kfplab.errors import BadFit, NotAGraph
from kfplab.landscape import classify_landscape, find_critical_points, get_model
from kfplab.spectral_lab import (SpectrumResult, eyring_kramers_prefactor, fit_splitting, jackknife_slope,
                                 lattice_candidates, localization_check, low_spectrum, match_lattice,
                                 pairing_check, predict_prefactor, probe_points, quasimode_overlaps, quasimodes,
                                 resolvent_probe, saddle_concentration, spectral_window_check, splitting_table,
                                 splitting_vector, sweep_splitting, window_height)
from kfplab.symbol_geometry import stable_quadratic_form

H_SWEEP = [0.14, 0.12, 0.10, 0.08, 0.07, 0.06]
EK_DW1 = (np.sqrt(5.0) - 1.0) / 4.0 * np.sqrt(2.0) / np.pi


def _synthetic_rows(s=0.5, a=2.0, hs=(0.14, 0.12, 0.10, 0.08, 0.06)):
    return [(h, h * a * np.exp(-s / h)) for h in hs]


def test_fit_recovers_synthetic_splitting():
    fit = fit_splitting(_synthetic_rows(), slope_target=0.5)
    assert fit.slope == pytest.approx(0.5, rel=1e-9)
    assert fit.prefactor == pytest.approx(2.0, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.passed
    assert not fit_splitting(_synthetic_rows(), slope_target=0.6).passed
    assert list(fit.table["h"]) == sorted(fit.table["h"])


def test_fit_accepts_a_frame():
    df = pd.DataFrame(_synthetic_rows(), columns=["h", "mu1"])
    assert fit_splitting(df).slope == pytest.approx(0.5, rel=1e-9)


def test_bad_fit_carries_the_fit():
    hs = [0.14, 0.12, 0.10, 0.08, 0.06]
    rows = list(zip(hs, [1e-3, 1e-1, 1e-3, 1e-1, 1e-3]))
    with pytest.raises(BadFit) as info:
        fit_splitting(rows)
    assert info.value.exit_code == 6
    assert info.value.fit.r2 < 0.999
    assert not info.value.fit.passed


def test_fit_rejects_short_or_nonpositive_data():
    with pytest.raises(ValueError):
        fit_splitting(_synthetic_rows()[:4])
    rows = _synthetic_rows()
    rows[0] = (rows[0][0], 0.0)
    with pytest.raises(ValueError):
        fit_splitting(rows)


def test_jackknife_on_exact_data():
    assert jackknife_slope(_synthetic_rows()) == pytest.approx(0.0, abs=1e-9)


def test_splitting_table_columns():
    df = splitting_table(_synthetic_rows())
    assert list(df.columns) == ["h", "mu1", "log_mu1_minus_log_h"]
    assert df["log_mu1_minus_log_h"].iloc[0] == pytest.approx(np.log(2.0) - 0.5 / 0.06)


def test_match_lattice_pairs_nearest_first():
    report = match_lattice([0.01, 1.02, 2.5 + 0.1j], [0.0, 1.0, 2.0])
    assert [(i, mu) for i, mu, _ in report.pairs] == [(0, 0.0), (1, 1.0)]
    assert report.unmatched_spectrum == [2.5 + 0.1j]
    assert report.unmatched_lattice == [2.0]
    assert report.max_deviation == pytest.approx(0.02)
    assert not report.within()
    assert not report.to_dict()["pass"]

    greedy = match_lattice([0.9, 1.05], [1.0])
    assert greedy.pairs == [(1, 1.0, pytest.approx(0.05))]
    assert greedy.unmatched_spectrum == [0.9]
    assert match_lattice([], [1.0]).unmatched_lattice == [1.0]


def test_match_lattice_flags_a_value_with_no_partner():
    lattice = [0.0, 0.5 + 1.32j, 0.5 - 1.32j, 1.0]
    clean = match_lattice([0.0, 0.51 + 1.31j, 0.51 - 1.31j], lattice)
    assert clean.within()
    assert clean.unmatched_spectrum == []
    assert clean.unmatched_lattice == [1.0]

    spurious = match_lattice([0.0, 0.51 + 1.31j, 0.51 - 1.31j, 0.3], lattice)
    assert spurious.unmatched_spectrum == [0.3]
    assert len(spurious.pairs) == 3
    assert not spurious.within()


def test_match_tolerance_grows_with_the_lattice_value():
    report = match_lattice([1.9], [2.0])
    assert report.pairs == [(0, 2.0, pytest.approx(0.1))]
    assert report.within()
    assert match_lattice([0.1], [0.0]).unmatched_spectrum == [0.1]
    assert match_lattice([0.1], [0.0], absolute=0.2).within()


def test_lattice_candidates_reach_past_the_window_edge(dw1, dw1_points):
    candidates = lattice_candidates(dw1, dw1_points, 0, 2.0)
    assert any(abs(mu - 2.0) < 1e-12 for mu in candidates)
    assert sum(abs(mu) < 1e-12 for mu in candidates) == 2


def test_spectral_window_check():
    assert window_height([0.5 + 1.3j]) == pytest.approx(6.2)
    report = spectral_window_check([0.1 + 0.5j, 0.3 + 0.5j], 0.1)
    assert report["D"] == 1.0
    assert report["violations"] == [[0.1, 0.5]]
    assert not report["pass"]
    assert spectral_window_check([0.1 + 0.05j], 0.1)["pass"]


def _spectrum(values, degree):
    values = np.asarray(values, dtype=complex)
    return SpectrumResult(0.1, degree, values, np.zeros(values.size), deflated=degree == 0)


def test_pairing_check():
    s0 = _spectrum([0.0, 0.01, 0.05], 0)
    assert pairing_check(s0, _spectrum([0.01 * (1 + 1e-9), 0.05, 0.3], 1))["pass"]
    assert not pairing_check(s0, _spectrum([0.01, 0.3], 1))["pass"]
    partial = pairing_check(s0, _spectrum([0.0100000001, 0.02], 1))
    assert partial["pass"]
    assert len(partial["pairs"]) == 1


def test_probe_points():
    z = probe_points(0.1, 2.0, 8)
    assert z.shape == (8,)
    assert np.allclose(np.abs(z), 0.2)
    assert np.all(np.abs(z.imag) > 0)


def test_eyring_kramers_closed_form(dw1, dw1_wells, witten):
    closed = eyring_kramers_prefactor(dw1, dw1_wells)
    assert closed[-1] == pytest.approx(EK_DW1)
    assert closed[1] == pytest.approx(EK_DW1)
    wells = classify_landscape(find_critical_points(witten))
    assert eyring_kramers_prefactor(witten, wells)[1] == pytest.approx(np.sqrt(2.0) / np.pi)


def test_predict_prefactor_gradient_case(witten):
    wells = classify_landscape(find_critical_points(witten))
    data = predict_prefactor(witten, wells)
    for j in (-1, 1):
        assert data.wells[j]["a"] == pytest.approx(np.sqrt(2.0) / np.pi, rel=1e-6)
    assert data.predicted_total == pytest.approx(data.eyring_kramers_total, rel=1e-6)
    assert data.sensitivity <= 1e-6


def test_predict_prefactor_kfp_matches_closed_form(dw1, dw1_wells):
    data = predict_prefactor(dw1, dw1_wells, r0=0.05)
    for j in (-1, 1):
        assert data.wells[j]["a"] == pytest.approx(EK_DW1, rel=0.05)
    doc = data.to_dict()
    assert set(doc["wells"]) == {"-1", "1"}
    assert doc["kappa"] == pytest.approx((1 - np.sqrt(5.0)) / 4)


def test_prefactor_forms_come_from_the_eikonal_solve(dw1, dw1_wells):
    data = predict_prefactor(dw1, dw1_wells, r0=0.05)
    assert np.allclose(data.phi_plus, [[np.sqrt(5.0), -2.0], [-2.0, np.sqrt(5.0)]], atol=1e-8)
    solved = stable_quadratic_form(dw1.transposed(), dw1_wells.saddle, "outgoing").matrix
    assert np.array_equal(data.phi_plus_star, solved)


def test_prefactor_rejects_a_disagreeing_outgoing_form(dw1, dw1_wells, monkeypatch):
    monkeypatch.setattr(spectral_lab, "stable_quadratic_form",
                        lambda model, cp, direction="outgoing", symbol="q": SimpleNamespace(matrix=7.0 * np.eye(2)))
    with pytest.raises(NotAGraph, match="disagrees"):
        predict_prefactor(dw1, dw1_wells)


def test_low_spectrum_on_small_complex(small_complex):
    spectrum = low_spectrum(small_complex, 0)
    h = small_complex.h
    assert spectrum.deflated
    assert spectrum.eigenvalues[0] == 0
    assert np.all(np.abs(spectrum.eigenvalues) < 2.0 * h)
    assert np.all(spectrum.eigenvalues.real >= -1e-12)
    assert np.all(spectrum.residuals <= 1e-8 * inf_norm(small_complex.lap0))
    assert 0 not in spectrum.nonzero()
    assert spectrum.vectors.shape == (small_complex.lap0.shape[0], spectrum.eigenvalues.size)
    frame = spectrum.to_frame()
    assert list(frame.columns) == ["h", "degree", "re", "im", "residual", "matched_mu_re", "matched_mu_im",
                                   "deviation"]


def test_resolvent_probe(small_complex):
    spectrum = low_spectrum(small_complex, 0, keep_vectors=False)
    frame = resolvent_probe(small_complex, probe_points(small_complex.h), spectrum.eigenvalues)
    assert len(frame) == 8
    assert np.all(np.isfinite(frame["norm_estimate"]))
    assert np.all(frame["norm_estimate"] > 0)
    with pytest.raises(ValueError):
        resolvent_probe(small_complex, [0.0], [0.0])


def _near_saddle_nodes(cx):
    x = cx.grid.coordinates(cx.grid.nodes())
    return (np.abs(x[:, 0]) < cx.grid.spacing[0]) & (np.abs(x[:, 1]) < cx.grid.spacing[1])


def test_quasimode_overlaps_of_the_antisymmetric_combination(small_complex, dw1_wells):
    f = quasimodes(small_complex, dw1_wells)
    u = f[-1] - f[1]
    overlaps = quasimode_overlaps(small_complex, dw1_wells, u)
    assert overlaps == {-1: pytest.approx(1.0), 1: pytest.approx(1.0)}
    rotated = quasimode_overlaps(small_complex, dw1_wells, np.exp(0.7j) * u)
    assert rotated == {-1: pytest.approx(1.0), 1: pytest.approx(1.0)}


def test_quasimode_overlaps_vanish_away_from_the_wells(small_complex, dw1_wells):
    u = _near_saddle_nodes(small_complex).astype(float)
    overlaps = quasimode_overlaps(small_complex, dw1_wells, u)
    assert overlaps == {-1: pytest.approx(0.0), 1: pytest.approx(0.0)}


def test_saddle_concentration(small_complex, dw1_wells):
    x = small_complex.dof_coordinates(1)
    near = np.linalg.norm(x, axis=1) <= 0.5
    assert saddle_concentration(small_complex, dw1_wells, near.astype(float)) == pytest.approx(1.0)
    flat = saddle_concentration(small_complex, dw1_wells, np.ones(x.shape[0]))
    assert flat == pytest.approx(near.mean())
    assert flat < 0.1


def test_localization_check_combines_both_degrees(small_complex, dw1_wells):
    f = quasimodes(small_complex, dw1_wells)
    u0 = f[-1] - f[1]
    near = (np.linalg.norm(small_complex.dof_coordinates(1), axis=1) <= 0.5).astype(float)
    report = localization_check(small_complex, dw1_wells, u0, small_complex, near)
    assert report["pass"]
    assert set(report["overlaps"]) == {"-1", "1"}
    assert report["saddle_mass"] == pytest.approx(1.0)

    spread = localization_check(small_complex, dw1_wells, u0, small_complex, np.ones(near.size))
    assert spread["degree0_pass"]
    assert not spread["degree1_pass"]
    assert not spread["pass"]
    assert "saddle_mass" not in localization_check(small_complex, dw1_wells, u0)


@pytest.mark.slow
def test_splitting_vector_is_localized_in_the_wells(dw1, dw1_wells):
    h = 0.14
    cx = assemble_complex(GridSpec.for_h(2, h), dw1, h)
    _, u = splitting_vector(low_spectrum(cx, 0))
    assert localization_check(cx, dw1_wells, u)["pass"]


def _low_real_values(h, half_width):
    cx = assemble_complex(GridSpec.for_h(2, h, half_width=half_width), get_model("DW1"), h)
    values = low_spectrum(cx, 0, keep_vectors=False).nonzero()
    low = values[values.real < 0.5 * h]
    return low, h


def _assert_single_tunnelling_value(low, h):
    real = low[np.abs(low.imag) < 0.1 * h]
    assert real.size == 1
    assert 0 < real[0].real < 0.05 * h
    # anything else that low in real part is the first oscillating well pair
    assert np.all(np.abs(low[np.abs(low.imag) >= 0.1 * h].imag) > h)


def test_dw1_has_one_real_value_below_half_h():
    _assert_single_tunnelling_value(*_low_real_values(0.14, 2.5))


@pytest.mark.slow
def test_dw1_low_real_values_on_a_wider_box():
    _assert_single_tunnelling_value(*_low_real_values(0.14, 3.5))


# Acceptance-scale runs

@pytest.mark.slow
def test_lattice_match_improves_with_h(dw1, dw1_points):
    candidates = lattice_candidates(dw1, dw1_points, 0)
    deviations = []
    for h in (0.1, 0.05, 0.025):
        cx = assemble_complex(GridSpec.for_h(2, h), dw1, h)
        spectrum = low_spectrum(cx, 0, candidates=candidates, keep_vectors=False)
        scaled = spectrum.eigenvalues / h
        deviations.append(match_lattice(scaled, candidates, absolute=np.inf).max_deviation)
    report = match_lattice(scaled, candidates)
    assert report.unmatched_spectrum == []
    assert report.within()
    assert deviations[1] <= 0.7 * deviations[0]
    assert deviations[2] <= 0.7 * deviations[1]


@pytest.mark.slow
def test_dw1_splitting_and_prefactor(dw1, dw1_wells):
    table = sweep_splitting(dw1, H_SWEEP)
    fit = fit_splitting(table, slope_target=2.0 * dw1_wells.s_min)
    assert abs(fit.slope - 0.5) <= 0.025
    assert fit.r2 >= 0.999
    data = predict_prefactor(dw1, dw1_wells)
    ratio = data.predicted_total / fit.prefactor
    assert 1.0 / 1.5 <= ratio <= 1.5
    assert data.sensitivity <= 0.2


@pytest.mark.slow
def test_degree_one_pairs_with_degree_zero(dw1):
    for h in (0.08, 0.1):
        cx = assemble_complex(GridSpec.for_h(2, h), dw1, h)
        s0 = low_spectrum(cx, 0, keep_vectors=False)
        s1 = low_spectrum(cx, 1, keep_vectors=False)
        report = pairing_check(s0, s1)
        assert report["pairs"]
        assert report["pass"]


@pytest.mark.slow
def test_resolvent_bound_is_uniform_in_h(dw1):
    peaks = []
    for h in (0.1, 0.05):
        cx = assemble_complex(GridSpec.for_h(2, h), dw1, h)
        spectrum = low_spectrum(cx, 0, keep_vectors=False)
        frame = resolvent_probe(cx, probe_points(h), spectrum.eigenvalues)
        peaks.append(frame["h_times_estimate"].max())
    assert max(peaks) / min(peaks) <= 1.5


@pytest.mark.slow
def test_asymmetric_well_splitting_follows_smaller_action(dw2):
    wells = classify_landscape(find_critical_points(dw2))
    fit = fit_splitting(sweep_splitting(dw2, H_SWEEP))
    assert fit.slope == pytest.approx(2.0 * wells.s_min, rel=0.05)
