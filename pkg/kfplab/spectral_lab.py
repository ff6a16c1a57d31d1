"""
Low-lying spectra of the discrete Laplacians, their comparison with the
mu-lattice, the exponentially small splitting and its prefactor, resolvent
probes and eigenvector localization.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from kfplab.discrete_complex import GridSpec, assemble_complex, inf_norm
from kfplab.eigen_kernel import ShiftInvertOperator, shift_invert_arnoldi, smallest_singular_value
from kfplab.errors import (BadFit, ComplexSplitting, CurveEscapesQuadraticRegion, ResidualTooLarge,
                           NotAGraph, SignViolation, Singular)
from kfplab.landscape import basin_label
from kfplab.symbol_geometry import build_lattice, stable_quadratic_form, transport_direction

logger = logging.getLogger(__name__)

# Constants
DEFAULT_WINDOW = 2.0
DEDUPE_DISTANCE = 1e-8
R2_THRESHOLD = 0.999
SLOPE_TOLERANCE = 0.05
DEFAULT_R0 = 0.2
TRUST_ANGLE = 0.35
QUASIMODE_MARGIN = 0.05
OVERLAP_THRESHOLD = 0.9
SADDLE_RADIUS = 0.5
MATCH_ABSOLUTE = 0.05
MATCH_RELATIVE = 0.05
FORM_AGREEMENT = 1e-6


@dataclass
class SpectrumResult:
    """Eigenvalues of one Laplacian in the window |lambda| < B h."""

    h: float
    degree: int
    eigenvalues: np.ndarray
    residuals: np.ndarray
    vectors: np.ndarray = None
    deflated: bool = False
    grid: tuple = ()
    shifts: list = field(default_factory=list)

    def nonzero(self):
        """Eigenvalues other than the deflated kernel entry."""
        mask = np.ones(self.eigenvalues.shape[0], dtype=bool)
        if self.deflated:
            mask &= self.eigenvalues != 0
        return self.eigenvalues[mask]

    def to_frame(self, match=None):
        df = pd.DataFrame({
            "h": self.h,
            "degree": self.degree,
            "re": self.eigenvalues.real,
            "im": self.eigenvalues.imag,
            "residual": self.residuals,
        })
        df["matched_mu_re"] = np.nan
        df["matched_mu_im"] = np.nan
        df["deviation"] = np.nan
        if match is not None:
            for i, mu, dev in match.pairs:
                df.loc[i, ["matched_mu_re", "matched_mu_im", "deviation"]] = [mu.real, mu.imag, dev]
        return df


def lattice_candidates(model, points, degree, window=DEFAULT_WINDOW):
    """
    Union over critical points of the mu-lattice, repeated by multiplicity.

    The radius is widened by the match tolerance so that a computed value just
    inside the window still finds a partner lying on or just past its edge.
    """
    radius = window * (1.0 + MATCH_RELATIVE) + MATCH_ABSOLUTE
    values = []
    for cp in points:
        lat = build_lattice(model, cp, (degree,), radius)
        values.extend(lat.values(degree, radius))
    return sorted(values, key=lambda z: (z.real, z.imag))


def _shift_list(h, candidates):
    shifts = [complex(-h / 10.0)]
    for mu in candidates:
        if mu.imag > 0:
            sigma = h * mu
            if all(abs(sigma - s) > 0.05 * h for s in shifts):
                shifts.append(sigma)
    return shifts


def low_spectrum(cx, degree, k=6, window=DEFAULT_WINDOW, candidates=None, basis=40, tol=1e-8,
                 max_restarts=40, seed=42, keep_vectors=True):
    """
    Eigenvalues of the degree-0 or degree-1 Laplacian in the disk |z| < window * h.

    Degree 0 works orthogonally to the Maxwellian, which is reported as the value 0.
    The shift -h/10 is always used; lattice candidates with Im > 0 add complex shifts h * mu.
    Degree 1 works on the sparse pencil (K, W1), so its residuals are ||K u - lambda W1 u||.

    Returns:
        SpectrumResult: merged, deduplicated values sorted by (Re, Im)

    Raises:
        NotConverged: from the eigensolver
        ResidualTooLarge: if a kept value fails the residual tolerance
    """
    M, mass = cx.pencil(degree)
    h = cx.h
    perm = cx.ordering(degree)
    deflation = cx.maxwellian[:, None] if degree == 0 else None
    shifts = _shift_list(h, candidates or [])
    norm = inf_norm(M)

    found = []
    for i, sigma in enumerate(shifts):
        op = ShiftInvertOperator(M, sigma, perm=perm, deflation=deflation, mass=mass)
        result = shift_invert_arnoldi(op, k if i == 0 else 2, m=basis, tol=tol, max_restarts=max_restarts,
                                      seed=seed)
        logger.info(f"h = {h}, degree {degree}, shift {sigma:.4g}: {len(result.values)} values")
        found.extend(zip(result.values, result.vectors.T, result.residuals))
    if degree == 0:
        kernel_res = float(np.linalg.norm(M @ cx.maxwellian))
        found.append((0j, cx.maxwellian.astype(complex), kernel_res))

    found.sort(key=lambda f: (f[0].real, f[0].imag))
    kept = []
    for lam, u, res in found:
        if abs(lam) >= window * h:
            continue
        duplicate = next((j for j, q in enumerate(kept) if abs(q[0] - lam) <= DEDUPE_DISTANCE * h), None)
        if duplicate is None:
            kept.append((lam, u, res))
        elif res < kept[duplicate][2]:
            kept[duplicate] = (lam, u, res)
    bad = [lam for lam, _, res in kept if res > tol * norm]
    if bad:
        raise ResidualTooLarge(f"residual above {tol * norm:.3e} for {bad}")

    values = np.array([q[0] for q in kept], dtype=complex)
    residuals = np.array([q[2] for q in kept])
    vectors = np.column_stack([q[1] for q in kept]) if kept and keep_vectors else None
    return SpectrumResult(h, degree, values, residuals, vectors, deflated=degree == 0,
                          grid=cx.grid.points, shifts=shifts)


@dataclass
class MatchReport:
    """
    Greedy nearest pairing of lambda / h with lattice values.

    Only pairs within the tolerance absolute + relative |mu| are formed, so a
    computed value with no lattice value close enough lands in
    ``unmatched_spectrum``. Unmatched lattice values are allowed.
    """

    pairs: list
    unmatched_spectrum: list
    unmatched_lattice: list
    absolute: float = MATCH_ABSOLUTE
    relative: float = MATCH_RELATIVE

    @property
    def max_deviation(self):
        return max((dev for _, _, dev in self.pairs), default=0.0)

    def within(self, absolute=None, relative=None):
        """True when every computed value has a lattice partner within tolerance."""
        absolute = self.absolute if absolute is None else absolute
        relative = self.relative if relative is None else relative
        if self.unmatched_spectrum:
            return False
        return all(dev <= absolute + relative * abs(mu) for _, mu, dev in self.pairs)

    def to_dict(self):
        return {
            "pairs": [{"index": int(i), "mu_re": mu.real, "mu_im": mu.imag, "deviation": dev}
                      for i, mu, dev in self.pairs],
            "unmatched_spectrum": [[z.real, z.imag] for z in self.unmatched_spectrum],
            "unmatched_lattice": [[z.real, z.imag] for z in self.unmatched_lattice],
            "max_deviation": self.max_deviation,
            "tolerance": [self.absolute, self.relative],
            "pass": self.within(),
        }


def match_lattice(scaled, lattice, absolute=MATCH_ABSOLUTE, relative=MATCH_RELATIVE):
    """
    Pair scaled eigenvalues lambda / h with lattice values, nearest pairs first,
    each lattice entry used at most once and only within absolute + relative |mu|.
    """
    scaled = np.asarray(scaled, dtype=complex)
    lattice = np.asarray(lattice, dtype=complex)
    if scaled.size == 0 or lattice.size == 0:
        return MatchReport([], list(scaled), list(lattice), absolute, relative)
    dist = np.abs(scaled[:, None] - lattice[None, :])
    order = np.dstack(np.unravel_index(np.argsort(dist, axis=None, kind="stable"), dist.shape))[0]
    used_s, used_l = set(), set()
    pairs = []
    for i, j in order:
        if i in used_s or j in used_l:
            continue
        if dist[i, j] > absolute + relative * abs(lattice[j]):
            continue
        used_s.add(i)
        used_l.add(j)
        pairs.append((int(i), complex(lattice[j]), float(dist[i, j])))
    pairs.sort()
    unmatched = [complex(scaled[i]) for i in range(scaled.size) if i not in used_s]
    if unmatched:
        logger.info(f"{len(unmatched)} computed values without a lattice partner: {unmatched}")
    return MatchReport(pairs, unmatched,
                       [complex(lattice[j]) for j in range(lattice.size) if j not in used_l],
                       absolute, relative)


def splitting_value(cx, **solver):
    """
    The exponentially small nonzero eigenvalue mu_1 of the degree-0 Laplacian.

    Raises:
        ComplexSplitting: if mu_1 is not real and positive
    """
    spectrum = low_spectrum(cx, 0, **solver)
    values = spectrum.nonzero()
    if values.size == 0:
        raise ComplexSplitting(f"no nonzero eigenvalue found at h = {cx.h}")
    mu1 = values[np.argmin(np.abs(values))]
    if abs(mu1.imag) > 1e-8 * abs(mu1):
        raise ComplexSplitting(f"mu_1 = {mu1} is not real at h = {cx.h}")
    if mu1.real <= 0:
        raise ComplexSplitting(f"mu_1 = {mu1.real:.3e} is not positive at h = {cx.h}")
    return float(mu1.real)


@dataclass
class SplittingFit:
    """Least squares of log mu_1 - log h against 1/h: mu_1 = h a exp(-s / h)."""

    table: pd.DataFrame
    slope: float
    prefactor: float
    r2: float
    slope_target: float = None

    @property
    def passed(self):
        ok = self.r2 >= R2_THRESHOLD
        if self.slope_target is not None:
            ok = ok and abs(self.slope - self.slope_target) <= SLOPE_TOLERANCE * self.slope_target
        return bool(ok)

    def to_dict(self):
        return {"slope": self.slope, "slope_target": self.slope_target, "prefactor": self.prefactor,
                "r2": self.r2, "pass": self.passed}


def splitting_table(rows):
    """DataFrame with columns h, mu1, log_mu1_minus_log_h sorted by ascending h."""
    if isinstance(rows, pd.DataFrame):
        df = rows[["h", "mu1"]].copy()
    else:
        df = pd.DataFrame(list(rows), columns=["h", "mu1"])
    df = df.sort_values("h").reset_index(drop=True)
    df["log_mu1_minus_log_h"] = np.log(df["mu1"]) - np.log(df["h"])
    return df


def _line_fit(df):
    x = 1.0 / df["h"].to_numpy()
    y = df["log_mu1_minus_log_h"].to_numpy()
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), float(np.exp(intercept)), r2


def fit_splitting(rows, slope_target=None):
    """
    Fit mu_1 = h a exp(-s / h).

    Args:
        rows: (h, mu1) pairs or a DataFrame with those columns; at least 5 points
        slope_target (float, optional): expected s, usually 2 S_min

    Returns:
        SplittingFit: slope s, prefactor a and R^2

    Raises:
        BadFit: if R^2 < 0.999
    """
    df = splitting_table(rows)
    if len(df) < 5:
        raise ValueError("fit_splitting needs at least 5 points")
    if (df["mu1"] <= 0).any():
        raise ValueError("mu_1 must be positive")
    s, a, r2 = _line_fit(df)
    fit = SplittingFit(df, s, a, r2, slope_target)
    logger.info(f"splitting fit: s = {s:.6f}, a = {a:.6g}, R^2 = {r2:.6f}")
    if r2 < R2_THRESHOLD:
        raise BadFit(f"R^2 = {r2:.6f} below {R2_THRESHOLD}", fit=fit)
    return fit


def jackknife_slope(rows):
    """Relative change of the fitted slope when the largest h is dropped."""
    df = splitting_table(rows)
    if len(df) < 4:
        raise ValueError("jackknife needs at least 4 points")
    s_all, _, _ = _line_fit(df)
    s_drop, _, _ = _line_fit(df.iloc[:-1])
    return abs(s_drop - s_all) / abs(s_all)


def sweep_splitting(model, h_values, half_width=2.5, multiplier=1.0, **solver):
    """Assemble and solve for mu_1 at every h; rows in ascending h."""
    rows = []
    for h in sorted(h_values):
        grid = GridSpec.for_h(model.dim, h, half_width, multiplier)
        cx = assemble_complex(grid, model, h)
        rows.append((h, splitting_value(cx, **solver)))
    return splitting_table(rows)


# Prefactor

def eyring_kramers_prefactor(model, wells):
    """|kappa| sqrt(det phi''(U_j)) / (pi sqrt|det phi''(U_0)|) per well."""
    kappa, _ = transport_direction(model, wells.saddle)
    det0 = abs(np.linalg.det(wells.saddle.hessian.matrix))
    return {j: abs(kappa) * np.sqrt(np.linalg.det(wells.minimum(j).hessian.matrix)) / (np.pi * np.sqrt(det0))
            for j in (-1, 1)}


def _rk4(velocity, x, dt):
    k1 = velocity(x)
    k2 = velocity(x + 0.5 * dt * k1)
    k3 = velocity(x + 0.5 * dt * k2)
    k4 = velocity(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def incoming_crossing(model, wells, label, r0, trust_angle=TRUST_ANGLE, start=1e-4, max_steps=200000):
    """
    Follow x' = -2 A phi'(x) from U_0 along its unstable direction toward U_label
    until |x - U_0| = r0.

    Returns:
        tuple: (crossing point, unit tangent there, unit initial direction)

    Raises:
        CurveEscapesQuadraticRegion: if the curve bends by more than the trust
            angle or never reaches r0
    """
    saddle = wells.saddle
    U0 = saddle.location
    kappa, zeta_star = transport_direction(model, saddle, transpose=True)
    tau = model.A @ zeta_star
    tau /= np.linalg.norm(tau)
    if np.dot(tau, wells.minimum(label).location - U0) < 0:
        tau = -tau
    A = model.A
    velocity = lambda x: -2.0 * A @ model.gradient(x)
    dt = 0.002 / abs(kappa)
    x = U0 + start * tau
    for _ in range(max_steps):
        x_new = _rk4(velocity, x, dt)
        if np.linalg.norm(x_new - U0) >= r0:
            r_old, r_new = np.linalg.norm(x - U0), np.linalg.norm(x_new - U0)
            t = (r0 - r_old) / (r_new - r_old)
            crossing = x + t * (x_new - x)
            tangent = velocity(crossing)
            tangent /= np.linalg.norm(tangent)
            radial = (crossing - U0) / r0
            angle = float(np.arccos(np.clip(np.dot(radial, tau), -1.0, 1.0)))
            if angle > trust_angle:
                raise CurveEscapesQuadraticRegion(
                    f"incoming curve toward U_{label:+d} turns {angle:.3f} rad before r0 = {r0}")
            return crossing, tangent, tau
        if np.linalg.norm(x_new - x) < 1e-14:
            break
        x = x_new
    raise CurveEscapesQuadraticRegion(f"incoming curve toward U_{label:+d} never reaches r0 = {r0}")


def _leading_coefficient(model, wells, label, r0, phi_plus_star, zeta_star, trust_angle=TRUST_ANGLE):
    """c_j (2 pi)^((n-1)/2) det(M_perp)^(-1/2) <A zeta*, n> at the r0 crossing, unit amplitude."""
    n = model.dim
    cp = wells.minimum(label)
    c = np.linalg.det(cp.hessian.matrix) ** 0.25 / np.pi ** (n / 4.0)
    crossing, tangent, _ = incoming_crossing(model, wells, label, r0, trust_angle)
    form = model.hessian(crossing) + phi_plus_star
    # orthonormal complement of the tangent
    basis = np.linalg.svd(np.eye(n) - np.outer(tangent, tangent))[0][:, : n - 1]
    transverse = basis.T @ form @ basis
    det_perp = float(np.linalg.det(transverse)) if n > 1 else 1.0
    if det_perp <= 0:
        raise CurveEscapesQuadraticRegion(f"transverse form toward U_{label:+d} is not positive at r0 = {r0}")
    normal = (crossing - wells.saddle.location) / r0
    flux = float(np.dot(model.A @ zeta_star, normal))
    return c * (2.0 * np.pi) ** ((n - 1) / 2.0) / np.sqrt(det_perp) * flux


@dataclass
class InteractionData:
    """Leading-order interaction coefficients of the two wells with the saddle."""

    kappa: float
    zeta: np.ndarray
    zeta_star: np.ndarray
    phi_plus: np.ndarray
    phi_plus_star: np.ndarray
    pairing: float
    wells: dict
    predicted_total: float
    eyring_kramers_total: float
    r0: float

    @property
    def sensitivity(self):
        return max(w["sensitivity"] for w in self.wells.values())

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "zeta": self.zeta.tolist(),
            "zeta_star": self.zeta_star.tolist(),
            "phi_plus": self.phi_plus.tolist(),
            "phi_plus_star": self.phi_plus_star.tolist(),
            "pairing_scale": self.pairing,
            "wells": {str(j): w for j, w in self.wells.items()},
            "predicted_total": self.predicted_total,
            "eyring_kramers_total": self.eyring_kramers_total,
            "r0": self.r0,
            "sensitivity": self.sensitivity,
        }


def _outgoing_form(H, B, kappa, zeta):
    return H + 2.0 * abs(kappa) * np.outer(zeta, zeta) / float(zeta @ B @ zeta)


def _checked_outgoing_form(model, saddle, closed):
    """The eikonal solve of the outgoing form, cross-checked against its rank-one closed form."""
    solved = stable_quadratic_form(model, saddle, "outgoing").matrix
    defect = float(np.abs(solved - closed).max())
    if defect > FORM_AGREEMENT * max(np.abs(solved).max(), 1.0):
        raise NotAGraph(f"outgoing form of {model.name} disagrees with H + 2|kappa| zeta zeta^T / <B zeta, zeta> "
                        f"by {defect:.3e}")
    return solved


def predict_prefactor(model, wells, r0=DEFAULT_R0, trust_angle=TRUST_ANGLE):
    """
    Leading-order prefactors a_j = l_j l_j* from the Gaussian interaction integrals.

    l_j comes from the complex of A with amplitude zeta* and the outgoing form of
    A^T; l_j* is the same computation for A^T. Both outgoing forms come from the
    eikonal solve. The pair of amplitudes is scaled so the saddle quasimodes have
    unit A-pairing. Each value is recomputed at r0 / 2 and the relative change is
    reported.

    Raises:
        SignViolation: if some l_j l_j* <= 0
        NotAGraph: if the eikonal solve of an outgoing form is unavailable or
            disagrees with the rank-one closed form
        CurveEscapesQuadraticRegion: if an incoming curve leaves the trust region
    """
    saddle = wells.saddle
    n = model.dim
    H, B = saddle.hessian.matrix, model.B
    kappa, zeta = transport_direction(model, saddle)
    _, zeta_star = transport_direction(model, saddle, transpose=True)
    transposed = model.transposed()
    phi_plus = _checked_outgoing_form(model, saddle, _outgoing_form(H, B, kappa, zeta))
    phi_plus_star = _checked_outgoing_form(transposed, saddle, _outgoing_form(H, B, kappa, zeta_star))

    overlap = float(zeta_star @ model.A.T @ zeta)
    pairing = np.sqrt(np.linalg.det(phi_plus + phi_plus_star)) / ((2.0 * np.pi) ** (n / 2.0) * overlap)
    closed = eyring_kramers_prefactor(model, wells)

    def product(label, radius):
        ell = _leading_coefficient(model, wells, label, radius, phi_plus_star, zeta_star, trust_angle)
        ell_star = _leading_coefficient(transposed, wells, label, radius, phi_plus, zeta, trust_angle)
        return ell, ell_star, pairing * ell * ell_star

    per_well = {}
    for label in (-1, 1):
        ell, ell_star, a = product(label, r0)
        if a <= 0:
            raise SignViolation(f"l l* = {a:.3e} is not positive for U_{label:+d}")
        _, _, a_half = product(label, 0.5 * r0)
        per_well[label] = {
            "S": wells.actions[label],
            "ell": ell,
            "ell_star": ell_star,
            "a": a,
            "a_half_r0": a_half,
            "sensitivity": abs(a - a_half) / abs(a),
            "eyring_kramers": closed[label],
        }

    dominant = [j for j in (-1, 1) if abs(wells.actions[j] - wells.s_min) <= 1e-9 * max(1.0, wells.s_min)]
    total = sum(per_well[j]["a"] for j in dominant)
    ek_total = sum(closed[j] for j in dominant)
    logger.info(f"predicted prefactor {total:.6g} (closed form {ek_total:.6g})")
    return InteractionData(kappa, zeta, zeta_star, phi_plus, phi_plus_star, float(pairing), per_well,
                           float(total), float(ek_total), r0)


# Resolvent and localization

def probe_points(h, radius_factor=2.0, count=8):
    theta = 2.0 * np.pi * (np.arange(count) + 0.5) / count
    return radius_factor * h * np.exp(1j * theta)


def resolvent_probe(cx, points, spectrum, C=10.0):
    """
    Estimates of ||(z - P)^{-1}|| as 1 / smallest singular value of z - lap0.

    Args:
        points: complex probe points
        spectrum: computed eigenvalues; probes closer than h / C are rejected

    Returns:
        pandas.DataFrame: columns re, im, norm_estimate, h_times_estimate

    Raises:
        ValueError: for a probe within h / C of the spectrum
        Singular: if z - lap0 is numerically singular
    """
    h = cx.h
    spectrum = np.asarray(spectrum, dtype=complex)
    rows = []
    for z in np.asarray(points, dtype=complex):
        if spectrum.size and np.abs(spectrum - z).min() < h / C:
            raise ValueError(f"probe {z:.4g} lies within h/{C:g} of the spectrum")
        est = smallest_singular_value(cx.lap0, z, perm=cx.ordering(0))
        if est.value == 0.0:
            raise Singular(f"z - P is singular at z = {z}")
        rows.append({"re": z.real, "im": z.imag, "norm_estimate": 1.0 / est.value,
                     "h_times_estimate": h / est.value})
    return pd.DataFrame(rows, columns=["re", "im", "norm_estimate", "h_times_estimate"])


def _real_vector(u):
    u = np.asarray(u)
    if np.iscomplexobj(u):
        k = np.argmax(np.abs(u))
        u = (u * np.conj(u[k]) / abs(u[k])).real
    return u / np.linalg.norm(u)


def quasimodes(cx, wells, margin=QUASIMODE_MARGIN):
    """Truncated normalized Maxwellians exp(-(phi - phi(U_j)) / h) on the basin of each well."""
    x = cx.grid.coordinates(cx.grid.nodes())
    labels = basin_label(cx.model, wells, x, margin)
    phi = cx.model.value(x)
    out = {}
    for j in (-1, 1):
        f = np.where(labels == j, np.exp(-(phi - wells.minimum(j).value) / cx.h), 0.0)
        out[j] = f / np.linalg.norm(f)
    return out


def quasimode_overlaps(cx, wells, vector, margin=QUASIMODE_MARGIN):
    """|<u restricted to the half-space of U_j, f_j>| / |u restricted| for each well."""
    u = _real_vector(vector)
    x = cx.grid.coordinates(cx.grid.nodes())
    split = wells.saddle.location[0]
    out = {}
    for j, f in quasimodes(cx, wells, margin).items():
        half = x[:, 0] < split if j == -1 else x[:, 0] >= split
        part = np.where(half, u, 0.0)
        out[j] = float(abs(part @ f) / np.linalg.norm(part))
    return out


def saddle_concentration(cx, wells, vector, radius=SADDLE_RADIUS):
    """Fraction of the squared norm of a 1-form within radius of U_0."""
    u = np.abs(np.asarray(vector)) ** 2
    x = cx.dof_coordinates(1)
    near = np.linalg.norm(x - wells.saddle.location, axis=1) <= radius
    return float(u[near].sum() / u.sum())


def localization_check(cx0, wells, vector0, cx1=None, vector1=None):
    """Quasimode overlaps of the mu_1 eigenvector and saddle concentration of the degree-1 one."""
    overlaps = quasimode_overlaps(cx0, wells, vector0)
    report = {"overlaps": {str(j): v for j, v in overlaps.items()},
              "degree0_pass": all(v >= OVERLAP_THRESHOLD for v in overlaps.values())}
    if cx1 is not None and vector1 is not None:
        mass = saddle_concentration(cx1, wells, vector1)
        report["saddle_mass"] = mass
        report["degree1_pass"] = mass >= OVERLAP_THRESHOLD
    report["pass"] = report["degree0_pass"] and report.get("degree1_pass", True)
    return report


def splitting_vector(spectrum):
    """Eigenvalue and vector of the smallest nonzero value of a spectrum result."""
    mask = np.ones(spectrum.eigenvalues.shape[0], dtype=bool)
    if spectrum.deflated:
        mask &= spectrum.eigenvalues != 0
    idx = np.flatnonzero(mask)
    i = idx[np.argmin(np.abs(spectrum.eigenvalues[idx]))]
    return spectrum.eigenvalues[i], spectrum.vectors[:, i]


# Structural checks on computed spectra

def window_height(lattice):
    return 4.0 * max((abs(mu.imag) for mu in lattice), default=0.0) + 1.0


def spectral_window_check(values, h, B=DEFAULT_WINDOW, D=None, lattice=None):
    """No computed value with Re < B h and |Im| > D h."""
    if D is None:
        D = window_height(lattice or [])
    values = np.asarray(values, dtype=complex)
    bad = values[(values.real < B * h) & (np.abs(values.imag) > D * h)]
    return {"B": B, "D": D, "violations": [[z.real, z.imag] for z in bad], "pass": bad.size == 0}


def pairing_check(spectrum0, spectrum1, rtol=1e-6):
    """
    Nonzero degree-0 values must reappear among the degree-1 values. Only values
    inside the disk that the degree-1 computation covered are compared.
    """
    values1 = np.asarray(spectrum1.eigenvalues, dtype=complex)
    reach = np.abs(values1).max() if values1.size else np.inf
    pairs = []
    for lam in spectrum0.nonzero():
        if abs(lam) > 0.9 * reach:
            continue
        if values1.size == 0:
            pairs.append({"re": lam.real, "im": lam.imag, "relative": None, "pass": False})
            continue
        rel = float(np.abs(values1 - lam).min() / abs(lam))
        pairs.append({"re": lam.real, "im": lam.imag, "relative": rel, "pass": rel <= rtol})
    return {"pairs": pairs, "pass": all(p["pass"] for p in pairs)}
