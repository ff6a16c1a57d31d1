"""
Numerical checks of the dynamical averaging conditions along the transport
flow nu = 2 C phi' and the averaging weights built on them.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import expm

from kfplab.errors import Blowup, HypothesisFails
from kfplab.symbol_geometry import SymbolSet

logger = logging.getLogger(__name__)

# Constants
DEFAULT_T0 = 10.0
TRAJECTORY_STEPS = 2048
BLOWUP_RADIUS = 1e3
CONSERVATION_TOLERANCE = 1e-8
BUMP_PLATEAU = 0.3
BUMP_ZERO = 0.45
FAR_PLATEAU = 1.5
FAR_ZERO = 2.0


class FlowField:
    """
    An autonomous vector field integrated with fixed-step RK4.

    Args:
        velocity (callable): maps points (..., n) to velocities (..., n)
        T0 (float): averaging horizon
        conserved (callable, optional): scalar that the flow should keep constant
    """

    def __init__(self, velocity, T0=DEFAULT_T0, conserved=None):
        if T0 <= 0:
            raise ValueError("T0 must be positive")
        self.velocity = velocity
        self.T0 = float(T0)
        self.dt = self.T0 / TRAJECTORY_STEPS
        self.conserved = conserved
        self.max_drift = 0.0

    @classmethod
    def from_model(cls, model, T0=DEFAULT_T0):
        symbols = SymbolSet(model)
        return cls(symbols.c, T0, conserved=model.value)

    @classmethod
    def phase_space(cls, model, T0=DEFAULT_T0):
        """Hamilton flow of p1 on (x, xi): x' = 2 C phi', xi' = 2 phi'' C xi."""
        n = model.dim
        C = model.C

        def velocity(z):
            x, xi = z[..., :n], z[..., n:]
            dx = 2.0 * model.gradient(x) @ C.T
            dxi = 2.0 * np.einsum("...ij,...j->...i", model.hessian(x), xi @ C.T)
            return np.concatenate([dx, dxi], axis=-1)

        return cls(velocity, T0)

    def _step(self, x, dt):
        k1 = self.velocity(x)
        k2 = self.velocity(x + 0.5 * dt * k1)
        k3 = self.velocity(x + 0.5 * dt * k2)
        k4 = self.velocity(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0.0) > BLOWUP_RADIUS:
            raise Blowup(f"trajectory left the ball of radius {BLOWUP_RADIUS:g}")
        return x

    def trajectory(self, x0):
        """Samples of exp(t nu)(x0) at t = -T0/2 + k dt, k = 0..2048; shape (2049, ..., n)."""
        x0 = np.asarray(x0, dtype=float)
        half = TRAJECTORY_STEPS // 2
        forward, backward = [x0], [x0]
        for _ in range(half):
            forward.append(self._step(forward[-1], self.dt))
            backward.append(self._step(backward[-1], -self.dt))
        path = np.stack(backward[:0:-1] + forward)
        if self.conserved is not None:
            values = self.conserved(path)
            drift = float(np.abs(values - values[half]).max())
            self.max_drift = max(self.max_drift, drift)
            if drift > CONSERVATION_TOLERANCE * (1.0 + np.abs(values[half]).max()):
                logger.warning(f"conserved quantity drifted by {drift:.3e} along a trajectory")
        return path


def flow(field, x0, t):
    """
    Integrate the field from x0 for time t.

    Raises:
        Blowup: if the trajectory leaves the ball of radius 1e3
    """
    if abs(t) > 10.0 * field.T0:
        raise ValueError("|t| must not exceed 10 T0")
    x = np.asarray(x0, dtype=float)
    if t == 0:
        return x.copy()
    steps = max(1, int(np.ceil(abs(t) / field.dt - 1e-9)))
    dt = t / steps
    for _ in range(steps):
        x = field._step(x, dt)
    return x


def phase_flow(model, rho0, t, T0=DEFAULT_T0):
    return flow(FlowField.phase_space(model, T0), rho0, t)


def _simpson_weights(intervals, dt):
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * dt / 3.0


def _average_over(values, field):
    # values has the trajectory axis first
    w = _simpson_weights(TRAJECTORY_STEPS, field.dt)
    return np.tensordot(w, values, axes=(0, 0)) / field.T0


def time_average(field, g, x0):
    """(1/T0) int_{-T0/2}^{T0/2} g(exp(t nu) x0) dt by composite Simpson."""
    return _average_over(g(field.trajectory(x0)), field)


# Averaging weights

def f_profile(t):
    """C^1 profile: t on [0, 1], 1 + s - s^2/2 (s = t - 1) on [1, 2], 3/2 beyond."""
    t = np.asarray(t, dtype=float)
    s = t - 1.0
    return np.where(t <= 1.0, t, np.where(t >= 2.0, 1.5, 1.0 + s - 0.5 * s * s))


def g_profile(t):
    """C^1 decreasing profile: 1 on [0, 1], 1/t on [2, inf), cubic Hermite between."""
    t = np.asarray(t, dtype=float)
    s = t - 1.0
    blend = 1.0 - 1.25 * s ** 2 + 0.75 * s ** 3
    return np.where(t <= 1.0, 1.0, np.where(t >= 2.0, 1.0 / np.maximum(t, 2.0), blend))


def f_eps(t, eps):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return eps * f_profile(np.asarray(t, dtype=float) / eps)


def sawtooth(t):
    """Odd sawtooth: t + 1/2 on [-1/2, 0), -k(-t) on (0, 1/2], 0 elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.where(t < 0, t + 0.5, t - 0.5)
    return np.where((np.abs(t) >= 0.5) | (t == 0), 0.0, out)


def psi_eps(x, eps, field, model):
    """
    int k(t/T0) f_eps(p0(exp(t nu) x)) dt over [-T0/2, T0/2].

    Each half is integrated separately with the one-sided limits of k at t = 0.
    """
    path = field.trajectory(x)
    values = f_eps(SymbolSet(model).p0(path), eps)
    half = TRAJECTORY_STEPS // 2
    w = _simpson_weights(half, field.dt)
    k_left = sawtooth(np.linspace(-0.5, 0.0, half + 1))
    k_left[-1] = 0.5
    k_right = sawtooth(np.linspace(0.0, 0.5, half + 1))
    k_right[0] = -0.5
    psi = np.tensordot(w * k_left, values[: half + 1], axes=(0, 0)) \
        + np.tensordot(w * k_right, values[half:], axes=(0, 0))
    bound = 3.0 * field.T0 / 8.0 * eps
    if np.any(np.abs(psi) > bound * (1.0 + 1e-12)):
        raise ValueError(f"|psi_eps| exceeds {bound:.6g}")
    return psi


def check_transport_identity(field, model, eps, samples, ds=1e-3, tol=1e-4):
    """
    Compare the derivative of psi_eps along nu with f_eps(p0) minus its time average.

    Returns:
        dict: max defect, tolerance and pass flag
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    ahead = flow(field, samples, ds)
    behind = flow(field, samples, -ds)
    lhs = (psi_eps(ahead, eps, field, model) - psi_eps(behind, eps, field, model)) / (2.0 * ds)
    p0 = SymbolSet(model).p0
    rhs = f_eps(p0(samples), eps) - time_average(field, lambda z: f_eps(p0(z), eps), samples)
    defect = float(np.abs(lhs - rhs).max())
    return {"eps": eps, "max_defect": defect, "tolerance": tol, "pass": defect <= tol}


def _smooth_cutoff(r, plateau, zero):
    """1 for r <= plateau, 0 for r >= zero, C^1 smoothstep between."""
    s = np.clip((np.asarray(r, dtype=float) - plateau) / (zero - plateau), 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


def p_tilde(model, x, xi):
    symbols = SymbolSet(model)
    xi = np.asarray(xi, dtype=float)
    return symbols.p0(x) + symbols.p2(x, xi) / (1.0 + np.sum(xi * xi, axis=-1))


class AveragingWeight:
    """
    The averaging weight p_tilde_eps, glued from a bump near each doubly
    characteristic point, a middle region and a far region where it is f_eps(p0).

    Args:
        model (ModelSpec): the model
        points (list): critical points; rho_j = (U_j, 0)
        bump (tuple): plateau and zero radius of the bumps chi_j
        far (tuple): plateau and zero radius of chi_new in x
    """

    def __init__(self, model, points, bump=(BUMP_PLATEAU, BUMP_ZERO), far=(FAR_PLATEAU, FAR_ZERO)):
        self.model = model
        self.symbols = SymbolSet(model)
        self.centers = np.array([cp.location for cp in points])
        self.bump = bump
        self.far = far

    def _bumps(self, x, xi=None):
        z = np.asarray(x, dtype=float)
        if xi is None:
            dist2 = np.sum((z[..., None, :] - self.centers) ** 2, axis=-1)
        else:
            xi = np.asarray(xi, dtype=float)
            dist2 = np.sum((z[..., None, :] - self.centers) ** 2, axis=-1) + np.sum(xi * xi, axis=-1)[..., None]
        chi = _smooth_cutoff(np.sqrt(dist2), *self.bump)
        total = chi.sum(axis=-1)
        scale = np.maximum(total, 1.0)
        return chi / scale[..., None], dist2

    def p_tilde_new(self, x, xi):
        chi, _ = self._bumps(x)
        chi = chi.sum(axis=-1)
        xi = np.asarray(xi, dtype=float)
        return self.symbols.p0(x) + chi * self.symbols.p2(x, xi) / (1.0 + np.sum(xi * xi, axis=-1))

    def __call__(self, x, xi, eps):
        if eps <= 0:
            raise ValueError("eps must be positive")
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        chi, dist2 = self._bumps(x, xi)
        base = p_tilde(self.model, x, xi)
        near = np.sum(chi * g_profile(dist2 / eps), axis=-1) * base
        middle = eps * (1.0 - chi.sum(axis=-1)) * self.p_tilde_new(x, xi)
        chi_new = _smooth_cutoff(np.linalg.norm(x, axis=-1), *self.far)
        value = chi_new * (near + middle) + (1.0 - chi_new) * f_eps(self.symbols.p0(x), eps)
        if np.any(value > base + 1e-12 * (1.0 + np.abs(base))):
            raise ValueError("averaging weight exceeds p_tilde")
        return value


def p_tilde_eps(model, points, x, xi, eps):
    return AveragingWeight(model, points)(x, xi, eps)


# Hypothesis certificates

def _averaged_quadratic(Q, F, T0, steps=TRAJECTORY_STEPS):
    # (1/T0) int_{-T0/2}^{T0/2} exp(tF)^T Q exp(tF) dt
    dt = T0 / steps
    step = expm(F * dt)
    E = expm(-0.5 * T0 * F)
    w = _simpson_weights(steps, dt)
    total = np.zeros_like(Q)
    for k in range(steps + 1):
        total += w[k] * (E.T @ Q @ E)
        E = step @ E
    return 0.5 * (total + total.T) / T0


def check_ny17(model, cp, T0=DEFAULT_T0):
    """
    Time-averaged quadratic approximation of p_tilde at (U_j, 0) along the
    linearized H_p1 flow.

    Returns:
        tuple: (averaged form as a 2n x 2n array, certified C = 1 / min eigenvalue)

    Raises:
        HypothesisFails: with the null direction when the averaged form is not positive definite
    """
    H, B, C = cp.hessian.matrix, model.B, model.C
    n = model.dim
    zero = np.zeros((n, n))
    Q = np.block([[H @ B @ H, zero], [zero, B]])
    F = np.block([[2.0 * C @ H, zero], [zero, 2.0 * H @ C]])
    avg = _averaged_quadratic(Q, F, T0)
    values, vectors = np.linalg.eigh(avg)
    floor = 1e-10 * max(np.abs(avg).max(), 1e-300)
    if values[0] <= floor:
        direction = vectors[:, 0]
        raise HypothesisFails(
            f"averaged form at {np.round(cp.location, 6).tolist()} is not positive definite "
            f"(min eigenvalue {values[0]:.3e})", direction=direction.tolist())
    logger.debug(f"ny17 at {cp.location.tolist()}: C = {1.0 / values[0]:.4g}")
    return avg, float(1.0 / values[0])


@dataclass
class AverageReport:
    """Per-sample time averages of p0 and time fractions where p0 exceeds the threshold."""

    samples: np.ndarray
    averages: np.ndarray
    fractions: np.ndarray
    threshold: float
    T0: float
    notes: list = field(default_factory=list)

    @property
    def flags(self):
        return (self.averages >= self.threshold) & (self.fractions >= self.threshold)

    @property
    def passed(self):
        return bool(np.all(self.flags))

    @property
    def worst(self):
        return int(np.argmin(np.minimum(self.averages, self.fractions)))

    def to_frame(self):
        names = ["x", "y", "z"] if self.samples.shape[1] <= 3 else [f"x{i}" for i in range(self.samples.shape[1])]
        df = pd.DataFrame(self.samples, columns=names[: self.samples.shape[1]])
        df["average"] = self.averages
        df["measure_fraction"] = self.fractions
        df["pass"] = self.flags
        return df

    def to_dict(self):
        w = self.worst
        return {
            "T0": self.T0,
            "threshold": self.threshold,
            "samples": int(self.samples.shape[0]),
            "min_average": float(self.averages.min()),
            "min_fraction": float(self.fractions.min()),
            "worst_sample": self.samples[w].tolist(),
            "pass": self.passed,
            "notes": list(self.notes),
        }


def ring_samples(points, radius=0.5, count=16, exclusion=0.1):
    """Points on the l1-sphere of the given radius around each critical point, minus exclusion balls."""
    centers = np.array([cp.location for cp in points])
    n = centers.shape[1]
    if n == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        ring = np.column_stack([np.cos(theta), np.sin(theta)])
        ring = radius * ring / np.abs(ring).sum(axis=1)[:, None]
    else:
        ring = radius * np.vstack([np.eye(n), -np.eye(n)])
    samples = (centers[:, None, :] + ring[None, :, :]).reshape(-1, n)
    dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=-1).min(axis=1)
    return samples[dist > exclusion]


def check_ny19_ny20(field, model, samples, threshold, points=None, exclusion=0.1):
    """
    Time average of p0 and the time fraction with p0 >= threshold per sample.

    Raises:
        ValueError: if a sample lies within ``exclusion`` of a critical point
        HypothesisFails: carrying the report when some sample falls below the threshold
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if points:
        centers = np.array([cp.location for cp in points])
        dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=-1).min(axis=1)
        if np.any(dist <= exclusion):
            raise ValueError(f"samples must stay more than {exclusion} away from the critical points")
    p0 = SymbolSet(model).p0
    path = field.trajectory(samples)
    values = p0(path)
    averages = _average_over(values, field)
    trapezoid = np.full(TRAJECTORY_STEPS + 1, 1.0)
    trapezoid[[0, -1]] = 0.5
    fractions = np.tensordot(trapezoid, (values >= threshold).astype(float), axes=(0, 0)) / TRAJECTORY_STEPS
    report = AverageReport(samples, averages, fractions, threshold, field.T0)
    if not report.passed:
        w = report.worst
        raise HypothesisFails(
            f"time average {averages[w]:.3e} / fraction {fractions[w]:.3e} below {threshold:g} "
            f"at sample {samples[w].tolist()}", direction=samples[w].tolist(), report=report)
    return report


def averaged_weight_profile(model, points, cp, eps, T0=DEFAULT_T0, distances=None, direction=None,
                            bump=(BUMP_PLATEAU, BUMP_ZERO), far=(FAR_PLATEAU, FAR_ZERO)):
    """
    Time averages of p_tilde_eps along the H_p1 flow on a ray from (U_j, 0),
    with the ratio constants against dist^2 (inside sqrt(eps)) and eps (outside).
    """
    weight = AveragingWeight(model, points, bump, far)
    field_ = FlowField.phase_space(model, T0)
    n = model.dim
    if direction is None:
        direction = np.ones(2 * n) / np.sqrt(2 * n)
    direction = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    if distances is None:
        distances = np.geomspace(0.1 * np.sqrt(eps), min(0.25, 3.0 * np.sqrt(eps)), 12)
    rho0 = np.concatenate([cp.location, np.zeros(n)])
    rhos = rho0 + np.outer(distances, direction)
    averages = time_average(field_, lambda z: weight(z[..., :n], z[..., n:], eps), rhos)
    near = distances <= np.sqrt(eps)
    ratios = np.where(near, averages / distances ** 2, averages / eps)
    rows = pd.DataFrame({"distance": distances, "average": averages, "ratio": ratios, "near": near})
    summary = {}
    for label, mask in (("near", near), ("far", ~near)):
        if mask.any():
            summary[label] = {"min_ratio": float(ratios[mask].min()), "max_ratio": float(ratios[mask].max())}
    return rows, summary


def hypothesis_report(model, points, T0=DEFAULT_T0, ring_radius=0.5, exclusion=0.1, threshold=1e-3,
                      eps_grid=(0.5, 0.1, 0.05), ring_count=16, bump_radius=BUMP_PLATEAU,
                      far_radius=FAR_ZERO):
    """
    Run every certificate and collect them in one document.

    The bump cutoffs are flat up to ``bump_radius`` and vanish at 1.5 times
    it; the far cutoff is flat up to 0.75 ``far_radius`` and vanishes there.

    Returns:
        tuple: (report dict, AverageReport or None); ``report["pass"]`` is the overall flag
    """
    doc = {"T0": T0, "ny17": [], "pass": True}
    for cp in points:
        entry = {"location": cp.location.tolist(), "index": cp.index}
        try:
            _, constant = check_ny17(model, cp, T0)
            entry.update({"C": constant, "pass": True})
        except HypothesisFails as e:
            entry.update({"C": None, "pass": False, "null_direction": e.direction})
            doc["pass"] = False
        doc["ny17"].append(entry)

    field_ = FlowField.from_model(model, T0)
    samples = ring_samples(points, ring_radius, ring_count, exclusion)
    try:
        averages = check_ny19_ny20(field_, model, samples, threshold, points, exclusion)
    except HypothesisFails as e:
        averages = e.report
        doc["pass"] = False
    doc["ny19_ny20"] = averages.to_dict()
    doc["conservation_drift"] = field_.max_drift

    doc["psi_bound"] = []
    for eps in eps_grid:
        try:
            psi = psi_eps(samples, eps, field_, model)
            doc["psi_bound"].append({"eps": eps, "max_abs": float(np.abs(psi).max()),
                                     "bound": 3.0 * T0 / 8.0 * eps, "pass": True})
        except ValueError:
            doc["psi_bound"].append({"eps": eps, "pass": False})
            doc["pass"] = False
    doc["transport_identity"] = check_transport_identity(field_, model, eps_grid[-1], samples[:4])

    bump = (bump_radius, 1.5 * bump_radius)
    far = (0.75 * far_radius, far_radius)
    doc["weight_profile"] = []
    for cp in points:
        if cp.index != 0:
            continue
        try:
            _, summary = averaged_weight_profile(model, points, cp, eps_grid[-1], T0, bump=bump, far=far)
            doc["weight_profile"].append({"location": cp.location.tolist(), **summary})
        except ValueError as e:
            logger.warning(f"Averaged weight profile at {cp.location} failed: {e}")
            doc["weight_profile"].append({"location": cp.location.tolist(), "error": str(e)})
    return doc, averages
