"""
Classical symbols of the Witten Laplacian and the quadratic geometry at the
critical points: fundamental eigenvalues, the mu-lattice, stable and unstable
Lagrangian graphs, Lyapunov forms and escape-function certificates.

Conventions, for constant A = B + C and H = phi''(U):
    p2 = <B xi, xi>,  p1 = 2 <C phi', xi>,  p0 = <B phi', phi'>
    p  = p2 + i p1 + p0,  q = p2 + p1 - p0,  q_check(x, xi) = q(x, -xi)
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import expm

from kfplab.eigen_kernel import dense_eigs
from kfplab.errors import ImaginaryAxisEigenvalue, LatticeOverflow, NoPositiveEpsilon, NotAGraph
from kfplab.landscape import QuadraticForm

logger = logging.getLogger(__name__)

# Constants
AXIS_TOLERANCE = 1e-8
GRAPH_CONDITION_LIMIT = 1e8
EIKONAL_TOLERANCE = 1e-8
LATTICE_CAP = 10 ** 6
LATTICE_MERGE = 1e-10
LYAPUNOV_STEPS = 256
ESCAPE_C0 = 100.0

__all__ = [
    "QuadraticForm", "SymbolSet", "MuLattice", "LatticeEntry", "CertifiedForm", "EscapeCertificate",
    "principal_symbol", "fundamental_eigs", "tr_tilde", "subprincipal_eigs", "mu_lattice",
    "quadratic_q", "hamilton_matrix", "eikonal_residual", "stable_quadratic_form",
    "transport_direction", "lyapunov_form", "escape_form", "lattice_report", "build_lattice",
]


class SymbolSet:
    """Evaluators for p2, p1, p0, q and p of a model; vectorized over leading axes."""

    def __init__(self, model):
        self.model = model
        self.B = model.B
        self.C = model.C

    def c(self, x):
        return 2.0 * self.model.gradient(x) @ self.C.T

    def p2(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...i,ij,...j->...", xi, self.B, xi)

    def p0(self, x):
        g = self.model.gradient(x)
        return np.einsum("...i,ij,...j->...", g, self.B, g)

    def p1(self, x, xi):
        return np.sum(self.c(x) * np.asarray(xi, dtype=float), axis=-1)

    def q(self, x, xi):
        return self.p2(x, xi) + self.p1(x, xi) - self.p0(x)

    def q_check(self, x, xi):
        return self.q(x, -np.asarray(xi, dtype=float))

    def p(self, x, xi):
        return self.p2(x, xi) + self.p0(x) + 1j * self.p1(x, xi)


def principal_symbol(model, x, xi):
    return SymbolSet(model).p(x, xi)


def _check_axis(values, what):
    scale = np.abs(values).max()
    bad = np.abs(values.real) <= AXIS_TOLERANCE * scale
    if np.any(bad):
        raise ImaginaryAxisEigenvalue(f"{what} has eigenvalue(s) on the imaginary axis: {values[bad].tolist()}")


def fundamental_eigs(model, cp):
    """
    Eigenvalues of A phi''(U) ordered by descending real part, then imaginary part.

    Raises:
        ImaginaryAxisEigenvalue: if some |Re lambda| <= 1e-8 max|lambda|
    """
    values = dense_eigs(model.A @ cp.hessian.matrix)
    _check_axis(values, f"A phi'' at {np.round(cp.location, 6).tolist()}")
    return values


def tr_tilde(lambdas):
    lambdas = np.asarray(lambdas, dtype=complex)
    _check_axis(lambdas, "fundamental matrix")
    total = 2.0 * (lambdas[lambdas.real > 0].sum() - lambdas[lambdas.real < 0].sum())
    return float(total.real)


def subprincipal_eigs(lambdas, degree):
    """
    Eigenvalues of the combined trace and subprincipal term on m-forms:
    2 (sum of the chosen lambdas - sum of the lambdas with Re < 0), one per m-subset.
    """
    lambdas = np.asarray(lambdas, dtype=complex)
    n = lambdas.shape[0]
    if not 0 <= degree <= n:
        raise ValueError(f"degree must lie in [0, {n}]")
    negative = lambdas[lambdas.real < 0].sum()
    return np.array([2.0 * (lambdas[list(s)].sum() - negative) for s in combinations(range(n), degree)],
                    dtype=complex)


@dataclass
class LatticeEntry:
    value: complex
    multiplicity: int
    nu_vectors: list
    gamma_indices: list

    @property
    def resonant(self):
        # the same value reached through different nu-representations
        return len({tuple(v) for v in self.nu_vectors}) > 1

    def to_dict(self):
        return {
            "re": float(self.value.real),
            "im": float(self.value.imag),
            "multiplicity": int(self.multiplicity),
            "nu_vector": [list(map(int, v)) for v in self.nu_vectors],
            "gamma_index": [int(g) for g in self.gamma_indices],
            "resonant": self.resonant,
        }


def mu_lattice(lambdas, degree, radius):
    """
    All values gamma + sum nu_l lambda_hat_l of modulus < radius.

    lambda_hat_l = 2 sign(Re lambda_l) lambda_l, nu ranges over N^n and gamma
    over subprincipal_eigs(lambdas, degree).

    Returns:
        list: LatticeEntry objects sorted by (Re, Im)
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    lambdas = np.asarray(lambdas, dtype=complex)
    _check_axis(lambdas, "fundamental matrix")
    hats = 2.0 * np.sign(lambdas.real) * lambdas
    gammas = subprincipal_eigs(lambdas, degree)

    raw = []
    for gi, gamma in enumerate(gammas):
        bounds = [max(0, int(np.floor((radius - gamma.real) / h.real))) for h in hats]
        stack = [(0, gamma, [])]
        while stack:
            pos, value, nu = stack.pop()
            if pos == len(hats):
                if abs(value) < radius:
                    raw.append((value, nu, gi))
                    if len(raw) > LATTICE_CAP:
                        raise LatticeOverflow(f"lattice exceeds {LATTICE_CAP} entries at radius {radius}")
                continue
            for k in range(bounds[pos], -1, -1):
                stack.append((pos + 1, value + k * hats[pos], nu + [k]))

    raw.sort(key=lambda r: (round(r[0].real, 9), round(r[0].imag, 9), r[2], r[1]))
    entries = []
    for value, nu, gi in raw:
        if entries and abs(entries[-1].value - value) <= LATTICE_MERGE * max(1.0, abs(value)):
            entry = entries[-1]
            entry.multiplicity += 1
            entry.nu_vectors.append(nu)
            entry.gamma_indices.append(gi)
        else:
            entries.append(LatticeEntry(complex(value), 1, [nu], [gi]))
    return entries


@dataclass
class MuLattice:
    """Lattice data of one critical point for the requested degrees and radius."""

    critical_point: object
    lambdas: np.ndarray
    tr_tilde: float
    subprincipal_eigs_by_degree: dict
    lattice_by_degree: dict = field(default_factory=dict)

    def values(self, degree, radius):
        """Flat list of lattice values, repeated by multiplicity."""
        out = []
        for entry in self.lattice_by_degree[(degree, radius)]:
            out.extend([entry.value] * entry.multiplicity)
        return out


def build_lattice(model, cp, degrees, radius):
    lambdas = fundamental_eigs(model, cp)
    sub = {m: subprincipal_eigs(lambdas, m) for m in degrees}
    lattice = {(m, radius): mu_lattice(lambdas, m, radius) for m in degrees}
    return MuLattice(cp, lambdas, tr_tilde(lambdas), sub, lattice)


def lattice_report(model, points, degrees=(0, 1), radius=2.0):
    """JSON-ready lattice document, one block per critical point."""
    report = []
    for cp in points:
        lat = build_lattice(model, cp, degrees, radius)
        report.append({
            "location": cp.location.tolist(),
            "value": cp.value,
            "index": cp.index,
            "lambdas": [[float(z.real), float(z.imag)] for z in lat.lambdas],
            "tr_tilde": lat.tr_tilde,
            "degrees": {
                str(m): {
                    "subprincipal": [[float(z.real), float(z.imag)] for z in lat.subprincipal_eigs_by_degree[m]],
                    "lattice": [e.to_dict() for e in lat.lattice_by_degree[(m, radius)]],
                }
                for m in degrees
            },
        })
    return report


# Quadratic geometry at a critical point

def _sign(symbol):
    if symbol not in ("q", "q_check"):
        raise ValueError(f"unknown symbol '{symbol}'")
    return 1.0 if symbol == "q" else -1.0


def quadratic_q(model, cp, symbol="q"):
    """Symmetric 2n x 2n matrix of the quadratic Taylor form of q (or q_check) at (U, 0)."""
    s = _sign(symbol)
    H, B, C = cp.hessian.matrix, model.B, s * model.C
    return np.block([[-H @ B @ H, -H @ C], [C @ H, B]])


def hamilton_matrix(model, cp, symbol="q"):
    """Linearization F of the Hamilton field of q (or q_check) at (U, 0)."""
    s = _sign(symbol)
    H, B, C = cp.hessian.matrix, model.B, s * model.C
    return np.block([[2.0 * C @ H, 2.0 * B], [2.0 * H @ B @ H, 2.0 * H @ C]])


def eikonal_residual(model, cp, M, symbol="q"):
    """Coefficient matrix of x -> q_quad(x, M x); zero for an invariant graph."""
    s = _sign(symbol)
    H, B, C = cp.hessian.matrix, model.B, s * model.C
    R = M @ B @ M + M @ C @ H - H @ C @ M - H @ B @ H
    return 0.5 * (R + R.T)


def _real_basis(values, vectors, mask):
    cols = []
    for i in np.flatnonzero(mask):
        lam, v = values[i], vectors[:, i]
        if lam.imag > 0:
            cols.extend([v.real, v.imag])
        elif lam.imag == 0:
            cols.append(v.real if np.abs(v.real).max() >= np.abs(v.imag).max() else v.imag)
    return np.column_stack(cols) if cols else np.zeros((vectors.shape[0], 0))


def stable_quadratic_form(model, cp, direction="outgoing", symbol="q"):
    """
    Hessian of the generating function of the outgoing (Re > 0) or incoming
    (Re < 0) invariant Lagrangian plane of the Hamilton field at (U, 0).

    Returns:
        QuadraticForm: symmetric M with the plane written as xi = M x

    Raises:
        NotAGraph: if the plane does not project onto x-space, or its
            generating form leaves an eikonal residual above tolerance
        ImaginaryAxisEigenvalue: if the linearization has imaginary-axis spectrum
    """
    if direction not in ("outgoing", "incoming"):
        raise ValueError(f"unknown direction '{direction}'")
    n = model.dim
    F = hamilton_matrix(model, cp, symbol)
    values, vectors = dense_eigs(F, vectors=True)
    _check_axis(values, "Hamilton linearization")
    mask = values.real > 0 if direction == "outgoing" else values.real < 0
    W = _real_basis(values, vectors, mask)
    if W.shape[1] != n:
        raise NotAGraph(f"{direction} subspace has dimension {W.shape[1]}, expected {n}")
    X, Xi = W[:n], W[n:]
    if np.linalg.cond(X) > GRAPH_CONDITION_LIMIT:
        raise NotAGraph(f"{direction} subspace is not a graph over x (cond {np.linalg.cond(X):.3e})")
    M = np.linalg.solve(X.T, Xi.T).T
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > 1e-8 * scale:
        raise NotAGraph(f"{direction} subspace is not Lagrangian (asymmetry {np.abs(M - M.T).max():.3e})")
    M = 0.5 * (M + M.T)
    residual = np.abs(eikonal_residual(model, cp, M, symbol)).max()
    q_scale = np.abs(quadratic_q(model, cp, symbol)).max()
    if residual > EIKONAL_TOLERANCE * q_scale:
        raise NotAGraph(f"{direction} graph misses the eikonal equation at {cp.location.tolist()} "
                        f"(residual {residual:.3e})")
    return QuadraticForm(M)


def transport_direction(model, cp, transpose=False):
    """
    Eigenvector for the negative eigenvalue of phi'' A^T (or phi'' A when
    ``transpose``) at an index-one critical point.

    Returns:
        tuple: (kappa, unit real vector)
    """
    H = cp.hessian.matrix
    K = H @ (model.A if transpose else model.A.T)
    values, vectors = dense_eigs(K, vectors=True)
    negative = np.flatnonzero(values.real < 0)
    if negative.size != 1 or values[negative[0]].imag != 0:
        raise ValueError("transport direction needs exactly one real negative eigenvalue")
    i = negative[0]
    v = vectors[:, i]
    v = v.real if np.abs(v.real).max() >= np.abs(v.imag).max() else v.imag
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return float(values[i].real), v


@dataclass
class CertifiedForm:
    form: QuadraticForm
    constant: float
    horizon: tuple


def _time_average(M, T, steps=LYAPUNOV_STEPS):
    # Simpson rule for (1/T) int_0^T exp(tM)^T exp(tM) dt
    dt = T / steps
    step = expm(M * dt)
    E = np.eye(M.shape[0])
    total = np.zeros_like(E)
    for k in range(steps + 1):
        weight = 1.0 if k in (0, steps) else (4.0 if k % 2 else 2.0)
        total += weight * (E.T @ E)
        E = step @ E
    return total * dt / 3.0 / T


def lyapunov_form(M, T=None, normalize=False, samples=200, seed=42):
    """
    Quadratic form G increasing along x' = M x, built from the invariant
    splitting of M into Re > 0 and Re < 0 parts.

    Args:
        M (numpy.ndarray): real matrix without imaginary-axis eigenvalues
        T (float, optional): averaging horizon; default 5 / min|Re lambda| per block
        normalize (bool): scale each block to unit norm

    Returns:
        CertifiedForm: G, the certified constant c = min over |x| = 1 of
        <G M x + M^T G x, x>, and the horizons used
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    values, vectors = dense_eigs(M, vectors=True)
    _check_axis(values, "Lyapunov generator")
    V_plus = _real_basis(values, vectors, values.real > 0)
    V_minus = _real_basis(values, vectors, values.real < 0)
    S = np.column_stack([V_plus, V_minus])
    S_inv = np.linalg.inv(S)
    k = V_plus.shape[1]
    P_plus, P_minus = S_inv[:k], S_inv[k:]

    G = np.zeros((n, n))
    horizons = []
    for P, V, sign in ((P_plus, V_plus, 1.0), (P_minus, V_minus, -1.0)):
        if V.shape[1] == 0:
            horizons.append(0.0)
            continue
        block = P @ M @ V
        horizon = T if T is not None else 5.0 / np.abs(np.linalg.eigvals(block).real).min()
        horizons.append(float(horizon))
        avg = _time_average(sign * block, horizon)
        if normalize:
            avg = avg / np.linalg.norm(avg, 2)
        G += sign * P.T @ avg @ P

    G = 0.5 * (G + G.T)
    derivative = G @ M + M.T @ G
    constant = float(np.linalg.eigvalsh(0.5 * (derivative + derivative.T)).min())
    # sampled cross-check on the unit sphere
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, n))
    x /= np.linalg.norm(x, axis=1)[:, None]
    sampled = np.einsum("ki,ij,kj->k", x, derivative, x).min()
    if sampled < constant - 1e-9 * max(1.0, abs(constant)):
        logger.warning(f"sampled Lyapunov constant {sampled:.3e} below eigen certificate {constant:.3e}")
    return CertifiedForm(QuadraticForm(G), constant, tuple(horizons))


@dataclass
class EscapeCertificate:
    G: QuadraticForm
    G_tilde: QuadraticForm
    epsilon_star: float
    margin: float


def _p0_matrix(model, H):
    # complex symmetric matrix of p0(z) = (i xi + H x)^T A (-i xi + H x)
    B, C = model.B, model.C
    real = np.block([[H @ B @ H, np.zeros_like(H)], [np.zeros_like(H), B]])
    imag = np.block([[np.zeros_like(H), -H @ C], [C @ H, np.zeros_like(H)]])
    return real + 1j * imag


def escape_form(model, cp, c0=ESCAPE_C0):
    """
    Escape-function certificate at a critical point.

    Finds the largest eps in {2^-k : k = 1..20} with
    Re p0(rho + i eps H_G(rho)) - (eps / c0) |rho|^2 >= 0, G(x, xi) = G(x) + G_tilde(xi).

    Returns:
        EscapeCertificate: G, G_tilde, eps* and the smallest eigenvalue at eps*

    Raises:
        NoPositiveEpsilon: if no candidate certifies
    """
    H = cp.hessian.matrix
    n = model.dim
    G = lyapunov_form(model.A @ H, normalize=True).form
    G_tilde = lyapunov_form(H @ model.A, normalize=True).form
    Q = _p0_matrix(model, H)
    K = np.block([[np.zeros((n, n)), 2.0 * G_tilde.matrix], [-2.0 * G.matrix, np.zeros((n, n))]])
    I = np.eye(2 * n)
    for k in range(1, 21):
        eps = 2.0 ** -k
        T = I + 1j * eps * K
        form = (T.T @ Q @ T).real
        margin = float(np.linalg.eigvalsh(0.5 * (form + form.T)).min() - eps / c0)
        if margin >= 0.0:
            logger.debug(f"escape form certified at eps = {eps} (margin {margin:.3e})")
            return EscapeCertificate(G, G_tilde, eps, margin)
    raise NoPositiveEpsilon(f"no eps in 2^-1..2^-20 certifies the escape form at {cp.location.tolist()}")
