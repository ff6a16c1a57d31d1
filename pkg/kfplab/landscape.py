import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from kfplab.errors import DegenerateCritical, NonConvergence, NotDoubleWell

logger = logging.getLogger(__name__)

# Constants
DEFAULT_BOX_HALF_WIDTH = 3.0
DEDUPE_RADIUS = 1e-6
NEWTON_MAX_STEPS = 100
LINE_SEARCH_HALVINGS = 20
MORSE_TOLERANCE = 1e-8


class Polynomial:
    """
    Real multivariate polynomial stored as a coefficient table.

    Row ``i`` of ``exps`` is the exponent tuple of the monomial whose
    coefficient is ``coefs[i]``. Derivatives are new coefficient tables, so
    gradients and Hessians are exact.
    """

    def __init__(self, exps, coefs):
        exps = np.asarray(exps, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=float)
        if exps.ndim != 2 or exps.shape[0] != coefs.shape[0]:
            raise ValueError("exponent table and coefficients do not line up")
        if np.any(exps < 0):
            raise ValueError("negative exponent in polynomial")
        self.exps = exps
        self.coefs = coefs

    @property
    def dim(self):
        return self.exps.shape[1]

    @property
    def degree(self):
        if self.exps.shape[0] == 0:
            return 0
        return int(self.exps.sum(axis=1).max())

    @classmethod
    def from_terms(cls, terms, dim):
        """Build from a mapping {exponent tuple: coefficient}."""
        if not terms:
            return cls(np.zeros((0, dim), dtype=np.int64), np.zeros(0))
        keys = sorted(terms)
        return cls([list(k) for k in keys], [terms[k] for k in keys])

    def terms(self):
        return {tuple(int(e) for e in row): float(c) for row, c in zip(self.exps, self.coefs)}

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.exps.shape[0] == 0:
            return np.zeros(x.shape[:-1])
        monomials = np.prod(x[..., None, :] ** self.exps, axis=-1)
        return monomials @ self.coefs

    def derivative(self, i):
        """Exact partial derivative in variable ``i``."""
        mask = self.exps[:, i] > 0
        exps = self.exps[mask].copy()
        coefs = self.coefs[mask] * exps[:, i]
        exps[:, i] -= 1
        return Polynomial(exps, coefs)

    def __add__(self, other):
        merged = self.terms()
        for k, c in other.terms().items():
            merged[k] = merged.get(k, 0.0) + c
        return Polynomial.from_terms(merged, self.dim)

    @cached_property
    def gradient_table(self):
        return [self.derivative(i) for i in range(self.dim)]

    @cached_property
    def hessian_table(self):
        return [[g.derivative(j) for j in range(self.dim)] for g in self.gradient_table]

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([g(x) for g in self.gradient_table], axis=-1)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        rows = [np.stack([h(x) for h in row], axis=-1) for row in self.hessian_table]
        return np.stack(rows, axis=-2)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric real matrix with its inertia (n_plus, n_zero, n_minus)."""

    matrix: np.ndarray
    inertia: tuple = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("quadratic form matrix is not symmetric")
        m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inertia", inertia_of(m))

    @classmethod
    def symmetrized(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(0.5 * (m + m.T))

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.matrix, x)


def inertia_of(m, tol=MORSE_TOLERANCE):
    ev = np.linalg.eigvalsh(m)
    cut = tol * max(np.abs(ev).max(), 1e-300)
    return (int(np.sum(ev > cut)), int(np.sum(np.abs(ev) <= cut)), int(np.sum(ev < -cut)))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """
    The pair (phi, A) of a Witten complex with constant structure matrix.

    Args:
        name (str): registry name or free identifier
        dim (int): dimension n of the configuration space
        phi (Polynomial): the weight
        A (numpy.ndarray): n x n structure matrix
        check_invertible (bool): validate invertibility of A; only negative
            controls switch this off
    """

    name: str
    dim: int
    phi: Polynomial
    A: np.ndarray
    check_invertible: bool = True

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (self.dim, self.dim):
            raise ValueError(f"A must be {self.dim}x{self.dim}, got {A.shape}")
        if self.phi.dim != self.dim:
            raise ValueError("polynomial dimension does not match model dimension")
        object.__setattr__(self, "A", A)
        norm = np.abs(A).max()
        b_eigs = np.linalg.eigvalsh(self.B)
        if b_eigs.min() < -1e-12 * norm:
            raise ValueError(f"symmetric part of A is not positive semidefinite (min eig {b_eigs.min():.3e})")
        if self.check_invertible:
            if abs(np.linalg.det(A)) <= 1e-12 * norm ** self.dim:
                raise ValueError("structure matrix A is not invertible")
            # ker B and ker C meet only in 0
            stacked = np.vstack([self.B, self.C])
            if np.linalg.svd(stacked, compute_uv=False).min() <= 1e-12 * norm:
                raise ValueError("ker B and ker C intersect nontrivially")

    @property
    def B(self):
        return 0.5 * (self.A + self.A.T)

    @property
    def C(self):
        return 0.5 * (self.A - self.A.T)

    def value(self, x):
        return self.phi(x)

    def gradient(self, x):
        return self.phi.gradient(x)

    def hessian(self, x):
        return self.phi.hessian(x)

    def transposed(self):
        """Same weight with structure matrix A transposed."""
        return replace(self, name=f"{self.name}^T", A=self.A.T.copy())

    def with_matrix(self, A, name=None, check_invertible=True):
        return replace(self, name=name or self.name, A=np.asarray(A, dtype=float),
                       check_invertible=check_invertible)

    def to_dict(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "phi": [{"exps": [int(e) for e in row], "coef": float(c)}
                    for row, c in zip(self.phi.exps, self.phi.coefs)],
            "A": self.A.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=4)

    @classmethod
    def from_dict(cls, data):
        try:
            dim = int(data["dim"])
            terms = data["phi"]
            phi = Polynomial([t["exps"] for t in terms], [t["coef"] for t in terms]) if terms \
                else Polynomial(np.zeros((0, dim), dtype=np.int64), [])
            return cls(name=str(data["name"]), dim=dim, phi=phi, A=np.array(data["A"], dtype=float))
        except KeyError as e:
            raise ValueError(f"model document is missing key {e}") from e

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    location: np.ndarray
    value: float
    hessian: QuadraticForm
    index: int


@dataclass(frozen=True, eq=False)
class WellStructure:
    """
    Double-well data. ``minima`` is ordered (U_-1, U_+1) by first coordinate;
    ``shallow`` is the label (-1 or +1) of the minimum with the larger value,
    i.e. the one that attains ``s_min``.
    """

    minima: tuple
    saddle: CriticalPoint
    actions: dict
    s_min: float
    shallow: int

    def minimum(self, label):
        return self.minima[0] if label == -1 else self.minima[1]


def kfp_matrix(gamma=1.0):
    """Kramers-Fokker-Planck structure matrix 1/2 [[0, 1], [-1, gamma]]."""
    return 0.5 * np.array([[0.0, 1.0], [-1.0, gamma]])


def _quartic_terms(tilt=0.0):
    # y^2/2 + x^4/4 - x^2/2 + tilt*x
    terms = {(0, 2): 0.5, (4, 0): 0.25, (2, 0): -0.5}
    if tilt:
        terms[(1, 0)] = tilt
    return terms


def _build_dw1(gamma):
    return ModelSpec("DW1", 2, Polynomial.from_terms(_quartic_terms(), 2), kfp_matrix(gamma))


def _build_dw2(gamma):
    return ModelSpec("DW2", 2, Polynomial.from_terms(_quartic_terms(0.1), 2), kfp_matrix(gamma))


def _build_single_well(gamma):
    return ModelSpec("single-well-test", 2, Polynomial.from_terms({(0, 2): 0.5, (2, 0): 0.5}, 2),
                     kfp_matrix(gamma))


def _build_witten_dw1(gamma):
    return ModelSpec("witten-DW1", 2, Polynomial.from_terms(_quartic_terms(), 2), np.eye(2))


def _build_nu_zero(gamma):
    # B = diag(0, 1), C = 0: no transport, singular A
    return ModelSpec("nu-zero-test", 2, Polynomial.from_terms(_quartic_terms(), 2),
                     np.diag([0.0, 1.0]), check_invertible=False)


MODEL_REGISTRY = {
    "DW1": _build_dw1,
    "DW2": _build_dw2,
    "single-well-test": _build_single_well,
    "witten-DW1": _build_witten_dw1,
    "nu-zero-test": _build_nu_zero,
}


def get_model(name, gamma=1.0):
    """
    Look up a built-in model.

    Args:
        name (str): registry name
        gamma (float): friction parameter of the KFP structure matrix

    Returns:
        ModelSpec: the model
    """
    if name not in MODEL_REGISTRY:
        raise KeyError(f"unknown model '{name}' (known: {', '.join(sorted(MODEL_REGISTRY))})")
    return MODEL_REGISTRY[name](gamma)


def eval_phi(model, x):
    """Exact value, gradient and Hessian of phi at a single point."""
    x = np.asarray(x, dtype=float)
    return float(model.value(x)), model.gradient(x), model.hessian(x)


def _box_bounds(box, dim):
    if box is None:
        box = DEFAULT_BOX_HALF_WIDTH
    if np.isscalar(box):
        return np.full(dim, -float(box)), np.full(dim, float(box))
    box = np.asarray(box, dtype=float).reshape(dim, 2)
    return box[:, 0], box[:, 1]


def _newton(model, x0):
    x = np.array(x0, dtype=float)
    g = model.gradient(x)
    gnorm = np.linalg.norm(g)
    for step in range(NEWTON_MAX_STEPS):
        if gnorm <= 1e-13 * (1.0 + np.linalg.norm(x)):
            return x
        H = model.hessian(x)
        try:
            dx = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            x_new = x - t * dx
            g_new = model.gradient(x_new)
            if np.linalg.norm(g_new) < gnorm:
                break
            t *= 0.5
        else:
            if gnorm <= 1e-10 * (1.0 + np.linalg.norm(x)):
                return x
            raise NonConvergence(f"Newton from {np.asarray(x0).tolist()}: line search failed after "
                                 f"{LINE_SEARCH_HALVINGS} halvings at |grad| = {gnorm:.3e}")
        x, g = x_new, g_new
        gnorm = np.linalg.norm(g)
    if gnorm <= 1e-10 * (1.0 + np.linalg.norm(x)):
        return x
    raise NonConvergence(f"Newton from {np.asarray(x0).tolist()} stalled at |grad| = {gnorm:.3e}")


def _make_critical_point(model, x):
    value, _, hess = eval_phi(model, x)
    ev = np.linalg.eigvalsh(hess)
    if np.abs(ev).min() < MORSE_TOLERANCE * np.abs(ev).max():
        raise DegenerateCritical(f"critical point {x.tolist()} has singular Hessian (eigenvalues {ev.tolist()})")
    form = QuadraticForm.symmetrized(hess)
    return CriticalPoint(location=x, value=value, hessian=form, index=form.inertia[2])


def find_critical_points(model, box=None, seeds_per_dim=9):
    """
    Find all critical points of phi inside a box by seeded Newton iteration.

    Args:
        model (ModelSpec): the model
        box: half-width (scalar) or per-dimension (lo, hi) pairs; default [-3, 3]^n
        seeds_per_dim (int): seeds per axis of the uniform grid (>= 8)

    Returns:
        list: CriticalPoint objects sorted by value then location
    """
    if seeds_per_dim < 8:
        raise ValueError("seeds_per_dim must be at least 8")
    lo, hi = _box_bounds(box, model.dim)
    axes = [np.linspace(a, b, seeds_per_dim) for a, b in zip(lo, hi)]
    seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dim)

    found = []
    dropped = 0
    for seed in seeds:
        try:
            x = _newton(model, seed)
        except NonConvergence as e:
            logger.debug(str(e))
            dropped += 1
            continue
        if np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9):
            found.append(x)
    if dropped:
        logger.info(f"{dropped} Newton seeds dropped without convergence")

    # Sort before merging so the result does not depend on seed order
    found.sort(key=lambda x: (round(float(model.value(x)), 12), tuple(np.round(x, 9))))
    unique = []
    for x in found:
        if all(np.linalg.norm(x - u) > DEDUPE_RADIUS for u in unique):
            unique.append(x)

    points = [_make_critical_point(model, x) for x in unique]
    points.sort(key=lambda p: (round(p.value, 12), tuple(np.round(p.location, 9))))
    logger.info(f"{model.name}: {len(points)} critical points, indices {[p.index for p in points]}")
    return points


def classify_landscape(points):
    """
    Check for the double-well structure and compute the actions.

    Returns:
        WellStructure: minima, saddle, S_j and S_min
    """
    counts = {}
    for p in points:
        counts[p.index] = counts.get(p.index, 0) + 1
    if len(points) != 3 or counts.get(0, 0) != 2 or counts.get(1, 0) != 1:
        listing = ", ".join(f"index {k}: {v}" for k, v in sorted(counts.items())) or "no critical points"
        raise NotDoubleWell(f"expected two minima and one index-one saddle, found {listing}", counts)

    minima = sorted((p for p in points if p.index == 0), key=lambda p: tuple(p.location))
    saddle = next(p for p in points if p.index == 1)
    actions = {-1: saddle.value - minima[0].value, 1: saddle.value - minima[1].value}
    if min(actions.values()) <= 0:
        raise NotDoubleWell("saddle value does not exceed both minima", counts)
    shallow = -1 if minima[0].value > minima[1].value else 1
    return WellStructure(minima=tuple(minima), saddle=saddle, actions=actions,
                         s_min=min(actions.values()), shallow=shallow)


def basin_label(model, wells, x, margin=0.0, steps=600, rate=0.05):
    """
    Label points by the sublevel component {phi < phi(U_0) - margin} they lie in.

    Points are pushed down a normalized gradient flow and assigned to the
    nearest minimum; points at or above the level get 0.

    Returns:
        numpy.ndarray: labels in {-1, 0, +1}
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    level = wells.saddle.value - margin
    below = model.value(x) < level
    y = x[below].copy()
    for _ in range(steps):
        g = model.gradient(y)
        scale = np.maximum(1.0, np.linalg.norm(g, axis=-1))[:, None]
        y -= rate * g / scale
    d_minus = np.linalg.norm(y - wells.minima[0].location, axis=-1)
    d_plus = np.linalg.norm(y - wells.minima[1].location, axis=-1)
    labels = np.zeros(x.shape[0], dtype=int)
    labels[below] = np.where(d_minus < d_plus, -1, 1)
    return labels
