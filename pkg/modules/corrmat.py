"""
Correlation matrices: validity, Cholesky/spherical machinery, constrained sampling
Matrices are plain numpy arrays; permutations are index arrays (new[i, j] = old[s[i], s[j]])

Variable order in every public result is X_1, ..., X_{n-1}, Y (Y last).
Indices in this module are 0-based.
"""
from dataclasses import dataclass
import logging

import numpy as np

from modules.errors import IndexOrder, InfeasibleConstraints, NotPositiveSemiDefinite

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-8
# Largest residual allowed against a zero pivot
RESIDUAL_TOLERANCE = 1e-6
DEGENERATE_WIDTH = 1e-10
SCENARIO_KINDS = ('S1', 'S2', 'S3')


@dataclass(frozen=True)
class Scenario:
    """
    Attacker knowledge about the target dataset's correlations

    kind:   'S1' (rho(X_1,Y), rho(X_2,Y)), 'S2' (all rho(X_i,Y)) or 'S3' (everything but rho(X_1,X_2))
    n:      number of variables, label included
    values: S1 -> length-2 array, S2 -> length n-1 array, S3 -> n x n matrix (entries (0,1)/(1,0) ignored)
    """
    kind: str
    n: int
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"Unknown scenario kind: {self.kind}")
        values = np.array(self.values, dtype=float)
        expected = {'S1': (2,), 'S2': (self.n - 1,), 'S3': (self.n, self.n)}[self.kind]
        if values.shape != expected:
            raise ValueError(f"{self.kind} expects values of shape {expected}, got {values.shape}")
        mask = np.ones(values.shape, dtype=bool)
        if self.kind == 'S3':
            mask[0, 1] = mask[1, 0] = False
        if np.any(np.abs(values[mask]) > 1.0) or not np.all(np.isfinite(values[mask])):
            raise InfeasibleConstraints(f"{self.kind} constraint outside [-1, 1]")
        object.__setattr__(self, 'values', values)

    @classmethod
    def s1(cls, n, rho1, rho2):
        return cls('S1', n, np.array([rho1, rho2]))

    @classmethod
    def s2(cls, vector):
        vector = np.asarray(vector, dtype=float)
        return cls('S2', vector.size + 1, vector)

    @classmethod
    def s3(cls, known):
        known = np.array(known, dtype=float)
        return cls('S3', known.shape[0], known)

    @classmethod
    def from_matrix(cls, kind, C):
        """The knowledge an attacker of the given kind has about matrix C"""
        C = np.asarray(C, dtype=float)
        n = C.shape[0]
        if kind == 'S1':
            return cls.s1(n, C[0, n - 1], C[1, n - 1])
        if kind == 'S2':
            return cls.s2(C[:n - 1, n - 1])
        known = C.copy()
        known[0, 1] = known[1, 0] = 0.0
        return cls.s3(known)

    def output_constraints(self):
        """rho(X_i, Y) values known to the attacker (S3 reads them off its matrix)"""
        if self.kind == 'S3':
            return self.values[:self.n - 1, self.n - 1].copy()
        return self.values.copy()

    def to_dict(self):
        return {'kind': self.kind, 'n': self.n, 'values': self.values.tolist()}


def identity(n):
    return np.eye(n)


def is_valid(C, tol=1e-8):
    """
    True iff C is a correlation matrix

    Entries in [-1, 1], unit diagonal, symmetric (all with slack tol) and
    minimum eigenvalue >= -tol.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        return False
    if not np.all(np.isfinite(C)):
        return False
    if np.any(np.abs(C) > 1.0 + tol):
        return False
    if np.any(np.abs(np.diag(C) - 1.0) > tol):
        return False
    if np.any(np.abs(C - C.T) > tol):
        return False
    eigenvalues = np.linalg.eigvalsh((C + C.T) / 2.0)
    return bool(eigenvalues.min() >= -tol)


def cholesky(C):
    """
    Lower-triangular B with B @ B.T == C

    Pivots in [-1e-8, 0] are clamped to 0 and the entries that would divide by
    them are set to 0, so rank-deficient matrices (constraints at +-1) go through.
    A nonzero residual against a zero pivot means the matrix is not PSD.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    B = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = C[i, j] - B[i, :j] @ B[j, :j]
            if i == j:
                if s < -PIVOT_TOLERANCE:
                    raise NotPositiveSemiDefinite(f"Pivot {i} is {s:.3e}")
                B[i, i] = np.sqrt(max(s, 0.0))
            elif B[j, j] > 0.0:
                B[i, j] = s / B[j, j]
            elif abs(s) > RESIDUAL_TOLERANCE:
                raise NotPositiveSemiDefinite(f"Entry ({i}, {j}) leaves residual {s:.3e} against a zero pivot")
    return B


def coefficient_bounds(B_partial, i, j):
    """
    Bounds m +- l of c[i, j] given rows 0..i-1 of B and columns 0..j-1 of row i

    Any c[i, j] in [m - l, m + l] admits a PSD completion of the partial matrix.
    Row i's remaining amplitude is sqrt(1 - |B[i, :j]|^2), so l = amplitude * B[j, j].
    """
    if i <= j:
        raise IndexOrder(f"Bounds need i > j, got i={i}, j={j}")
    m = float(B_partial[i, :j] @ B_partial[j, :j])
    amplitude = np.sqrt(max(0.0, 1.0 - float(B_partial[i, :j] @ B_partial[i, :j])))
    l = float(amplitude * B_partial[j, j])
    return m, max(l, 0.0)


def _sample_entry(B, i, j, rng):
    """Draw c[i, j] uniformly within its bounds and complete B[i, j]"""
    m, l = coefficient_bounds(B, i, j)
    amplitude = np.sqrt(max(0.0, 1.0 - float(B[i, :j] @ B[i, :j])))
    if l < DEGENERATE_WIDTH:
        # deterministic limit: cos(theta) undefined, keep the amplitude for later columns
        return m, 0.0
    c = rng.uniform(m - l, m + l)
    aux = np.clip((c - m) / l, -1.0, 1.0)
    return c, amplitude * aux


def sample_corr_matrix(n, rng, first_column=None, return_factor=False):
    """
    Sample a valid correlation matrix entry by entry (spherical parametrization)

    Args:
        n: number of variables (>= 2)
        rng: numpy Generator
        first_column: optional length n-1 values for c[1:, 0]; drawn U(-1, 1) otherwise
        return_factor: also return the Cholesky factor built along the way

    Each later c[i, j] (i > j >= 1) is uniform on its coefficient bounds given the
    entries drawn before it, top to bottom and left to right.
    """
    if n < 2:
        raise ValueError("A correlation matrix needs n >= 2")
    C = np.zeros((n, n))
    B = np.zeros((n, n))
    B[0, 0] = 1.0

    if first_column is None:
        first = rng.uniform(-1.0, 1.0, size=n - 1)
    else:
        first = np.asarray(first_column, dtype=float)
    C[1:, 0] = first
    B[1:, 0] = first

    for i in range(1, n):
        for j in range(1, i):
            c, b = _sample_entry(B, i, j, rng)
            C[i, j] = c
            B[i, j] = b
        B[i, i] = np.sqrt(max(0.0, 1.0 - float(B[i, :i] @ B[i, :i])))

    C = C + C.T + np.eye(n)
    if return_factor:
        return C, B
    return C


def reorder(C, order):
    """new[i, j] = C[order[i], order[j]]"""
    order = np.asarray(order, dtype=int)
    return np.asarray(C)[np.ix_(order, order)]


def invert_permutation(order):
    order = np.asarray(order, dtype=int)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return inverse


def _label_first(rest_order, n):
    """Order Y, X_rest... -> positions in the X_1..X_{n-1}, Y layout"""
    return np.concatenate([[n - 1], np.asarray(rest_order, dtype=int)])


def sample_s1(n, rho1, rho2, rng):
    """
    Valid matrix with c[0, n-1] = rho1 and c[1, n-1] = rho2

    Sampled in the order Y, X_1, X_2, X_3..., so rho(X_1, X_2) is drawn first and
    is uniform within its bounds; the remaining inputs are shuffled.
    """
    if n < 3:
        raise ValueError("S1 needs n >= 3")
    first = np.empty(n - 1)
    first[0], first[1] = rho1, rho2
    first[2:] = rng.uniform(-1.0, 1.0, size=n - 3)
    C = sample_corr_matrix(n, rng, first_column=first)
    # generated order is Y, X_1, X_2, X_3, ...; output X_1, X_2, shuffled rest, Y
    order = np.concatenate([[1, 2], 3 + rng.permutation(n - 3), [0]])
    return reorder(C, order)


def sample_s2(n, V, rng):
    """
    Valid matrix with c[i, n-1] = V[i] for every input i

    The constraints of X_3.. are shuffled before sampling so no input is
    systematically generated last; the shuffle is undone on the way out.
    """
    V = np.asarray(V, dtype=float)
    if V.size != n - 1:
        raise ValueError(f"S2 needs {n - 1} constraints, got {V.size}")
    sigma = np.concatenate([[0, 1], 2 + rng.permutation(n - 3)]) if n >= 3 else np.arange(n - 1)
    C = sample_corr_matrix(n, rng, first_column=V[sigma])
    # Y, X_sigma... -> X_sigma..., Y
    C = reorder(C, np.concatenate([np.arange(1, n), [0]]))
    # X_sigma..., Y -> X_1..., Y
    return reorder(C, np.concatenate([invert_permutation(sigma), [n - 1]]))


def _s3_last_row(C_known):
    """
    Reverse-engineer the Cholesky factor of the reordered known matrix

    Returns (C', B, m, l): the reordered matrix (Y, X_{n-1}, ..., X_1), its factor
    with the last row filled up to column n-3, and the bounds of c'[n-1, n-2].
    """
    C_known = np.array(C_known, dtype=float)
    n = C_known.shape[0]
    sigma = np.arange(n)[::-1]
    Cp = reorder(C_known, sigma)
    try:
        Bp = cholesky(Cp[:n - 1, :n - 1])
    except NotPositiveSemiDefinite as exc:
        raise InfeasibleConstraints(f"Known block is not PSD: {exc}") from exc

    B = np.zeros((n, n))
    B[:n - 1, :n - 1] = Bp
    B[n - 1, 0] = Cp[n - 1, 0]
    for i in range(1, n - 2):
        s = Cp[n - 1, i] - B[i, :i] @ B[n - 1, :i]
        if B[i, i] > 0.0:
            B[n - 1, i] = s / B[i, i]
        elif abs(s) > RESIDUAL_TOLERANCE:
            raise InfeasibleConstraints(f"Known correlations are inconsistent at column {i} (residual {s:.3e})")
    remaining = 1.0 - float(B[n - 1, :n - 2] @ B[n - 1, :n - 2])
    if remaining < -PIVOT_TOLERANCE:
        raise InfeasibleConstraints(f"Known correlations leave a negative pivot ({remaining:.3e})")
    B[n - 1, n - 2] = np.sqrt(max(remaining, 0.0))

    m = float(B[n - 2, :n - 2] @ B[n - 1, :n - 2])
    l = float(B[n - 2, n - 2] * B[n - 1, n - 2])
    return Cp, B, m, l


def s3_bounds(C_known):
    """Exact feasible interval (lo, hi) of rho(X_1, X_2) given every other entry"""
    _, _, m, l = _s3_last_row(C_known)
    return max(-1.0, m - l), min(1.0, m + l)


def sample_s3(n, C_known, rng):
    """
    Valid matrix equal to C_known everywhere but (0, 1)/(1, 0)

    The unknown entry is uniform on the bounds obtained by moving the target pair
    to the last position and completing the Cholesky factor of the known block.
    """
    C_known = np.asarray(C_known, dtype=float)
    if C_known.shape != (n, n):
        raise ValueError(f"S3 knowledge must be {n}x{n}")
    Cp, _, m, l = _s3_last_row(C_known)
    c = m if l < DEGENERATE_WIDTH else rng.uniform(m - l, m + l)
    c = float(np.clip(c, -1.0, 1.0))
    Cp = Cp.copy()
    Cp[n - 1, n - 2] = Cp[n - 2, n - 1] = c
    # the reversal is its own inverse
    return reorder(Cp, np.arange(n)[::-1])


def _pair_order(n, pair):
    """Input order that puts `pair` in the first two positions"""
    i, j = pair
    rest = [k for k in range(n - 1) if k not in (i, j)]
    return np.array([i, j] + rest)


def sample_scenario(scenario, rng, pair=(0, 1)):
    """
    Draw one matrix satisfying the scenario, with `pair` as the target pair

    For pair != (0, 1) the inputs are relabelled so the pair is generated first,
    then relabelled back, so the result is in the original variable order.
    """
    n = scenario.n
    pair = tuple(pair)
    if pair == (0, 1):
        order = None
        values = scenario.values
    else:
        order = _pair_order(n, pair)
        if scenario.kind == 'S1':
            raise ValueError("S1 knowledge is tied to the pair (X_1, X_2)")
        if scenario.kind == 'S2':
            values = scenario.values[order]
        else:
            values = reorder(scenario.values, np.concatenate([order, [n - 1]]))

    if scenario.kind == 'S1':
        C = sample_s1(n, values[0], values[1], rng)
    elif scenario.kind == 'S2':
        C = sample_s2(n, values, rng)
    else:
        C = sample_s3(n, values, rng)

    if order is None:
        return C
    return reorder(C, np.concatenate([invert_permutation(order), [n - 1]]))
