"""
Gaussian copula synthesis of tabular datasets
One-way marginals (analytic standard normal or G-bin empirical), empirical correlation,
and the constraint-shifting heuristic for non-normal marginals
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtr, ndtri

from modules import corrmat
from modules.errors import DegenerateSupport, DomainError, InvalidMatrix, ZeroVariance

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

NORMAL = 'normal'
EMPIRICAL = 'empirical'
THRESHOLD_RULES = ('auto', 'zero', 'median', 'mean')

# Probabilities fed to an empirical inverse CDF stay this far from 0 and 1
_U_EPS = 1e-12


@dataclass(frozen=True)
class Marginal:
    """
    One-way distribution F_i

    kind 'normal' is the analytic standard normal (edges/masses empty).
    kind 'empirical' holds G+1 ascending edges and G masses summing to 1.
    """
    kind: str
    edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    masses: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.kind not in (NORMAL, EMPIRICAL):
            raise ValueError(f"Unknown marginal kind: {self.kind}")
        edges = np.asarray(self.edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if self.kind == EMPIRICAL:
            if edges.ndim != 1 or edges.size != masses.size + 1 or masses.size < 1:
                raise ValueError("Empirical marginal needs G+1 edges for G masses")
            if np.any(np.diff(edges) <= 0):
                raise ValueError("Marginal edges must be strictly increasing")
            if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
                raise ValueError("Marginal masses must be non-negative and sum to 1")
        object.__setattr__(self, 'edges', edges)
        object.__setattr__(self, 'masses', masses)

    @property
    def G(self):
        return int(self.masses.size)

    @property
    def is_normal(self):
        return self.kind == NORMAL

    def cumulative(self):
        return np.concatenate([[0.0], np.cumsum(self.masses)])


def standard_normal():
    return Marginal(NORMAL)


def empirical(edges, masses):
    masses = np.asarray(masses, dtype=float)
    return Marginal(EMPIRICAL, np.asarray(edges, dtype=float), masses / masses.sum())


def uniform_marginal(G, lo=0.0, hi=1.0):
    """G equal-mass bins on [lo, hi]"""
    return empirical(np.linspace(lo, hi, G + 1), np.full(G, 1.0 / G))


@dataclass
class Dataset:
    """
    m records of n-1 real inputs and a binary label

    matrix is the correlation matrix the records were generated from, when known.
    names optionally labels the n columns (inputs then label) for error messages.
    """
    inputs: np.ndarray
    labels: np.ndarray
    matrix: np.ndarray = None
    names: list = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.labels = np.asarray(self.labels).astype(int)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("Dataset inputs must be m x (n-1) with m labels")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("Dataset labels must be 0 or 1")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("Dataset inputs must be finite")

    @property
    def m(self):
        return int(self.inputs.shape[0])

    @property
    def n(self):
        return int(self.inputs.shape[1] + 1)

    def columns(self):
        """m x n array: inputs then the label as 0/1 reals"""
        return np.column_stack([self.inputs, self.labels.astype(float)])

    def subset(self, rows):
        return Dataset(self.inputs[rows], self.labels[rows], self.matrix, self.names)

    def select(self, input_columns):
        """Keep the given input columns (and the label)"""
        input_columns = list(input_columns)
        names = None
        if self.names is not None:
            names = [self.names[c] for c in input_columns] + [self.names[-1]]
        return Dataset(self.inputs[:, input_columns], self.labels, None, names)


def inverse_cdf(marg, u):
    """
    F^-1(u) for scalar or array u in (0, 1)

    Empirical marginals locate the bin by cumulative mass and interpolate linearly
    within it, so synthetic values have continuous support.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0.0) | ~(u_arr < 1.0)):
        raise DomainError("inverse_cdf needs probabilities in (0, 1)")
    if marg.is_normal:
        out = ndtri(u_arr)
    else:
        cum = marg.cumulative()
        g = np.clip(np.searchsorted(cum, u_arr, side='right') - 1, 0, marg.G - 1)
        mass = marg.masses[g]
        frac = np.where(mass > 0, (u_arr - cum[g]) / np.where(mass > 0, mass, 1.0), 0.5)
        lo = marg.edges[g]
        width = marg.edges[g + 1] - lo
        out = lo + np.clip(frac, 0.0, 1.0) * width
    if np.ndim(u) == 0:
        return float(out)
    return out


def cdf(marg, x):
    """F(x); piecewise linear between the edges for empirical marginals"""
    if marg.is_normal:
        return ndtr(x)
    return np.interp(x, marg.edges, marg.cumulative())


def sample_marginal(marg, size, rng):
    """Independent draws from F"""
    if marg.is_normal:
        return rng.standard_normal(size)
    u = np.clip(rng.uniform(size=size), _U_EPS, 1.0 - _U_EPS)
    return inverse_cdf(marg, u)


def fit_marginal(samples, G):
    """
    G equal-width sub-intervals spanning [min, max] of the samples,
    masses set to the empirical frequencies
    """
    samples = np.asarray(samples, dtype=float)
    if G < 2:
        raise ValueError("fit_marginal needs G >= 2")
    lo, hi = float(samples.min()), float(samples.max())
    if hi <= lo:
        raise DegenerateSupport(f"Samples span the single point {lo}")
    edges = np.linspace(lo, hi, G + 1)
    counts, _ = np.histogram(samples, bins=edges)
    return empirical(edges, counts / counts.sum())


def discretize_marginal(marg, G, half_width=4.0):
    """
    G-bin empirical version of a marginal

    The standard normal is cut on [-half_width, +half_width]; an empirical marginal
    is re-binned on its own support.
    """
    if marg.is_normal:
        edges = np.linspace(-half_width, half_width, G + 1)
        masses = np.diff(ndtr(edges))
        return empirical(edges, masses)
    if G == marg.G:
        return marg
    edges = np.linspace(marg.edges[0], marg.edges[-1], G + 1)
    return empirical(edges, np.clip(np.diff(cdf(marg, edges)), 0.0, None))


def marginal_support(marg):
    if marg.is_normal:
        return -np.inf, np.inf
    return float(marg.edges[0]), float(marg.edges[-1])


def marginal_tertiles(marg):
    """The 1/3 and 2/3 quantiles of F"""
    return inverse_cdf(marg, 1.0 / 3.0), inverse_cdf(marg, 2.0 / 3.0)


def marginal_mean(marg):
    if marg.is_normal:
        return 0.0
    centers = (marg.edges[:-1] + marg.edges[1:]) / 2.0
    return float(centers @ marg.masses)


def resolve_threshold(rule, output, marg):
    """Binarization threshold for the last copula column"""
    if not isinstance(rule, str):
        return float(rule)
    if rule not in THRESHOLD_RULES:
        raise ValueError(f"Unknown threshold rule: {rule}")
    if rule == 'auto':
        rule = 'zero' if marg.is_normal else 'median'
    if rule == 'zero':
        return 0.0
    if rule == 'median':
        return float(np.median(output))
    return float(np.mean(output))


def _copula_columns(C, marginals, m, rng):
    """m x n continuous draws: Z ~ N(0, I), X = Z A^T, x_i = F_i^-1(Phi(X_i))"""
    A = corrmat.cholesky(C)
    X = rng.standard_normal((m, C.shape[0])) @ A.T
    for i, marg in enumerate(marginals):
        if marg.is_normal:
            continue
        u = np.clip(ndtr(X[:, i]), _U_EPS, 1.0 - _U_EPS)
        X[:, i] = inverse_cdf(marg, u)
    return X


def sample_copula(C, marginals, m, rng, threshold_rule='auto'):
    """
    Synthesize m records from the Gaussian copula with correlation C

    Args:
        C: valid n x n correlation matrix, label last
        marginals: n Marginal objects (label's marginal last)
        m: number of records
        rng: numpy Generator
        threshold_rule: 'auto', 'zero', 'median', 'mean' or an explicit float;
            'auto' is zero for a normal output marginal and the median otherwise

    Returns:
        Dataset with label = 1 iff the n-th column exceeds the threshold
    """
    C = np.asarray(C, dtype=float)
    if not corrmat.is_valid(C):
        raise InvalidMatrix("Copula needs a valid correlation matrix")
    if len(marginals) != C.shape[0]:
        raise ValueError(f"Expected {C.shape[0]} marginals, got {len(marginals)}")
    X = _copula_columns(C, marginals, m, rng)
    threshold = resolve_threshold(threshold_rule, X[:, -1], marginals[-1])
    labels = (X[:, -1] > threshold).astype(int)
    return Dataset(X[:, :-1], labels, matrix=C)


def _column_name(data, j):
    names = getattr(data, 'names', None)
    if names is not None and j < len(names):
        return names[j]
    return j


def empirical_corr(data):
    """
    Pearson correlation matrix of a Dataset (label as 0/1 reals) or of an m x n array
    """
    columns = data.columns() if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if columns.shape[0] < 3:
        raise ValueError("empirical_corr needs at least 3 records")
    std = columns.std(axis=0)
    for j in np.flatnonzero(std == 0.0):
        raise ZeroVariance(_column_name(data, int(j)))
    C = np.corrcoef(columns, rowvar=False)
    C = (C + C.T) / 2.0
    np.fill_diagonal(C, 1.0)
    return np.clip(C, -1.0, 1.0)


def output_correlations(data):
    """rho(X_i, Y) for every input column"""
    C = empirical_corr(data)
    return C[:-1, -1]


@dataclass
class ShiftResult:
    """Outcome of shift_constraints: best V' found, its gap, and the best-gap history"""
    shifted: np.ndarray
    gap: float
    iterations: int
    converged: bool
    history: list


def _shadow_constraints(values, marginals, kind, N_D, seed_seq, binarize_label, threshold_rule):
    rng = np.random.default_rng(seed_seq)
    n = len(marginals)
    if kind == 'S1':
        C = corrmat.sample_s1(n, values[0], values[1], rng)
    else:
        C = corrmat.sample_s2(n, values, rng)
    if binarize_label:
        shadow = sample_copula(C, marginals, N_D, rng, threshold_rule)
        measured = output_correlations(shadow)
    else:
        measured = empirical_corr(_copula_columns(C, marginals, N_D, rng))[:-1, -1]
    return measured[:len(values)]


def shift_constraints(V, marginals, rng, S=100, N_D=1000, e=0.01, M=10, kind='S2',
                      binarize_label=True, threshold_rule='auto', n_jobs=1):
    """
    Shift the copula constraints so synthetic data reproduces V empirically

    Each iteration draws S shadow datasets of N_D records from matrices matching V',
    averages their empirical rho(X_i, Y) into V_bar and stops when
    max|V_bar - V| < e; otherwise V' <- clip(V' + (V - V_bar) / 2, -1, 1).

    Args:
        V: known constraints (S2: n-1 values, S1: the two values of X_1 and X_2)
        marginals: the n one-way marginals
        kind: 'S2' or 'S1' (which sampler draws the shadow matrices)
        binarize_label: measure against the 0/1 label (True) or the continuous
            n-th copula column (False)
        n_jobs: joblib workers for the S shadow draws

    Returns:
        ShiftResult with the best V' seen (never outside [-1, 1])
    """
    V = np.asarray(V, dtype=float)
    if kind not in ('S1', 'S2'):
        raise ValueError(f"Constraint shifting is defined for S1/S2, not {kind}")
    entropy = int(rng.integers(0, 2**63 - 1))
    current = V.copy()
    best, best_gap = V.copy(), np.inf
    history = []
    iterations = 0

    for iteration in range(M):
        iterations = iteration + 1
        seqs = [np.random.SeedSequence(entropy, spawn_key=(iteration, s)) for s in range(S)]
        measured = Parallel(n_jobs=n_jobs)(
            delayed(_shadow_constraints)(current, marginals, kind, N_D, seq, binarize_label, threshold_rule)
            for seq in seqs
        )
        V_bar = np.mean(measured, axis=0)
        gap = float(np.max(np.abs(V_bar - V)))
        if gap < best_gap:
            best, best_gap = current.copy(), gap
        history.append(best_gap)
        logger.info(f"Shift iteration {iterations}: gap {gap:.4f}")
        if gap < e:
            break
        current = np.clip(current + (V - V_bar) / 2.0, -1.0, 1.0)

    converged = best_gap < e
    if not converged:
        logger.warning(f"Constraint shifting stopped after {iterations} iterations with gap {best_gap:.4f}")
    return ShiftResult(best, best_gap, iterations, converged, history)
