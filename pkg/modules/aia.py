"""
Attribute inference from inferred correlations
CI-AIA (filter constrained synthetic data by the inferred pair bins, average the
sensitive value of matching records) and the comparison baselines
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import confusion_matrix

from modules import copula, corrmat, models
from modules.attacks import bin_of
from modules.errors import NoMatchingLabel, NoSurvivingDatasets, ZeroVariance
from modules.utils import spawn_seed_sequences

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

AIA_METHODS = ('ci_aia', 'fredrikson', 'csmia', 'copula_shifted', 'marginal_prior')


@dataclass(frozen=True)
class AiaParams:
    """S' shadow datasets, G sub-intervals, initial resolution m_i and increment delta_i"""
    S_prime: int = 1000
    G: int = 100
    m_init: float = 2.0
    delta: float = 0.5
    fallback: bool = True

    def __post_init__(self):
        if min(self.S_prime, self.G, self.m_init, self.delta) <= 0:
            raise ValueError("AIA parameters must be positive")


@dataclass
class PartialRecord:
    """Known inputs x_2..x_{n-1} and label y of a training record; x_1 is sensitive"""
    known: np.ndarray
    label: int

    def __post_init__(self):
        self.known = np.asarray(self.known, dtype=float)
        if not np.all(np.isfinite(self.known)):
            raise ValueError("Known record values must be finite")

    @classmethod
    def from_row(cls, inputs, label):
        inputs = np.asarray(inputs, dtype=float)
        return cls(inputs[1:], int(label))

    def with_sensitive(self, value):
        return np.concatenate([[value], self.known])


@dataclass
class SyntheticPool:
    """D_synth: concatenated surviving shadow datasets"""
    inputs: np.ndarray
    labels: np.ndarray
    survivors: int
    generated: int
    fallback_used: bool = False
    resolutions: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class MatchResult:
    estimate: float
    matches: int
    widenings: int


def discretized_inputs(marginals, G):
    """G-bin versions of the input marginals (the label's marginal stays as given)"""
    return [copula.discretize_marginal(marg, G) for marg in marginals[:-1]] + [marginals[-1]]


def attribute_resolutions(marginals, G):
    """b_i = span of the discretized marginal / G, one per input"""
    spans = []
    for marg in discretized_inputs(marginals, G)[:-1]:
        lo, hi = copula.marginal_support(marg)
        spans.append((hi - lo) / G)
    return np.array(spans)


def _pool_member(V_shifted, marginals, m, seed_seq, inferred_bins, B, threshold_rule):
    rng = np.random.default_rng(seed_seq)
    C = corrmat.sample_s2(len(marginals), V_shifted, rng)
    data = copula.sample_copula(C, marginals, m, rng, threshold_rule)
    try:
        C_emp = copula.empirical_corr(data)
    except ZeroVariance:
        return data, False
    keep = all(bin_of(C_emp[i, j], B) == b for (i, j), b in inferred_bins.items())
    return data, keep


def build_synthetic_pool(V_shifted, marginals, inferred_bins, m, params, rng, B=3, threshold_rule='auto',
                         n_jobs=1):
    """
    Generate S' datasets under V' and keep those whose input-pair correlations
    fall in the inferred bins

    inferred_bins maps input pairs (i, j), i < j, to 1-based bins; an empty map keeps
    every dataset. With no survivor the pool falls back to every generated dataset
    when params.fallback is set, otherwise NoSurvivingDatasets is raised.
    """
    marginals = discretized_inputs(marginals, params.G)
    seqs = spawn_seed_sequences(rng, params.S_prime)
    members = Parallel(n_jobs=n_jobs)(
        delayed(_pool_member)(np.asarray(V_shifted, dtype=float), marginals, m, seq, inferred_bins, B,
                              threshold_rule)
        for seq in seqs
    )
    kept = [data for data, keep in members if keep]
    fallback_used = False
    if not kept:
        if not params.fallback:
            raise NoSurvivingDatasets(f"None of {params.S_prime} synthetic datasets match the inferred bins")
        logger.warning("No synthetic dataset matches the inferred bins, using all of them")
        kept = [data for data, _ in members]
        fallback_used = True
    logger.info(f"Synthetic pool: {len(kept)}/{params.S_prime} datasets kept")
    return SyntheticPool(
        inputs=np.vstack([data.inputs for data in kept]),
        labels=np.concatenate([data.labels for data in kept]),
        survivors=0 if fallback_used else len(kept),
        generated=params.S_prime,
        fallback_used=fallback_used,
        resolutions=attribute_resolutions(marginals, params.G),
    )


def match_sensitive_value(pool, record, params):
    """
    Mean sensitive value over pool records matching the partial record

    A record matches when its label equals y and |x_i - x'_i| <= m_i * b_i for every
    known attribute; m_i starts at params.m_init and grows by params.delta until
    something matches.
    """
    same_label = pool.labels == record.label
    if not np.any(same_label):
        raise NoMatchingLabel(f"Synthetic pool has no record with label {record.label}")
    candidates = pool.inputs[same_label]
    if record.known.size == 0:
        return MatchResult(float(candidates[:, 0].mean()), int(candidates.shape[0]), 0)

    b = pool.resolutions[1:]
    needed = np.max(np.abs(candidates[:, 1:] - record.known) / b, axis=1)
    widenings = max(0, int(np.ceil((needed.min() - params.m_init) / params.delta)))
    mask = needed <= params.m_init + widenings * params.delta
    if not np.any(mask):
        widenings += 1
        mask = needed <= params.m_init + widenings * params.delta
    values = candidates[mask, 0]
    return MatchResult(float(values.mean()), int(values.size), widenings)


def average_shifted_constraints(shifted_per_pair):
    """V' = mean of the shifted constraints used for every attacked pair"""
    return np.mean(np.array(list(shifted_per_pair.values()), dtype=float), axis=0)


def ci_aia(V, marginals, inferred_bins, shifted_per_pair, record, params, rng, m, B=3, n_jobs=1,
           pool=None):
    """
    Correlation-inference attribute inference for one partial record

    Args:
        V: known constraints rho(X_i, Y)
        inferred_bins: {(i, j): bin} from the model-based attack on each input pair
        shifted_per_pair: {(i, j): V'_ij} constraints the attack generated shadows with
        record: PartialRecord
        m: size of each synthetic dataset
        pool: an already built SyntheticPool (shared across records of one target)

    Returns:
        (estimate, pool, MatchResult)
    """
    if pool is None:
        if shifted_per_pair:
            V_shifted = average_shifted_constraints(shifted_per_pair)
        else:
            V_shifted = np.asarray(V, dtype=float)
        pool = build_synthetic_pool(V_shifted, marginals, inferred_bins, m, params, rng, B=B, n_jobs=n_jobs)
    match = match_sensitive_value(pool, record, params)
    return match.estimate, pool, match


def copula_shifted_baseline(V_shifted, marginals, record, params, rng, m, n_jobs=1, pool=None):
    """The ci_aia matching steps on unfiltered copula data under the shifted constraints"""
    if pool is None:
        pool = build_synthetic_pool(V_shifted, marginals, {}, m, params, rng, n_jobs=n_jobs)
    match = match_sensitive_value(pool, record, params)
    return match.estimate, pool, match


def marginal_prior(F1, rng):
    """One draw from the sensitive attribute's marginal"""
    return float(copula.sample_marginal(F1, 1, rng)[0])


def _representatives(F1, G, rng):
    """One value drawn uniformly inside each of the G sub-intervals"""
    marg = copula.discretize_marginal(F1, G)
    lo, hi = marg.edges[:-1], marg.edges[1:]
    return lo + rng.uniform(size=G) * (hi - lo), marg.masses


def estimate_confusion(model, data):
    """
    confusion[pred][true] = P(true | pred) on the model's training data

    A class never predicted gets a uniform row.
    """
    predicted = models.predict(model, data.inputs)
    counts = confusion_matrix(data.labels, predicted, labels=[0, 1]).T.astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 0.5)


def fredrikson_aia(target_model, record, F1, confusion, G, rng):
    """
    Sub-interval maximizing p(x_1^g) * P(y | model predicts y_hat_g), ties to the lowest g;
    returns the value drawn in the winning sub-interval
    """
    values, masses = _representatives(F1, G, rng)
    X = np.array([record.with_sensitive(v) for v in values])
    predicted = models.predict(target_model, X)
    confusion = np.asarray(confusion, dtype=float)
    scores = masses * confusion[predicted, record.label]
    return float(values[int(np.argmax(scores))])


def csmia_aia(target_model, record, F1, G, rng):
    """
    Confidence-score attack: one query per sub-interval

    One matching prediction -> its value; several -> the most confident match;
    none -> the least confident prediction. Confidence is the probability of the
    predicted class (a 0.5 score predicts class 1); ties go to the lowest g.
    """
    values, _ = _representatives(F1, G, rng)
    X = np.array([record.with_sensitive(v) for v in values])
    p1 = models.predict_proba(target_model, X)[:, 1]
    predicted = (p1 >= 0.5).astype(int)
    confidence = np.where(predicted == 1, p1, 1.0 - p1)
    matching = np.flatnonzero(predicted == record.label)
    if matching.size == 1:
        return float(values[matching[0]])
    if matching.size > 1:
        return float(values[matching[np.argmax(confidence[matching])]])
    return float(values[int(np.argmin(confidence))])


def tertile_bin(x, tertiles):
    """1, 2 or 3 by position relative to the marginal's tertiles"""
    return int(np.searchsorted(np.asarray(tertiles, dtype=float), x, side='right')) + 1
