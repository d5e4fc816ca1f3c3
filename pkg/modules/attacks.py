"""
Correlation inference attacks
Model-less attack (feasible interval + majority-bin rules), certain regions for B=3,
the shadow-model pipeline (features, meta-classifier) and constraint extraction
"""
from dataclasses import asdict, dataclass, field
import logging
import re

import numpy as np
from joblib import Parallel, delayed
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import KFold
from sklearn.multiclass import OneVsRestClassifier

from modules import copula, corrmat, models, storage
from modules.errors import (
    DegenerateLabels,
    OutOfRange,
    ShapeMismatch,
    SingleClass,
    UnsupportedB,
    ZeroVariance,
)
from modules.utils import spawn_rngs, spawn_seed_sequences

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FEATURE_KINDS = ('black_box', 'weights', 'canonical', 'combined')
_ROUNDED = re.compile(r'^rounded\((\d+)\)$')
# arccos(1/3): the angle at which cos crosses the B=3 bin edge
_EDGE_ANGLE = float(np.arccos(1.0 / 3.0))


# Bins

def bin_edges(B):
    """Interior edges (2b - B) / B, b = 1..B-1"""
    if B < 2:
        raise ValueError("Need at least two bins")
    return np.array([(2 * b - B) / B for b in range(1, B)])


def bin_of(v, B=3):
    """
    1-based bin of a correlation: bin b covers [(2(b-1)-B)/B, (2b-B)/B), bin B closed at 1
    """
    values = np.asarray(v, dtype=float)
    if np.any(np.abs(values) > 1.0) or not np.all(np.isfinite(values)):
        raise OutOfRange(f"Correlation outside [-1, 1]: {v}")
    bins = np.searchsorted(bin_edges(B), values, side='right') + 1
    if np.ndim(v) == 0:
        return int(bins)
    return bins


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.lo <= self.hi <= 1.0 + 1e-12:
            raise ValueError(f"Invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self):
        return self.hi - self.lo

    def to_dict(self):
        return {'lo': self.lo, 'hi': self.hi}


# Model-less attack

def closed_form_interval(rho1, rho2):
    """[cos(t1 + t2), cos(t1 - t2)] with t_i = arccos(rho_i)"""
    t1 = np.arccos(np.clip(rho1, -1.0, 1.0))
    t2 = np.arccos(np.clip(rho2, -1.0, 1.0))
    lo = float(np.clip(np.cos(t1 + t2), -1.0, 1.0))
    hi = float(np.clip(np.cos(t1 - t2), -1.0, 1.0))
    return Interval(min(lo, hi), hi)


def empirical_interval(scenario, K, rng, pair=(0, 1)):
    """Min and max of the target entry over K matrices drawn for the scenario"""
    i, j = pair
    draws = np.array([corrmat.sample_scenario(scenario, rng, pair=pair)[i, j] for _ in range(K)])
    return Interval(float(draws.min()), float(draws.max()))


def exact_interval(scenario):
    """
    Feasible interval of rho(X_1, X_2) given what the scenario knows

    S1 and S2 only pin rho(X_1, Y) and rho(X_2, Y) as far as the pair is concerned,
    so both reduce to the closed form; S3 uses the completed Cholesky bounds.
    """
    if scenario.kind == 'S3':
        lo, hi = corrmat.s3_bounds(scenario.values)
        return Interval(lo, hi)
    V = scenario.output_constraints()
    return closed_form_interval(V[0], V[1])


def pair_interval(scenario, pair=(0, 1)):
    """exact_interval for an arbitrary target pair (S1 only knows (X_1, X_2))"""
    pair = tuple(pair)
    if pair == (0, 1):
        return exact_interval(scenario)
    if scenario.kind == 'S1':
        raise ValueError("S1 knowledge is tied to the pair (X_1, X_2)")
    if scenario.kind == 'S2':
        i, j = pair
        return closed_form_interval(scenario.values[i], scenario.values[j])
    n = scenario.n
    order = np.concatenate([corrmat._pair_order(n, pair), [n - 1]])
    lo, hi = corrmat.s3_bounds(corrmat.reorder(scenario.values, order))
    return Interval(lo, hi)


def _coverage(lo, hi, B):
    edges = np.concatenate([[-1.0], bin_edges(B), [1.0]])
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None), 2.0 / B


def model_less_case(iv, B=3):
    """
    ('C1', bin) interval inside one bin, ('C2', bin) straddles two partially covered
    bins (larger coverage, ties to the lower bin), ('C3', None) a bin is fully covered
    """
    if iv.width <= 0.0:
        return 'C1', bin_of(float(np.clip(iv.lo, -1.0, 1.0)), B)
    coverage, width = _coverage(iv.lo, iv.hi, B)
    if np.any(coverage >= width - 1e-12):
        return 'C3', None
    touched = np.flatnonzero(coverage > 0.0)
    if touched.size == 1:
        return 'C1', int(touched[0]) + 1
    return 'C2', int(np.argmax(coverage)) + 1


def covered_bins(iv, B=3):
    """Bins the interval covers completely (1-based)"""
    coverage, width = _coverage(iv.lo, iv.hi, B)
    return np.flatnonzero(coverage >= width - 1e-12) + 1


def model_less_predict(iv, B, rng):
    """Majority bin over the interval; uniform among the fully covered bins in case C3"""
    case, guess = model_less_case(iv, B)
    if case == 'C3':
        return int(rng.choice(covered_bins(iv, B)))
    return guess


def model_less_predict_many(lo, hi, B, rng):
    """Vectorized model_less_predict over arrays of interval endpoints"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    edges = np.concatenate([[-1.0], bin_edges(B), [1.0]])
    coverage = np.clip(
        np.minimum(hi[..., None], edges[1:]) - np.maximum(lo[..., None], edges[:-1]), 0.0, None
    )
    covered = coverage >= 2.0 / B - 1e-12
    count = covered.sum(axis=-1)
    guess = np.argmax(coverage, axis=-1) + 1
    point = hi - lo <= 0.0
    if np.any(point):
        guess = np.where(point, bin_of(np.clip(lo, -1.0, 1.0), B), guess)
    # k-th fully covered bin, k uniform in [0, count)
    k = np.floor(rng.uniform(size=lo.shape) * count)
    random_guess = np.argmax(np.cumsum(covered, axis=-1) > k[..., None], axis=-1) + 1
    return np.where((count > 0) & ~point, random_guess, guess)


def certain_region(rho1, rho2, B=3):
    """
    The bin forced by two constraints, or None

    With t_i = arccos(rho_i) and a = arccos(1/3): negative when |t1 - t2| >= pi - a;
    positive when t1 + t2 <= a or >= 2 pi - a; low when |t1 - t2| > a and
    t1 + t2 lies outside (pi - a, pi + a).
    """
    if B != 3:
        raise UnsupportedB(f"Certain regions are only derived for B=3, got {B}")
    t1 = float(np.arccos(np.clip(rho1, -1.0, 1.0)))
    t2 = float(np.arccos(np.clip(rho2, -1.0, 1.0)))
    total, diff = t1 + t2, abs(t1 - t2)
    a = _EDGE_ANGLE
    if diff >= np.pi - a:
        return 1
    if total <= a or total >= 2.0 * np.pi - a:
        return 3
    if diff > a and (total <= np.pi - a or total >= np.pi + a):
        return 2
    return None


# Features

def parse_precision(mode):
    """'full', 'label_only', 'rounded(d)' or an int d -> ('full'|'label_only'|'rounded', d)"""
    if isinstance(mode, (int, np.integer)):
        return 'rounded', int(mode)
    if mode in ('full', 'label_only'):
        return mode, None
    match = _ROUNDED.match(str(mode))
    if match:
        return 'rounded', int(match.group(1))
    raise ValueError(f"Unknown precision mode: {mode}")


def confidence_scores(model, query, mode='full'):
    """
    Class-1 confidence per query record

    rounded(d) truncates to d decimals; label_only maps to the predicted label
    with a 0.5 score going to class 1.
    """
    X = query.inputs if isinstance(query, copula.Dataset) else np.asarray(query, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"Query width {X.shape[-1]} does not match model inputs {model.n_inputs}")
    scores = models.predict_proba(model, X)[:, 1]
    kind, digits = parse_precision(mode)
    if kind == 'rounded':
        scale = 10.0 ** digits
        # drop float noise before truncating
        return np.floor(np.round(scores * scale, 12)) / scale
    if kind == 'label_only':
        return (scores >= 0.5).astype(float)
    return scores


def extract_features(model, query, mode='full', feature_kind='black_box'):
    """Feature vector fed to the meta-classifier"""
    if feature_kind == 'black_box':
        return confidence_scores(model, query, mode)
    if feature_kind == 'weights':
        return models.flatten_weights(model)
    if feature_kind == 'canonical':
        return models.canonical_weights(model)
    if feature_kind == 'combined':
        return np.concatenate([models.canonical_weights(model), confidence_scores(model, query, mode)])
    raise ValueError(f"Unknown feature kind: {feature_kind}")


# Shadow pipeline

@dataclass
class AttackParams:
    """
    Knobs of the shadow-model attack

    m:           shadow dataset size (None: the target dataset size)
    shift:       'auto' shifts only when a marginal is not standard normal
    shadow_seed: train every shadow with this seed (seed-known attacker)
    """
    K: int = 1000
    Q: int = 100
    B: int = 3
    model_kind: str = 'lr'
    train_cfg: models.TrainConfig = field(default_factory=models.TrainConfig)
    m: int = None
    precision: str = 'full'
    feature_kind: str = 'black_box'
    meta_kind: str = 'auto'
    shift: object = 'auto'
    shift_S: int = 100
    shift_e: float = 0.01
    shift_M: int = 10
    threshold_rule: object = 'auto'
    shadow_seed: int = None
    n_jobs: int = 1

    def resolved_meta_kind(self):
        if self.meta_kind == 'auto':
            return 'mlp' if self.model_kind == 'mlp' else 'lr'
        return self.meta_kind


@dataclass
class ShadowEnsemble:
    """K shadow models with the empirical target-pair correlation of their datasets"""
    models: list
    correlations: np.ndarray
    pair: tuple = (0, 1)

    @property
    def K(self):
        return len(self.models)

    def labels(self, B):
        return bin_of(self.correlations, B)


@dataclass
class MetaDataset:
    features: np.ndarray
    labels: np.ndarray


@dataclass
class MetaClassifier:
    kind: str
    B: int
    estimator: object
    mean: np.ndarray
    scale: np.ndarray
    holdout_accuracy: float = float('nan')

    def standardize(self, features):
        return (np.atleast_2d(features) - self.mean) / self.scale


def _train_one_shadow(scenario, marginals, m, model_kind, train_cfg, seed_seq, shadow_seed, pair,
                      threshold_rule, attempts=5):
    rng = np.random.default_rng(seed_seq)
    i, j = pair
    for attempt in range(attempts):
        C = corrmat.sample_scenario(scenario, rng, pair=pair)
        data = copula.sample_copula(C, marginals, m, rng, threshold_rule)
        seed = shadow_seed if shadow_seed is not None else int(rng.integers(0, 2**31 - 1))
        try:
            correlation = copula.empirical_corr(data)[i, j]
            model = models.train_model(model_kind, data, train_cfg.with_seed(seed))
        except (SingleClass, ZeroVariance):
            continue
        return model, float(correlation)
    raise SingleClass(f"Shadow dataset degenerate after {attempts} attempts")


def build_shadow_ensemble(scenario, marginals, m, K, model_kind, train_cfg, rng, shadow_seed=None,
                          pair=(0, 1), threshold_rule='auto', n_jobs=1):
    """
    Train K shadow models on copula datasets drawn under the scenario

    Each shadow gets its own child seed sequence, so the ensemble does not depend
    on n_jobs; shadows are returned in index order.
    """
    seqs = spawn_seed_sequences(rng, K)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_train_one_shadow)(scenario, marginals, m, model_kind, train_cfg, seq, shadow_seed, pair,
                                   threshold_rule)
        for seq in seqs
    )
    logger.info(f"Trained {K} {model_kind} shadow models for pair {pair}")
    return ShadowEnsemble(
        models=[model for model, _ in results],
        correlations=np.array([corr for _, corr in results]),
        pair=tuple(pair),
    )


def build_query_dataset(scenario, marginals, Q, rng, pair=(0, 1), threshold_rule='auto'):
    """One copula draw of Q records from a fresh matrix of the same scenario"""
    C = corrmat.sample_scenario(scenario, rng, pair=pair)
    return copula.sample_copula(C, marginals, Q, rng, threshold_rule)


def meta_dataset(ensemble, query, B, mode='full', feature_kind='black_box'):
    """Shadow features against the shared query, labelled by the shadow datasets' bins"""
    features = np.array([extract_features(model, query, mode, feature_kind) for model in ensemble.models])
    return MetaDataset(features=features, labels=ensemble.labels(B))


def _fit_estimator(kind, X, y, B, seed):
    if kind == 'lr':
        estimator = OneVsRestClassifier(LogisticRegression(max_iter=1000))
        estimator.fit(X, y)
        return estimator, float('nan')
    cfg = models.META_MLP_CONFIG.with_seed(seed)
    return models.fit_mlp(X, y - 1, cfg, n_outputs=B, return_score=True)


def _predict_estimator(kind, estimator, X):
    if kind == 'lr':
        return estimator.predict(X).astype(int)
    return models.predict(estimator, X) + 1


def train_meta_classifier(meta, B, kind='lr', seed=0, holdout=0.1):
    """
    Fit the meta-classifier A: features -> bin

    LR meta: one-vs-rest logistic regression; its holdout accuracy comes from a
    fit on the other 90% before the final fit on everything. MLP meta: the 20/10
    MLP with B outputs and its own early-stopping holdout.
    """
    labels = np.asarray(meta.labels, dtype=int)
    if np.unique(labels).size < 2:
        raise DegenerateLabels(f"All {labels.size} shadow labels fall in bin {labels[0]}")
    mean = meta.features.mean(axis=0)
    scale = meta.features.std(axis=0)
    scale[scale == 0.0] = 1.0
    X = (meta.features - mean) / scale

    holdout_accuracy = float('nan')
    if kind == 'lr':
        order = np.random.default_rng(seed).permutation(labels.size)
        n_hold = int(round(holdout * labels.size))
        hold, train = order[:n_hold], order[n_hold:]
        if n_hold > 0 and np.unique(labels[train]).size >= 2:
            partial, _ = _fit_estimator('lr', X[train], labels[train], B, seed)
            holdout_accuracy = float(np.mean(_predict_estimator('lr', partial, X[hold]) == labels[hold]))
    estimator, score = _fit_estimator(kind, X, labels, B, seed)
    if kind == 'mlp':
        holdout_accuracy = score
    logger.info(f"Meta-classifier ({kind}) holdout accuracy: {holdout_accuracy:.3f}")
    return MetaClassifier(kind, B, estimator, mean, scale, holdout_accuracy)


def predict_bin(meta_clf, features):
    """Bin in 1..B predicted for one feature vector (or an array for a batch)"""
    X = meta_clf.standardize(features)
    predicted = _predict_estimator(meta_clf.kind, meta_clf.estimator, X)
    if np.ndim(features) == 1:
        return int(predicted[0])
    return predicted


def cross_validate_meta(features, labels, B, kind='lr', seed=0, folds=5):
    """
    k-fold predictions: every row is predicted by a meta-classifier that never saw it

    Folds whose training part holds a single bin predict that bin.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    predicted = np.zeros(labels.size, dtype=int)
    splitter = KFold(n_splits=min(folds, labels.size), shuffle=True, random_state=seed)
    for train, test in splitter.split(features):
        if np.unique(labels[train]).size < 2:
            predicted[test] = labels[train][0]
            continue
        clf = train_meta_classifier(MetaDataset(features[train], labels[train]), B, kind, seed)
        predicted[test] = predict_bin(clf, features[test])
    return predicted


def shift_scenario(scenario, marginals, m, params, rng):
    """
    Scenario with constraints shifted for non-normal marginals (S1/S2 only)

    Returns (scenario, ShiftResult or None).
    """
    needed = params.shift
    if needed == 'auto':
        needed = any(not marg.is_normal for marg in marginals)
    if not needed or scenario.kind == 'S3':
        return scenario, None
    result = copula.shift_constraints(
        scenario.values, marginals, rng, S=params.shift_S, N_D=m, e=params.shift_e, M=params.shift_M,
        kind=scenario.kind, binarize_label=True, threshold_rule=params.threshold_rule, n_jobs=params.n_jobs,
    )
    if scenario.kind == 'S1':
        return corrmat.Scenario.s1(scenario.n, *result.shifted), result
    return corrmat.Scenario.s2(result.shifted), result


@dataclass
class AttackResult:
    predicted_bin: int
    meta_holdout_accuracy: float
    label_counts: dict
    shifted: list = None
    shift_gap: float = None
    ensemble: ShadowEnsemble = None
    query: copula.Dataset = None
    scenario: corrmat.Scenario = None
    params: AttackParams = None
    interval: Interval = None
    true_bin: int = None

    def to_dict(self):
        """Per-attack report; true_bin only when the caller knows it"""
        report = {
            'scenario': None if self.scenario is None else self.scenario.to_dict(),
            'params': None if self.params is None else asdict(self.params),
            'predicted_bin': self.predicted_bin,
            'meta_holdout_acc': self.meta_holdout_accuracy,
            'interval': None if self.interval is None else [self.interval.lo, self.interval.hi],
            'label_counts': self.label_counts,
            'shifted': self.shifted,
            'shift_gap': self.shift_gap,
        }
        if self.true_bin is not None:
            report['true_bin'] = int(self.true_bin)
        return report


def write_attack_report(result, path, true_bin=None):
    """JSON report of one attack run"""
    if true_bin is not None:
        result.true_bin = int(true_bin)
    storage.write_json_report(result.to_dict(), path)
    return path


def attack_with_ensemble(target_model, ensemble, query, B, mode='full', feature_kind='black_box',
                         meta_kind='lr', seed=0):
    """Meta-train on an existing ensemble and classify the target; returns (bin, meta)"""
    meta = meta_dataset(ensemble, query, B, mode, feature_kind)
    clf = train_meta_classifier(meta, B, meta_kind, seed)
    target_features = extract_features(target_model, query, mode, feature_kind)
    return predict_bin(clf, target_features), clf


def run_model_based_attack(target_model, scenario, marginals, params, rng, m=None, pair=(0, 1)):
    """
    Full shadow-model attack against one target

    shift constraints (non-normal marginals) -> shared query dataset -> K shadow
    datasets and models -> meta dataset labelled by the shadows' empirical
    correlations -> meta-classifier -> bin of the target's feature vector.
    """
    m = m or params.m
    if m is None:
        raise ValueError("Shadow dataset size m is required")
    shift_rng, query_rng, shadow_rng, meta_rng = spawn_rngs(rng, 4)

    shifted_scenario, shift = shift_scenario(scenario, marginals, m, params, shift_rng)
    query = build_query_dataset(shifted_scenario, marginals, params.Q, query_rng, pair, params.threshold_rule)
    ensemble = build_shadow_ensemble(
        shifted_scenario, marginals, m, params.K, params.model_kind, params.train_cfg, shadow_rng,
        shadow_seed=params.shadow_seed, pair=pair, threshold_rule=params.threshold_rule, n_jobs=params.n_jobs,
    )
    labels = ensemble.labels(params.B)
    counts = {int(b): int(np.sum(labels == b)) for b in range(1, params.B + 1)}
    meta_seed = int(meta_rng.integers(0, 2**31 - 1))
    predicted, clf = attack_with_ensemble(
        target_model, ensemble, query, params.B, params.precision, params.feature_kind,
        params.resolved_meta_kind(), meta_seed,
    )
    return AttackResult(
        predicted_bin=predicted,
        meta_holdout_accuracy=clf.holdout_accuracy,
        label_counts=counts,
        shifted=None if shift is None else shift.shifted.tolist(),
        shift_gap=None if shift is None else shift.gap,
        ensemble=ensemble,
        query=query,
        scenario=scenario,
        params=params,
        interval=pair_interval(scenario, pair),
    )


# Constraint extraction

@dataclass
class ExtractionResult:
    estimates: np.ndarray
    degenerate: bool


def extract_constraints(model, marginals, Q_tilde, rng):
    """
    Estimate rho(X_i, Y) from Q_tilde probes with independent coordinates

    Each probe is labelled with the model's predicted class; a model answering one
    class everywhere gives zeros with the degenerate flag set.
    """
    if Q_tilde < 10:
        raise ValueError("Constraint extraction needs at least 10 probes")
    n_inputs = model.n_inputs
    probes = np.column_stack([copula.sample_marginal(marginals[i], Q_tilde, rng) for i in range(n_inputs)])
    labels = models.predict(model, probes)
    try:
        estimates = copula.empirical_corr(np.column_stack([probes, labels.astype(float)]))[:-1, -1]
    except ZeroVariance as exc:
        if exc.column != n_inputs:
            raise
        logger.warning(f"Model predicts a single class on all {Q_tilde} probes, returning zeros")
        return ExtractionResult(np.zeros(n_inputs), True)
    return ExtractionResult(estimates, False)
