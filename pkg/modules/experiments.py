"""
Experiment protocols
Grid over constraint pairs, increasing n, mitigations (query count, score precision,
external models), real-data collections, marginal granularity, constraint extraction
and attribute inference; every random draw comes from a (experiment, index, stage) seed
"""
from dataclasses import replace
import json
import logging
import time

import numpy as np
from joblib import Parallel, delayed

from modules import aia, attacks, copula, corrmat, datasets, models, storage
from modules.config import ExperimentConfig
from modules.errors import ConfigError, DegenerateLabels
from modules.reporting import RunReport, aggregate, mean_with_ci
from modules.utils import accuracy_ci, child_rng, child_seed

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Fifa19 targets are trained on a uniform sample of this many records
FIFA_TARGET_RECORDS = 2000
TEST_RECORDS = 500


def normal_marginals(n):
    return [copula.standard_normal() for _ in range(n)]


def train_config(cfg, seed, batch_size=None):
    return models.TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=batch_size if batch_size is not None else cfg.batch_size,
        seed=seed,
    )


def attack_params(cfg, n=None, B=None, **overrides):
    params = attacks.AttackParams(
        K=cfg.shadow_count(n),
        Q=cfg.Q,
        B=B or cfg.B,
        model_kind=cfg.model_kind,
        train_cfg=train_config(cfg, 0),
        m=cfg.m,
        feature_kind=cfg.feature_kind,
        shift_S=cfg.shift_S,
        shift_M=cfg.shift_M,
        shift_e=cfg.shift_e,
    )
    return replace(params, **overrides)


def _parallel(cfg, tasks):
    """Run delayed tasks over cfg.workers; results come back in submission order"""
    return Parallel(n_jobs=cfg.workers)(tasks)


def _flatten(chunks):
    return [row for chunk in chunks for row in chunk]


def synthetic_target(cfg, n, experiment, index, first_column=None):
    """
    Target correlation matrix, training data and model for one synthetic target

    The target pair rho(X_1, X_2) is the first entry generated, so it is uniform on [-1, 1].
    """
    rng = child_rng(cfg.seed, experiment, n, index, 'target')
    C = corrmat.sample_corr_matrix(n, rng, first_column=first_column)
    marginals = normal_marginals(n)
    data = copula.sample_copula(C, marginals, cfg.m, rng)
    test = copula.sample_copula(C, marginals, TEST_RECORDS, rng)
    seed = child_seed(cfg.seed, experiment, n, index, 'train')
    model = models.train_model(cfg.model_kind, data, train_config(cfg, seed))
    return C, data, test, model


def _scenario_for(kind, C):
    return corrmat.Scenario.from_matrix(kind, C)


def _truth(data, B, pair=(0, 1)):
    i, j = pair
    value = float(copula.empirical_corr(data)[i, j])
    return value, attacks.bin_of(value, B)


# Grid

def _grid_cell_bounds(resolution):
    return np.linspace(-1.0, 1.0, resolution + 1)


def model_less_grid(cfg):
    """Model-less accuracy for every cell of the resolution x resolution grid (vectorized)"""
    R, T = cfg.resolution, cfg.targets_per_cell
    rng = child_rng(cfg.seed, 'grid', 'model_less')
    edges = _grid_cell_bounds(R)
    rho1 = edges[:-1, None, None] + rng.uniform(size=(R, R, T)) * (2.0 / R)
    rho2 = edges[None, :-1, None] + rng.uniform(size=(R, R, T)) * (2.0 / R)
    t1, t2 = np.arccos(np.clip(rho1, -1, 1)), np.arccos(np.clip(rho2, -1, 1))
    lo, hi = np.cos(t1 + t2), np.cos(t1 - t2)
    truth_corr = np.clip(lo + rng.uniform(size=lo.shape) * (hi - lo), -1.0, 1.0)
    truth = attacks.bin_of(truth_corr, cfg.B)
    guess = attacks.model_less_predict_many(lo, hi, cfg.B, rng)
    return (guess == truth).mean(axis=-1)


def _grid_target(cfg, cell, index, rho_bounds, query):
    (r1_lo, r1_hi), (r2_lo, r2_hi) = rho_bounds
    rng = child_rng(cfg.seed, 'grid', cell, index, 'target')
    rho1, rho2 = rng.uniform(r1_lo, r1_hi), rng.uniform(r2_lo, r2_hi)
    C = corrmat.sample_s1(3, rho1, rho2, rng)
    data = copula.sample_copula(C, normal_marginals(3), cfg.m, rng)
    model = models.train_model(cfg.model_kind, data, train_config(cfg, child_seed(cfg.seed, 'grid', cell, index, 'train')))
    true_corr, true_bin = _truth(data, cfg.B)
    guess = attacks.model_less_predict(attacks.closed_form_interval(rho1, rho2), cfg.B, rng)
    features = attacks.extract_features(model, query, 'full', cfg.feature_kind)
    row = {
        'cell': cell, 'target': index, 'rho1': rho1, 'rho2': rho2,
        'true_corr': true_corr, 'true_bin': true_bin, 'model_less': guess,
    }
    return row, features


def _selected_cells(cfg, edges):
    """Random subset of cells whose constraints all satisfy |rho| >= cell_min_abs"""
    R = cfg.resolution
    # a cell straddling zero has min |rho| = 0
    strong = [
        k for k in range(R)
        if cfg.cell_min_abs == 0.0
        or (edges[k] * edges[k + 1] >= 0 and min(abs(edges[k]), abs(edges[k + 1])) >= cfg.cell_min_abs)
    ]
    eligible = [(i, j) for i in strong for j in strong]
    if not eligible:
        raise ConfigError("No grid cell satisfies cell_min_abs")
    rng = child_rng(cfg.seed, 'grid', 'cells')
    count = min(cfg.model_based_cells, len(eligible))
    picked = rng.choice(len(eligible), count, replace=False)
    return [eligible[p] for p in sorted(picked)]


def run_grid(cfg):
    """
    Constraint grid for n=3

    Model-less accuracy on every cell (targets_per_cell targets, target correlation
    uniform on the cell's interval); model-based accuracy on model_based_cells random
    cells via per-cell k-fold cross-validation of a meta-classifier over T' targets.
    """
    R = cfg.resolution
    edges = _grid_cell_bounds(R)
    accuracy = model_less_grid(cfg)
    logger.info(f"Model-less grid: mean accuracy {accuracy.mean():.3f} over {R}x{R} cells")

    cell_rows = {}
    for i in range(R):
        for j in range(R):
            cell_rows[(i, j)] = {
                'cell_i': i, 'cell_j': j,
                'rho1_lo': edges[i], 'rho1_hi': edges[i + 1],
                'rho2_lo': edges[j], 'rho2_hi': edges[j + 1],
                'model_less_accuracy': float(accuracy[i, j]),
                'model_based_accuracy': np.nan,
            }

    target_rows = []
    T = cfg.target_count()
    for i, j in _selected_cells(cfg, edges) if cfg.model_based_cells > 0 else []:
        cell = i * R + j
        bounds = ((edges[i], edges[i + 1]), (edges[j], edges[j + 1]))
        query_rng = child_rng(cfg.seed, 'grid', cell, 'query')
        center = (edges[i] + edges[i + 1]) / 2.0, (edges[j] + edges[j + 1]) / 2.0
        query = copula.sample_copula(corrmat.sample_s1(3, *center, query_rng), normal_marginals(3), cfg.Q, query_rng)
        results = _parallel(cfg, (delayed(_grid_target)(cfg, cell, t, bounds, query) for t in range(T)))
        rows = [row for row, _ in results]
        features = np.array([f for _, f in results])
        labels = np.array([row['true_bin'] for row in rows])
        meta_kind = 'mlp' if cfg.model_kind == 'mlp' else 'lr'
        predicted = attacks.cross_validate_meta(
            features, labels, cfg.B, meta_kind, child_seed(cfg.seed, 'grid', cell, 'meta'), cfg.folds
        )
        for row, guess in zip(rows, predicted):
            row['model_based'] = int(guess)
            row['correct_model_based'] = bool(guess == row['true_bin'])
            row['correct_model_less'] = bool(row['model_less'] == row['true_bin'])
        cell_rows[(i, j)]['model_based_accuracy'] = float(np.mean([r['correct_model_based'] for r in rows]))
        target_rows.extend(rows)
        logger.info(f"Cell ({i}, {j}): model-based accuracy {cell_rows[(i, j)]['model_based_accuracy']:.3f}")

    total = R * R * cfg.targets_per_cell
    grid_accuracy = float(accuracy.mean())
    aggregates = [{
        'method': 'model_less_grid',
        'accuracy': grid_accuracy,
        'ci95': 1.96 * float(np.sqrt(grid_accuracy * (1 - grid_accuracy) / total)),
        'count': total,
    }]
    aggregates += aggregate(target_rows, ('model_less', 'model_based'))
    return RunReport(
        experiment='grid',
        rows=list(cell_rows.values()),
        aggregates=aggregates,
        aux={'grid_targets': target_rows} if target_rows else {},
    )


# Increasing n

def _increasing_n_target(cfg, n, index):
    C, data, test, model = synthetic_target(cfg, n, 'increasing_n', index)
    scenario = _scenario_for(cfg.scenario, C)
    true_corr, true_bin = _truth(data, cfg.B)
    rng = child_rng(cfg.seed, 'increasing_n', n, index, 'model_less')
    interval = attacks.exact_interval(scenario)
    model_less = attacks.model_less_predict(interval, cfg.B, rng)

    params = attack_params(cfg, n=n)
    if cfg.seed_known:
        params = replace(params, shadow_seed=child_seed(cfg.seed, 'increasing_n', n, index, 'train'))
    attack_rng = child_rng(cfg.seed, 'increasing_n', n, index, 'shadow')
    try:
        result = attacks.run_model_based_attack(model, scenario, normal_marginals(n), params, attack_rng, m=cfg.m)
        model_based, meta_acc = result.predicted_bin, result.meta_holdout_accuracy
    except DegenerateLabels as exc:
        logger.warning(f"Target {index} (n={n}): {exc}")
        model_based, meta_acc = None, np.nan

    rho1, rho2 = C[0, n - 1], C[1, n - 1]
    return [{
        'n': n, 'target': index, 'scenario': cfg.scenario,
        'rho1': rho1, 'rho2': rho2, 'true_corr': true_corr, 'true_bin': true_bin,
        'interval_lo': interval.lo, 'interval_hi': interval.hi,
        'model_less': model_less, 'model_based': model_based,
        'correct_model_less': model_less == true_bin,
        'correct_model_based': None if model_based is None else model_based == true_bin,
        'meta_holdout_accuracy': meta_acc,
        'target_test_accuracy': models.accuracy(model, test),
    }]


def constraint_breakdown(rows, width=0.1):
    """Accuracy by bucket of max / mean / min of |rho(X_1, Y)|, |rho(X_2, Y)|"""
    out = []
    for statistic, reduce in (('max', max), ('mean', lambda a, b: (a + b) / 2.0), ('min', min)):
        bucketed = []
        for row in rows:
            value = reduce(abs(row['rho1']), abs(row['rho2']))
            bucket = min(int(value / width), int(round(1.0 / width)) - 1)
            bucketed.append({**row, 'bucket_lo': bucket * width, 'statistic': statistic})
        out += aggregate(bucketed, ('model_less', 'model_based'), by=('n', 'statistic', 'bucket_lo'))
    return out


def run_increasing_n(cfg):
    """Model-less and model-based accuracy per n under the configured scenario"""
    rows = []
    for n in cfg.ns:
        chunks = _parallel(cfg, (delayed(_increasing_n_target)(cfg, n, t) for t in range(cfg.target_count())))
        rows += _flatten(chunks)
        logger.info(f"n={n}: {cfg.target_count()} targets done")
    return RunReport(
        experiment='increasing_n',
        rows=rows,
        aggregates=aggregate(rows, ('model_less', 'model_based'), by=('n',)),
        aux={'constraint_breakdown': constraint_breakdown(rows)},
    )


# Mitigations

def _mitigation_target(cfg, index, settings, setting_kind):
    n = cfg.n
    C, data, _, model = synthetic_target(cfg, n, cfg.kind, index)
    scenario = _scenario_for(cfg.scenario, C)
    true_corr, true_bin = _truth(data, cfg.B)
    marginals = normal_marginals(n)

    Q_max = max(settings) if setting_kind == 'Q' else cfg.Q
    query = attacks.build_query_dataset(scenario, marginals, Q_max, child_rng(cfg.seed, cfg.kind, index, 'query'))
    ensemble = attacks.build_shadow_ensemble(
        scenario, marginals, cfg.m, cfg.shadow_count(n), cfg.model_kind, train_config(cfg, 0),
        child_rng(cfg.seed, cfg.kind, index, 'shadow'),
    )
    meta_kind = 'mlp' if cfg.model_kind == 'mlp' else 'lr'
    meta_seed = child_seed(cfg.seed, cfg.kind, index, 'meta')

    rows = []
    for setting in settings:
        if setting_kind == 'Q':
            subset, mode = query.subset(np.arange(int(setting))), 'full'
        else:
            subset, mode = query, setting
        try:
            guess, _ = attacks.attack_with_ensemble(model, ensemble, subset, cfg.B, mode, 'black_box', meta_kind,
                                                    meta_seed)
        except DegenerateLabels:
            guess = None
        rows.append({
            'target': index, 'setting': str(setting), 'true_corr': true_corr, 'true_bin': true_bin,
            'model_based': guess,
            'correct_model_based': None if guess is None else guess == true_bin,
        })
    return rows


def _external_target(cfg, index, entry):
    """One pre-trained model listed in the manifest"""
    model = storage.load_model(entry['model'])
    kind = entry.get('scenario', cfg.scenario)
    values = np.asarray(entry['constraints'], dtype=float)
    if kind == 'S3':
        scenario = corrmat.Scenario.s3(values)
    elif kind == 'S1':
        scenario = corrmat.Scenario.s1(model.n_inputs + 1, values[0], values[1])
    else:
        scenario = corrmat.Scenario.s2(values)
    true_bin = attacks.bin_of(float(entry['true_correlation']), cfg.B)
    params = attack_params(cfg, n=scenario.n, m=int(entry.get('dataset_size', cfg.m)))
    try:
        guess = attacks.run_model_based_attack(
            model, scenario, normal_marginals(scenario.n), params, child_rng(cfg.seed, 'external', index, 'shadow'),
        ).predicted_bin
    except DegenerateLabels:
        guess = None
    return [{
        'target': index, 'setting': str(entry.get('group', 'external')), 'model': entry['model'],
        'true_corr': float(entry['true_correlation']), 'true_bin': true_bin, 'model_based': guess,
        'correct_model_based': None if guess is None else guess == true_bin,
    }]


def load_manifest(path):
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ConfigError("A model manifest is a JSON list of entries")
    for entry in entries:
        missing = {'model', 'constraints', 'true_correlation'} - set(entry)
        if missing:
            raise ConfigError(f"Manifest entry lacks {', '.join(sorted(missing))}")
    return entries


def run_mitigations(cfg):
    """
    Query-count (mitigation_queries) or score-precision (mitigation_precision) sweep

    One shadow ensemble per target serves every setting; only features are re-extracted.
    With a model manifest the listed externally trained models are attacked instead,
    grouped by their 'group' field.
    """
    if cfg.model_manifest:
        entries = load_manifest(cfg.model_manifest)
        chunks = _parallel(cfg, (delayed(_external_target)(cfg, i, e) for i, e in enumerate(entries)))
    else:
        if cfg.kind == 'mitigation_queries':
            settings, setting_kind = sorted(int(q) for q in cfg.queries), 'Q'
        else:
            settings, setting_kind = list(cfg.precisions), 'precision'
            for mode in settings:
                attacks.parse_precision(mode)
        chunks = _parallel(cfg, (
            delayed(_mitigation_target)(cfg, t, settings, setting_kind) for t in range(cfg.target_count())
        ))
    rows = _flatten(chunks)
    aggregates = aggregate(rows, ('model_based',), by=('setting',))
    return RunReport(experiment=cfg.kind, rows=rows, aggregates=aggregates, aux={'sweep': aggregates})


# Real data

def _load_real(cfg, G=None):
    rng = child_rng(cfg.seed, 'dataset', 'load')
    return datasets.load_dataset(
        cfg.dataset, cfg.dataset_path, rng=rng, columns=cfg.columns, label_column=cfg.label_column,
        threshold_rule=cfg.threshold_rule, G=G or cfg.G,
    )


def _target_rows(cfg, loaded, index):
    size = cfg.max_records
    if size is None and loaded.name == 'fifa19':
        size = FIFA_TARGET_RECORDS
    if size is None or size >= loaded.dataset.m:
        return None
    rng = child_rng(cfg.seed, 'real_data', index, 'records')
    return np.sort(rng.choice(loaded.dataset.m, size, replace=False))


def _real_target(cfg, loaded, index, columns):
    """Target model on one data collection: inputs (pair..., extra), label last"""
    data, marginals = loaded.collection(columns, _target_rows(cfg, loaded, index))
    batch = 128 if cfg.model_kind == 'mlp' else cfg.batch_size
    seed = child_seed(cfg.seed, 'real_data', index, 'train')
    model = models.train_model(cfg.model_kind, data, train_config(cfg, seed, batch_size=batch))
    scenario = corrmat.Scenario.s2(copula.output_correlations(data))
    return data, marginals, model, scenario


def _real_collection(cfg, loaded, index, columns):
    data, marginals, model, scenario = _real_target(cfg, loaded, index, columns)
    true_corr = float(copula.empirical_corr(data)[0, 1])
    interval = attacks.exact_interval(scenario)
    params = attack_params(cfg, n=scenario.n, m=data.m, threshold_rule=loaded.threshold, shift=True)
    shift_rng, query_rng, shadow_rng = (child_rng(cfg.seed, 'real_data', index, s) for s in ('shift', 'query', 'shadow'))
    shifted, shift = attacks.shift_scenario(scenario, marginals, data.m, params, shift_rng)
    query = attacks.build_query_dataset(shifted, marginals, cfg.Q, query_rng, threshold_rule=loaded.threshold)
    ensemble = attacks.build_shadow_ensemble(
        shifted, marginals, data.m, params.K, cfg.model_kind, params.train_cfg, shadow_rng,
        threshold_rule=loaded.threshold,
    )
    meta_kind = 'mlp' if cfg.model_kind == 'mlp' else 'lr'
    rows = []
    for B in cfg.B_values:
        true_bin = attacks.bin_of(true_corr, B)
        model_less = attacks.model_less_predict(interval, B, child_rng(cfg.seed, 'real_data', index, B, 'model_less'))
        try:
            guess, _ = attacks.attack_with_ensemble(model, ensemble, query, B, meta_kind=meta_kind,
                                                    seed=child_seed(cfg.seed, 'real_data', index, B, 'meta'))
        except DegenerateLabels:
            guess = None
        rows.append({
            'collection': index, 'x1': loaded.input_names[columns[0]], 'x2': loaded.input_names[columns[1]],
            'x3': loaded.input_names[columns[2]], 'B': B, 'rho1': scenario.values[0], 'rho2': scenario.values[1],
            'shift_gap': shift.gap if shift else np.nan,
            'true_corr': true_corr, 'true_bin': true_bin, 'model_less': model_less, 'model_based': guess,
            'correct_model_less': model_less == true_bin,
            'correct_model_based': None if guess is None else guess == true_bin,
        })
    return rows


def run_real_data(cfg):
    """Data collections (target pair + one extra input + label) from a real or stand-in dataset"""
    loaded = _load_real(cfg)
    collections = datasets.sample_collections(loaded.dataset.n - 1, cfg.collections,
                                              child_rng(cfg.seed, 'real_data', 'collection'))
    chunks = _parallel(cfg, (delayed(_real_collection)(cfg, loaded, i, c) for i, c in enumerate(collections)))
    rows = _flatten(chunks)
    return RunReport(
        experiment='real_data',
        rows=rows,
        aggregates=aggregate(rows, ('model_less', 'model_based'), by=('B',)),
        extra={'dataset': loaded.name, 'records': loaded.dataset.m, 'inputs': loaded.dataset.n - 1},
    )


def _granularity_collection(cfg, loaded, index, columns):
    data, _, model, scenario = _real_target(cfg, loaded, index, columns)
    true_corr, true_bin = _truth(data, cfg.B)
    rows = []
    for G in cfg.G_values:
        marginals = [copula.fit_marginal(data.inputs[:, j], G) for j in range(data.n - 1)]
        marginals.append(loaded.marginals[-1])
        params = attack_params(cfg, n=scenario.n, m=data.m, threshold_rule=loaded.threshold, shift=True)
        try:
            guess = attacks.run_model_based_attack(
                model, scenario, marginals, params, child_rng(cfg.seed, 'granularity', index, G, 'shadow'), m=data.m,
            ).predicted_bin
        except DegenerateLabels:
            guess = None
        rows.append({
            'collection': index, 'G': G, 'true_corr': true_corr, 'true_bin': true_bin, 'model_based': guess,
            'correct_model_based': None if guess is None else guess == true_bin,
        })
    return rows


def run_marginal_granularity(cfg):
    """Model-based accuracy on real collections as the marginals' bin count G varies"""
    loaded = _load_real(cfg)
    collections = datasets.sample_collections(loaded.dataset.n - 1, cfg.collections,
                                              child_rng(cfg.seed, 'granularity', 'collection'))
    chunks = _parallel(cfg, (delayed(_granularity_collection)(cfg, loaded, i, c) for i, c in enumerate(collections)))
    rows = _flatten(chunks)
    return RunReport(
        experiment='marginal_granularity',
        rows=rows,
        aggregates=aggregate(rows, ('model_based',), by=('G',)),
    )


# Constraint extraction

def random_guess_mse(constraints, rng, draws=10000):
    """
    MSE of guessing every constraint uniformly on [-1, 1]

    Returns (analytic 1/3 + mean(c^2), Monte-Carlo estimate).
    """
    constraints = np.asarray(constraints, dtype=float)
    analytic = 1.0 / 3.0 + float(np.mean(constraints ** 2))
    guesses = rng.uniform(-1.0, 1.0, size=(draws, constraints.size))
    return analytic, float(np.mean((guesses - constraints) ** 2))


def _extraction_target(cfg, index, loaded=None):
    if loaded is None:
        n = cfg.n
        _, data, _, model = synthetic_target(cfg, n, 'extract_constraints', index)
        marginals = normal_marginals(n)
    else:
        n_inputs = loaded.dataset.n - 1
        rng = child_rng(cfg.seed, 'extract_constraints', index, 'collection')
        columns = sorted(int(c) for c in rng.choice(n_inputs, min(3, n_inputs), replace=False))
        data, marginals = loaded.collection(columns)
        model = models.train_model(cfg.model_kind, data,
                                   train_config(cfg, child_seed(cfg.seed, 'extract_constraints', index, 'train')))
    truth = copula.output_correlations(data)
    analytic, monte_carlo = random_guess_mse(truth, child_rng(cfg.seed, 'extract_constraints', index, 'probe', 0))
    rows = []
    for q in cfg.q_tilde:
        result = attacks.extract_constraints(model, marginals, int(q),
                                             child_rng(cfg.seed, 'extract_constraints', index, 'probe', int(q)))
        rows.append({
            'target': index, 'q_tilde': int(q),
            'mse': float(np.mean((result.estimates - truth) ** 2)),
            'degenerate': result.degenerate,
            'random_guess_mse': analytic,
            'random_guess_mse_mc': monte_carlo,
        })
    return rows


def run_extract_constraints(cfg):
    """MSE of the extracted rho(X_i, Y) per probe count, against the random-guess MSE"""
    loaded = _load_real(cfg) if cfg.source == 'dataset' else None
    chunks = _parallel(cfg, (delayed(_extraction_target)(cfg, t, loaded) for t in range(cfg.trials)))
    rows = _flatten(chunks)
    sweep = []
    for q in sorted({row['q_tilde'] for row in rows}):
        mse, half = mean_with_ci([row['mse'] for row in rows if row['q_tilde'] == q])
        sweep.append({'q_tilde': q, 'mse': mse, 'ci95': half})
    first = [row for row in rows if row['q_tilde'] == rows[0]['q_tilde']]
    analytic, _ = mean_with_ci([row['random_guess_mse'] for row in first])
    monte_carlo, _ = mean_with_ci([row['random_guess_mse_mc'] for row in first])
    return RunReport(
        experiment='extract_constraints',
        rows=rows,
        aux={'extraction_sweep': sweep},
        extra={'random_guess_mse': analytic, 'random_guess_mse_mc': monte_carlo},
    )


# Attribute inference

def _aia_setup(cfg, index, loaded):
    """Target data, marginals, model and known constraints for one AIA target"""
    if loaded is None:
        n = cfg.n
        first = None
        if cfg.aia_correlation != 0.0:
            rng = child_rng(cfg.seed, 'aia', n, index, 'probe')
            first = np.concatenate([np.full(n - 2, cfg.aia_correlation), rng.uniform(-1, 1, size=1)])
        C, data, _, model = synthetic_target(cfg, n, 'aia', index, first_column=first)
        return data, normal_marginals(n), model, C[:n - 1, n - 1], 'auto'
    n_inputs = loaded.dataset.n - 1
    rng = child_rng(cfg.seed, 'aia', index, 'collection')
    columns = sorted(int(c) for c in rng.choice(n_inputs, min(cfg.n - 1, n_inputs), replace=False))
    data, marginals = loaded.collection(columns)
    model = models.train_model('lr', data, train_config(cfg, child_seed(cfg.seed, 'aia', index, 'train')))
    return data, marginals, model, copula.output_correlations(data), loaded.threshold


def _aia_target(cfg, index, loaded, record_count):
    data, marginals, model, V, threshold = _aia_setup(cfg, index, loaded)
    n = data.n
    params = aia.AiaParams(S_prime=cfg.S_prime, G=cfg.G, m_init=cfg.m_init, delta=cfg.delta)
    scenario = corrmat.Scenario.s2(V)
    attack = attack_params(cfg, n=n, m=data.m, model_kind='lr', threshold_rule=threshold)

    inferred, shifted = {}, {}
    for i in range(n - 1):
        for j in range(i + 1, n - 1):
            rng = child_rng(cfg.seed, 'aia', index, i, j, 'shadow')
            try:
                result = attacks.run_model_based_attack(model, scenario, marginals, attack, rng, m=data.m, pair=(i, j))
            except DegenerateLabels as exc:
                logger.warning(f"AIA target {index}, pair ({i}, {j}): {exc}")
                continue
            inferred[(i, j)] = result.predicted_bin
            shifted[(i, j)] = np.asarray(result.shifted if result.shifted is not None else V, dtype=float)

    V_shifted = aia.average_shifted_constraints(shifted) if shifted else np.asarray(V, dtype=float)
    pool = aia.build_synthetic_pool(V_shifted, marginals, inferred, data.m, params,
                                    child_rng(cfg.seed, 'aia', index, 'pool'), threshold_rule=threshold)
    baseline_pool = aia.build_synthetic_pool(V_shifted, marginals, {}, data.m, params,
                                             child_rng(cfg.seed, 'aia', index, 'baseline'), threshold_rule=threshold)
    confusion = aia.estimate_confusion(model, data)
    F1 = copula.discretize_marginal(marginals[0], cfg.G)
    tertiles = copula.marginal_tertiles(F1)

    record_rng = child_rng(cfg.seed, 'aia', index, 'records')
    picked = np.sort(record_rng.choice(data.m, min(record_count, data.m), replace=False))
    rows = []
    for r in picked:
        record = aia.PartialRecord.from_row(data.inputs[r], data.labels[r])
        truth = float(data.inputs[r, 0])
        method_rng = child_rng(cfg.seed, 'aia', index, int(r), 'aia')
        estimates = {
            'ci_aia': aia.match_sensitive_value(pool, record, params).estimate,
            'fredrikson': aia.fredrikson_aia(model, record, F1, confusion, cfg.G, method_rng),
            'csmia': aia.csmia_aia(model, record, F1, cfg.G, method_rng),
            'copula_shifted': aia.match_sensitive_value(baseline_pool, record, params).estimate,
            'marginal_prior': aia.marginal_prior(F1, method_rng),
        }
        truth_bin = aia.tertile_bin(truth, tertiles)
        for method in aia.AIA_METHODS:
            predicted_bin = aia.tertile_bin(estimates[method], tertiles)
            rows.append({
                'method': method, 'target': index, 'record': int(r), 'truth': truth, 'truth_bin': truth_bin,
                'estimate': estimates[method], 'predicted_bin': predicted_bin,
                'correct': predicted_bin == truth_bin,
                'pool_fallback': pool.fallback_used,
            })
    return rows


def run_aia(cfg):
    """Binned accuracy of CI-AIA and the baselines on records of LR targets"""
    loaded = _load_real(cfg) if cfg.source == 'dataset' else None
    per_target = int(np.ceil(cfg.records / cfg.aia_targets))
    chunks = _parallel(cfg, (delayed(_aia_target)(cfg, t, loaded, per_target) for t in range(cfg.aia_targets)))
    rows = _flatten(chunks)
    aggregates = []
    for method in aia.AIA_METHODS:
        correct = [row['correct'] for row in rows if row['method'] == method]
        accuracy, half = accuracy_ci(correct)
        aggregates.append({'method': method, 'accuracy': accuracy, 'ci95': half, 'count': len(correct)})
    return RunReport(experiment='aia', rows=rows, aggregates=aggregates)


EXPERIMENTS = {
    'grid': run_grid,
    'increasing_n': run_increasing_n,
    'mitigation_queries': run_mitigations,
    'mitigation_precision': run_mitigations,
    'real_data': run_real_data,
    'aia': run_aia,
    'extract_constraints': run_extract_constraints,
    'marginal_granularity': run_marginal_granularity,
}


def run_experiment(cfg):
    """Dispatch on cfg.kind and time the run"""
    if not isinstance(cfg, ExperimentConfig):
        raise ConfigError("run_experiment needs an ExperimentConfig")
    logger.info(f"Running {cfg.kind} (seed {cfg.seed}, {'full' if cfg.full_scale else 'desk'} scale)")
    start = time.perf_counter()
    report = EXPERIMENTS[cfg.kind](cfg)
    report.wall_clock = time.perf_counter() - start
    return report
