"""
Dataset loaders and preprocessing
Fifa19, Communities and Crime, Musk (v2), generic CSV, and a synthetic stand-in with
skewed marginals for running the real-data protocol without external files
"""
from dataclasses import dataclass
import logging
from pathlib import Path
import re

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import ndtri

from modules import copula, corrmat
from modules.config import DATA_DIR
from modules.errors import ParseError, SchemaError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_FILES = {
    'fifa19': 'fifa19.csv',
    'communities': 'communities.data',
    'musk': 'musk.csv',
}

# Columns of Fifa19 that give the transfer value away
FIFA_LEAKY_COLUMNS = ['Wage', 'Release Clause']
FIFA_ID_COLUMNS = ['Unnamed: 0', 'ID', 'Jersey Number']

# Crime statistics other than the murder count, and identifiers
COMMUNITIES_CRIME_COLUMNS = [
    'murdPerPop', 'rapes', 'rapesPerPop', 'robberies', 'robbbPerPop', 'assaults', 'assaultPerPop',
    'burglaries', 'burglPerPop', 'larcenies', 'larcPerPop', 'autoTheft', 'autoTheftPerPop',
    'arsons', 'arsonsPerPop', 'ViolentCrimesPerPop', 'nonViolPerPop',
]
COMMUNITIES_ID_COLUMNS = ['communityname', 'state', 'countyCode', 'communityCode', 'fold']

MUSK_NAME_COLUMNS = ['molecule_name', 'conformation_name']

_MONEY = re.compile(r'^\s*€?\s*([0-9]*\.?[0-9]+)\s*([KkMm]?)\s*$')


@dataclass
class LoadedData:
    """
    A preprocessed dataset ready for attacks

    Inputs carry fitted G-bin empirical marginals; the label is modelled as a
    standard-normal latent thresholded at `threshold`, which reproduces the class balance.
    """
    name: str
    dataset: copula.Dataset
    marginals: list
    threshold: float

    @property
    def input_names(self):
        return list(self.dataset.names[:-1])

    def collection(self, input_columns, rows=None):
        """Sub-dataset over the given input columns (label last) with its marginals"""
        data = self.dataset.select(input_columns)
        if rows is not None:
            data = data.subset(rows)
        marginals = [self.marginals[c] for c in input_columns] + [self.marginals[-1]]
        return data, marginals


def parse_money(value):
    """'€110.5M' -> 110500000.0, '€750K' -> 750000.0, '€0' -> 0.0"""
    if isinstance(value, (int, float, np.number)) and not pd.isna(value):
        return float(value)
    match = _MONEY.match(str(value))
    if not match:
        raise ParseError(f"Cannot parse amount {value!r}")
    amount = float(match.group(1))
    suffix = match.group(2).upper()
    return amount * {'': 1.0, 'K': 1e3, 'M': 1e6}[suffix]


def _read_csv(path, **kwargs):
    try:
        return pd.read_csv(path, **kwargs)
    except pd.errors.ParserError as exc:
        row = None
        found = re.search(r'line (\d+)', str(exc))
        if found:
            row = int(found.group(1))
        raise ParseError(f"Cannot parse {path}: {exc}", row=row) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path} is empty") from exc


def _require(df, columns, path):
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"{path} is missing columns", missing)


def _drop_constant(df, strict, where):
    constant = [c for c in df.columns if df[c].nunique(dropna=True) <= 1]
    if constant and strict:
        raise SchemaError(f"Zero-variance columns in {where}", constant)
    if constant:
        logger.warning(f"Dropping {len(constant)} constant columns from {where}")
    return df.drop(columns=constant)


def binarize(values, rule='median'):
    """1 where the value exceeds the rule's threshold (median, mean, zero or a float)"""
    values = np.asarray(values, dtype=float)
    if isinstance(rule, str):
        thresholds = {'median': np.median, 'mean': np.mean, 'zero': lambda v: 0.0}
        if rule not in thresholds:
            raise ValueError(f"Unknown threshold rule: {rule}")
        threshold = float(thresholds[rule](values))
    else:
        threshold = float(rule)
    return (values > threshold).astype(int)


def _finish(name, inputs, labels, G):
    """Fit marginals and wrap a preprocessed frame into LoadedData"""
    if np.unique(labels).size < 2:
        raise SchemaError(f"{name}: the binarized label has a single class", ['label'])
    names = [str(c) for c in inputs.columns] + ['label']
    try:
        dataset = copula.Dataset(inputs.to_numpy(dtype=float), labels, names=names)
        marginals = [copula.fit_marginal(dataset.inputs[:, j], G) for j in range(dataset.inputs.shape[1])]
    except ValueError as exc:
        raise ParseError(f"{name}: {exc}") from exc
    marginals.append(copula.standard_normal())
    positive = float(np.mean(labels))
    threshold = float(ndtri(1.0 - positive))
    logger.info(f"Loaded {name}: {dataset.m} records, {dataset.n - 1} inputs, {positive:.1%} positive")
    return LoadedData(name, dataset, marginals, threshold)


def load_fifa19(path, G=100):
    """
    Numeric attributes of Fifa19 with Y = Value > median

    Categorical, identifier and value-revealing columns are dropped, then rows
    with missing values and duplicated attributes.
    """
    df = _read_csv(path)
    _require(df, ['Value'], path)
    value = []
    for row, raw in enumerate(df['Value']):
        try:
            value.append(parse_money(raw))
        except ParseError as exc:
            raise ParseError(str(exc), row=row, column='Value') from exc
    df = df.drop(columns=[c for c in FIFA_LEAKY_COLUMNS + FIFA_ID_COLUMNS + ['Value'] if c in df.columns])
    df = df.select_dtypes(include='number')
    df['__value'] = value
    df = df.dropna()
    labels = binarize(df.pop('__value').to_numpy(), 'median')
    df = df.loc[:, ~df.T.duplicated()]
    df = _drop_constant(df, strict=False, where='fifa19')
    return _finish('fifa19', df, labels, G)


def load_communities(path, G=100):
    """Communities and Crime with Y = murders >= 1 ('?' marks missing values)"""
    df = _read_csv(path, na_values='?')
    _require(df, ['murders'], path)
    murders = pd.to_numeric(df['murders'], errors='coerce')
    keep = murders.notna()
    df = df.drop(columns=[c for c in COMMUNITIES_CRIME_COLUMNS + COMMUNITIES_ID_COLUMNS + ['murders']
                          if c in df.columns])
    df = df.loc[keep].select_dtypes(include='number')
    df = df.loc[:, df.notna().all()]
    labels = (murders[keep].to_numpy() >= 1).astype(int)
    df = _drop_constant(df, strict=False, where='communities')
    return _finish('communities', df, labels, G)


def load_musk(path, rng, G=100):
    """Musk (v2), class-balanced by down-sampling the majority class under rng"""
    df = _read_csv(path)
    _require(df, ['class'], path)
    labels = pd.to_numeric(df.pop('class'), errors='coerce')
    bad = ~labels.isin([0, 1])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError("Musk class must be 0 or 1", row=row, column='class')
    df = df.drop(columns=[c for c in MUSK_NAME_COLUMNS if c in df.columns]).select_dtypes(include='number')
    labels = labels.to_numpy().astype(int)

    positive, negative = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    size = min(positive.size, negative.size)
    rows = np.sort(np.concatenate([
        rng.choice(positive, size, replace=False),
        rng.choice(negative, size, replace=False),
    ]))
    df = _drop_constant(df.iloc[rows].reset_index(drop=True), strict=False, where='musk')
    return _finish('musk', df, labels[rows], G)


def load_csv(path, label_column, columns=None, threshold_rule='median', G=100):
    """
    Generic CSV: explicit input columns and a label column binarized by threshold_rule

    Unknown column names and constant inputs raise SchemaError.
    """
    df = _read_csv(path)
    columns = list(columns) if columns else [c for c in df.columns if c != label_column]
    _require(df, columns + [label_column], path)
    frame = df[columns + [label_column]]
    for column in frame.columns:
        converted = pd.to_numeric(frame[column], errors='coerce')
        bad = converted.isna() & frame[column].notna()
        if bad.any():
            raise ParseError("Non-numeric value", row=int(np.flatnonzero(bad.to_numpy())[0]), column=column)
    frame = frame.apply(pd.to_numeric).dropna()
    inputs = _drop_constant(frame[columns], strict=True, where=str(path))
    labels = binarize(frame[label_column].to_numpy(), threshold_rule)
    return _finish('csv', inputs, labels, G)


# Stand-in data

_STANDIN_MARGINALS = [
    stats.expon(),
    stats.lognorm(s=0.75),
    stats.gamma(a=2.0),
    stats.beta(a=2.0, b=5.0),
    stats.uniform(),
    stats.norm(),
]


def synthetic_standin(n_inputs, m, rng):
    """
    Frame of n_inputs skewed columns x1.. plus a continuous output 'y'

    Correlations are drawn uniformly then shrunk halfway toward zero, as real tabular
    data tends to have small correlations.
    """
    C = corrmat.sample_corr_matrix(n_inputs + 1, rng)
    C = 0.5 * C + 0.5 * np.eye(n_inputs + 1)
    Z = rng.standard_normal((m, n_inputs + 1)) @ corrmat.cholesky(C).T
    U = np.clip(stats.norm.cdf(Z), 1e-12, 1.0 - 1e-12)
    data = {
        f"x{j + 1}": _STANDIN_MARGINALS[j % len(_STANDIN_MARGINALS)].ppf(U[:, j])
        for j in range(n_inputs)
    }
    data['y'] = stats.lognorm(s=1.0).ppf(U[:, -1])
    return pd.DataFrame(data)


def write_standin_csv(path, n_inputs, m, seed):
    frame = synthetic_standin(n_inputs, m, np.random.default_rng(seed))
    frame.to_csv(path, index=False, float_format='%.17g')
    return frame


def load_standin(rng, n_inputs=8, m=2000, G=100):
    frame = synthetic_standin(n_inputs, m, rng)
    labels = binarize(frame.pop('y').to_numpy(), 'median')
    return _finish('standin', frame, labels, G)


def load_dataset(name, path=None, rng=None, columns=None, label_column=None, threshold_rule='median', G=100):
    """
    Load and preprocess one of fifa19 | communities | musk | csv | standin

    rng drives the Musk balancing and the stand-in. Without a path the named
    datasets are read from DATA_DIR; csv always needs one.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if name == 'standin':
        return load_standin(rng, G=G)
    if path is None and name in DEFAULT_FILES:
        path = Path(DATA_DIR) / DEFAULT_FILES[name]
    if path is None:
        raise FileNotFoundError(f"Dataset {name} needs a file path")
    if name == 'fifa19':
        return load_fifa19(path, G)
    if name == 'communities':
        return load_communities(path, G)
    if name == 'musk':
        return load_musk(path, rng, G)
    if name == 'csv':
        if label_column is None:
            raise SchemaError("The csv loader needs a label column")
        return load_csv(path, label_column, columns, threshold_rule, G)
    raise ValueError(f"Unknown dataset: {name}")


def sample_collections(n_inputs, count, rng):
    """
    Up to `count` distinct (pair, extra) column triplets: an unordered target pair
    plus a third input
    """
    total = n_inputs * (n_inputs - 1) * (n_inputs - 2) // 2
    if total == 0:
        raise SchemaError("A data collection needs at least three inputs")
    seen, collections = set(), []
    while len(collections) < min(count, total):
        a, b, c = (int(v) for v in rng.choice(n_inputs, 3, replace=False))
        key = (min(a, b), max(a, b), c)
        if key not in seen:
            seen.add(key)
            collections.append(key)
    return collections
