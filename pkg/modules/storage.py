"""
Persistence for matrices, marginals, datasets, models and reports
JSON objects and headerless CSV blocks, floats written with 17 significant digits
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from modules import copula, models
from modules.errors import ParseError, SchemaError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MODEL_FORMAT = 'corrleak-model/1'
FLOAT_FORMAT = '%.17g'


def _ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _read_block(path):
    try:
        return pd.read_csv(path, header=None, dtype=float).to_numpy()
    except (pd.errors.ParserError, ValueError) as exc:
        raise ParseError(f"Cannot parse {path}: {exc}") from exc


# Correlation matrices

def matrix_to_json(C):
    C = np.asarray(C, dtype=float)
    return json.dumps({'n': int(C.shape[0]), 'entries': C.tolist()})


def matrix_from_json(text):
    payload = json.loads(text)
    C = np.array(payload['entries'], dtype=float)
    if C.shape != (payload['n'], payload['n']):
        raise SchemaError(f"Matrix entries do not form a {payload['n']}x{payload['n']} block")
    return C


def matrix_to_csv(C, path):
    _ensure_parent(path)
    pd.DataFrame(np.asarray(C, dtype=float)).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT)


def matrix_from_csv(path):
    C = _read_block(path)
    if C.shape[0] != C.shape[1]:
        raise SchemaError(f"{path} does not hold a square matrix")
    return C


# Marginals

def marginal_to_json(marg):
    return json.dumps({'kind': marg.kind, 'edges': marg.edges.tolist(), 'masses': marg.masses.tolist()})


def marginal_from_json(text):
    payload = json.loads(text)
    if payload.get('kind') == copula.NORMAL:
        return copula.standard_normal()
    return copula.Marginal(copula.EMPIRICAL, np.array(payload['edges']), np.array(payload['masses']))


# Datasets

def dataset_to_csv(data, path):
    """Headerless: inputs then the label"""
    _ensure_parent(path)
    pd.DataFrame(data.columns()).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT)


def dataset_from_csv(path):
    block = _read_block(path)
    labels = block[:, -1]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        row = int(np.flatnonzero(~np.isin(labels, (0.0, 1.0)))[0])
        raise ParseError("Label must be 0 or 1", row=row, column=block.shape[1] - 1)
    return copula.Dataset(block[:, :-1], labels.astype(int))


# Models

def model_to_json(model):
    if model.kind == 'lr':
        body = {'weights': model.weights.tolist(), 'bias': float(model.bias)}
        shapes = [[model.weights.size], []]
    else:
        body = {'layers': [{'W': W.tolist(), 'b': b.tolist()} for W, b in model.layers]}
        shapes = [[list(W.shape), list(b.shape)] for W, b in model.layers]
    return json.dumps({'format': MODEL_FORMAT, 'kind': model.kind, 'shapes': shapes, **body})


def model_from_json(text):
    payload = json.loads(text)
    if payload.get('format') != MODEL_FORMAT:
        raise SchemaError(f"Unsupported model format {payload.get('format')!r}")
    if payload['kind'] == 'lr':
        return models.LogisticRegressionModel(np.array(payload['weights'], dtype=float), float(payload['bias']))
    if payload['kind'] == 'mlp':
        layers = []
        for layer, (w_shape, b_shape) in zip(payload['layers'], payload['shapes']):
            W = np.array(layer['W'], dtype=float).reshape(w_shape)
            b = np.array(layer['b'], dtype=float).reshape(b_shape)
            layers.append((W, b))
        return models.MlpModel(layers)
    raise SchemaError(f"Unknown model kind {payload['kind']!r}")


def save_model(model, path):
    _ensure_parent(path)
    Path(path).write_text(model_to_json(model))


def load_model(path):
    return model_from_json(Path(path).read_text())


# Reports

def meta_dataset_to_csv(meta, path):
    """Q feature columns then the bin label"""
    _ensure_parent(path)
    frame = pd.DataFrame(meta.features, columns=[f"f{q + 1}" for q in range(meta.features.shape[1])])
    frame['label'] = meta.labels
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def write_json_report(payload, path):
    _ensure_parent(path)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_jsonable)
    logger.info(f"Wrote {path}")


def write_csv_report(rows, path, columns=None):
    """Tidy CSV from a list of dicts; floats at 17 significant digits"""
    _ensure_parent(path)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return frame
