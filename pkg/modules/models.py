"""
Target, shadow and meta models
Logistic regression (L-BFGS on the L2-regularized log loss) and the fixed 20/10 MLP
(torch training, numpy inference), confidence scores and weight extraction
"""
from dataclasses import dataclass, field, replace
import logging

import numpy as np
import torch
from scipy.optimize import minimize
from scipy.special import expit, softmax

from modules.errors import ShapeMismatch, SingleClass

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MODEL_KINDS = ('lr', 'mlp')
HIDDEN_SIZES = (20, 10)


@dataclass(frozen=True)
class TrainConfig:
    """
    Training hyperparameters shared by targets and shadows

    batch_size None trains full batch; optimizer is 'adam' or 'sgd'.
    l2/tol/max_iter drive the logistic regression, the rest the MLP.
    """
    learning_rate: float = 0.05
    max_epochs: int = 100
    patience: int = 5
    holdout: float = 0.1
    batch_size: int = None
    seed: int = 0
    optimizer: str = 'adam'
    weight_decay: float = 0.0
    l2: float = 1.0
    tol: float = 1e-4
    max_iter: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout must be in [0, 1)")
        if self.optimizer not in ('adam', 'sgd'):
            raise ValueError(f"Unknown optimizer: {self.optimizer}")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


# Meta-classifier settings for MLP targets
META_MLP_CONFIG = TrainConfig(learning_rate=0.001, patience=10, batch_size=128, weight_decay=0.01)


@dataclass
class LogisticRegressionModel:
    weights: np.ndarray
    bias: float

    kind = 'lr'

    @property
    def n_inputs(self):
        return int(self.weights.size)


@dataclass
class MlpModel:
    """layers: [(W, b), ...] with W of shape (fan_in, fan_out)"""
    layers: list = field(default_factory=list)

    kind = 'mlp'

    @property
    def n_inputs(self):
        return int(self.layers[0][0].shape[0])

    @property
    def n_outputs(self):
        return int(self.layers[-1][0].shape[1])

    def copy(self):
        return MlpModel([(W.copy(), b.copy()) for W, b in self.layers])


def _check_labels(labels):
    if np.unique(labels).size < 2:
        raise SingleClass("Training labels contain a single class")


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"Model expects {model.n_inputs} inputs, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("Model inputs must be finite")
    return X, single


# Logistic regression

def lr_objective(model, data, l2=1.0):
    """Sum of log losses plus l2/2 |w|^2 (bias unpenalized)"""
    z = data.inputs @ model.weights + model.bias
    y = data.labels
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * model.weights @ model.weights)


def train_lr(data, cfg=None):
    """
    Fit a logistic regression with L-BFGS

    The loss is the summed log loss plus 0.5 * l2 * |w|^2, started from zero and
    stopped at gradient tolerance cfg.tol or cfg.max_iter iterations.
    """
    cfg = cfg or TrainConfig()
    _check_labels(data.labels)
    X, y = data.inputs, data.labels.astype(float)
    d = X.shape[1]

    def loss_and_grad(theta):
        w, b = theta[:d], theta[d]
        z = X @ w + b
        loss = np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * cfg.l2 * w @ w
        residual = expit(z) - y
        grad = np.empty_like(theta)
        grad[:d] = X.T @ residual + cfg.l2 * w
        grad[d] = residual.sum()
        return loss, grad

    result = minimize(
        loss_and_grad,
        np.zeros(d + 1),
        jac=True,
        method='L-BFGS-B',
        options={'gtol': cfg.tol, 'maxiter': cfg.max_iter},
    )
    return LogisticRegressionModel(weights=result.x[:d].copy(), bias=float(result.x[d]))


# MLP

def init_mlp(n_inputs, rng, n_outputs=2, hidden=HIDDEN_SIZES):
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases"""
    sizes = (n_inputs,) + tuple(hidden) + (n_outputs,)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return MlpModel(layers)


def _mlp_logits_numpy(model, X):
    h = X
    for W, b in model.layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = model.layers[-1]
    return h @ W + b


def _mlp_logits_torch(params, X):
    h = X
    for W, b in params[:-1]:
        h = torch.relu(h @ W + b)
    W, b = params[-1]
    return h @ W + b


def _holdout_split(m, fraction, rng):
    order = rng.permutation(m)
    n_hold = int(round(fraction * m)) if fraction > 0 else 0
    if n_hold == 0 or n_hold >= m:
        return order, order
    return order[n_hold:], order[:n_hold]


def fit_mlp(X, y, cfg, n_outputs=2, return_score=False):
    """
    Train an MLP on integer class labels 0..n_outputs-1

    Weight init, holdout split and batch order all come from cfg.seed, so two runs
    on the same data are bit-identical. Training stops after cfg.patience epochs
    without a strictly better holdout accuracy and restores the best weights.
    With return_score the best holdout accuracy is returned alongside the model.
    """
    rng = np.random.default_rng(cfg.seed)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    model = init_mlp(X.shape[1], rng, n_outputs=n_outputs)
    train_idx, hold_idx = _holdout_split(X.shape[0], cfg.holdout, rng)

    params = [
        (torch.tensor(W, dtype=torch.float64, requires_grad=True),
         torch.tensor(b, dtype=torch.float64, requires_grad=True))
        for W, b in model.layers
    ]
    flat = [p for pair in params for p in pair]
    if cfg.optimizer == 'adam':
        optimizer = torch.optim.Adam(flat, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    else:
        optimizer = torch.optim.SGD(flat, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    X_t = torch.from_numpy(X)
    y_t = torch.from_numpy(y).long()
    X_hold, y_hold = X_t[hold_idx], y_t[hold_idx]

    best_acc = -1.0
    best_layers = model.copy().layers
    stale = 0
    for epoch in range(cfg.max_epochs):
        if cfg.batch_size is None:
            batches = [train_idx]
        else:
            shuffled = rng.permutation(train_idx)
            batches = [shuffled[k:k + cfg.batch_size] for k in range(0, shuffled.size, cfg.batch_size)]
        for batch in batches:
            optimizer.zero_grad()
            loss = torch.nn.functional.cross_entropy(_mlp_logits_torch(params, X_t[batch]), y_t[batch])
            loss.backward()
            optimizer.step()

        with torch.no_grad():
            predicted = _mlp_logits_torch(params, X_hold).argmax(dim=1)
            acc = float((predicted == y_hold).double().mean())
        if acc > best_acc:
            best_acc = acc
            best_layers = [(W.detach().numpy().copy(), b.detach().numpy().copy()) for W, b in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    logger.debug(f"MLP stopped after {epoch + 1} epochs, holdout accuracy {best_acc:.3f}")
    if return_score:
        return MlpModel(best_layers), best_acc
    return MlpModel(best_layers)


def train_mlp(data, cfg=None):
    """Binary 20/10 MLP on a Dataset"""
    cfg = cfg or TrainConfig()
    _check_labels(data.labels)
    return fit_mlp(data.inputs, data.labels, cfg, n_outputs=2)


def train_model(kind, data, cfg=None):
    if kind == 'lr':
        return train_lr(data, cfg)
    if kind == 'mlp':
        return train_mlp(data, cfg)
    raise ValueError(f"Unknown model kind: {kind}")


# Prediction

def predict_proba(model, x):
    """
    Class probabilities for one record (shape (2,)) or a batch (shape (m, 2))

    LR: (1 - sigmoid(score), sigmoid(score)); MLP: softmax of the last layer.
    """
    X, single = _as_batch(model, x)
    if model.kind == 'lr':
        p1 = expit(X @ model.weights + model.bias)
        proba = np.column_stack([1.0 - p1, p1])
    else:
        proba = softmax(_mlp_logits_numpy(model, X), axis=1)
    return proba[0] if single else proba


def predict(model, x):
    return np.argmax(predict_proba(model, x), axis=-1)


def accuracy(model, data):
    return float(np.mean(predict(model, data.inputs) == data.labels))


def log_proba_gradients(model, x, target=1):
    """
    Gradient of log p(target | x) with respect to every weight, in flatten order
    """
    X, _ = _as_batch(model, x)
    X_t = torch.from_numpy(X[:1])
    if model.kind == 'lr':
        w = torch.tensor(model.weights, dtype=torch.float64, requires_grad=True)
        b = torch.tensor(model.bias, dtype=torch.float64, requires_grad=True)
        z = X_t @ w + b
        logits = torch.stack([torch.zeros_like(z), z], dim=1)
        tensors = [w, b]
    else:
        params = [
            (torch.tensor(W, dtype=torch.float64, requires_grad=True),
             torch.tensor(b, dtype=torch.float64, requires_grad=True))
            for W, b in model.layers
        ]
        logits = _mlp_logits_torch(params, X_t)
        tensors = [p for pair in params for p in pair]
    log_p = torch.log_softmax(logits, dim=1)[0, target]
    grads = torch.autograd.grad(log_p, tensors)
    return np.concatenate([g.detach().numpy().ravel() for g in grads])


# Weights

def flatten_weights(model):
    """LR: (w..., b); MLP: W1, b1, W2, b2, W3, b3 row-major"""
    if model.kind == 'lr':
        return np.concatenate([model.weights, [model.bias]])
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in model.layers])


def unflatten_weights(model, vector):
    """Model of the same shape as `model` holding `vector`"""
    vector = np.asarray(vector, dtype=float)
    if vector.size != flatten_weights(model).size:
        raise ShapeMismatch("Weight vector does not match the model shape")
    if model.kind == 'lr':
        return LogisticRegressionModel(vector[:-1].copy(), float(vector[-1]))
    layers, offset = [], 0
    for W, b in model.layers:
        W_new = vector[offset:offset + W.size].reshape(W.shape)
        offset += W.size
        b_new = vector[offset:offset + b.size].copy()
        offset += b.size
        layers.append((W_new.copy(), b_new))
    return MlpModel(layers)


def permute_hidden(mlp, layer, order):
    """Reorder the neurons of hidden layer `layer` together with their outgoing weights"""
    order = np.asarray(order, dtype=int)
    out = mlp.copy()
    W, b = out.layers[layer]
    out.layers[layer] = (W[:, order], b[order])
    W_next, b_next = out.layers[layer + 1]
    out.layers[layer + 1] = (W_next[order, :], b_next)
    return out


def canonicalize(mlp):
    """Sort each hidden layer's neurons by (sum of incoming weights + bias), ties by index"""
    out = mlp.copy()
    for layer in range(len(out.layers) - 1):
        W, b = out.layers[layer]
        order = np.argsort(W.sum(axis=0) + b, kind='stable')
        out = permute_hidden(out, layer, order)
    return out


def canonical_weights(mlp):
    if mlp.kind != 'mlp':
        return flatten_weights(mlp)
    return flatten_weights(canonicalize(mlp))


def n_parameters(model):
    return int(flatten_weights(model).size)
