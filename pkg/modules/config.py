"""
Experiment configuration
Environment defaults (.env) plus the JSON/CLI experiment config with validation
"""
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import os
from pathlib import Path

from dotenv import load_dotenv

from modules.errors import ConfigError

load_dotenv()

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Environment defaults
DEFAULT_WORKERS = int(os.getenv('CORRLEAK_WORKERS', '1'))
DEFAULT_SEED = int(os.getenv('CORRLEAK_SEED', '0'))
OUTPUT_DIR = os.getenv('CORRLEAK_OUTPUT_DIR', 'results')
LOG_LEVEL = os.getenv('CORRLEAK_LOG_LEVEL', 'INFO')
DATA_DIR = os.getenv('CORRLEAK_DATA_DIR', 'data')

EXPERIMENT_KINDS = (
    'grid',
    'increasing_n',
    'mitigation_queries',
    'mitigation_precision',
    'real_data',
    'aia',
    'extract_constraints',
    'marginal_granularity',
)
DATASET_NAMES = ('fifa19', 'communities', 'musk', 'csv', 'standin')

# Desk scale keeps a run on one machine; full scale runs the complete experiment sizes
DESK_K = 1000
DESK_TARGETS = 200
FULL_TARGETS = 1000
FULL_GRID_TARGETS = 1500


def full_K(n):
    return 5000 if n <= 5 else 10000


@dataclass
class ExperimentConfig:
    """
    One experiment run

    K and targets left as None are filled from the scale (desk or full).
    Synthetic experiments use standard-normal marginals and datasets of m records;
    real-data experiments read `dataset` (or the synthetic stand-in).
    """
    kind: str = 'increasing_n'
    n: int = 3
    B: int = 3
    K: int = None
    Q: int = 100
    targets: int = None
    model_kind: str = 'lr'
    scenario: str = 'S2'
    m: int = 1000
    seed: int = DEFAULT_SEED
    output: str = OUTPUT_DIR
    workers: int = DEFAULT_WORKERS
    full_scale: bool = False

    # grid
    resolution: int = 200
    targets_per_cell: int = 100
    model_based_cells: int = 0
    cell_min_abs: float = 0.0
    folds: int = 5

    # increasing_n
    ns: list = field(default_factory=lambda: [3, 4, 5, 6])

    # mitigations
    queries: list = field(default_factory=lambda: [1, 5, 10, 50, 100])
    precisions: list = field(default_factory=lambda: ['full', 'rounded(4)', 'rounded(2)', 'rounded(1)', 'label_only'])
    model_manifest: str = None

    # real data
    dataset: str = 'standin'
    dataset_path: str = None
    columns: list = None
    label_column: str = None
    threshold_rule: str = 'median'
    collections: int = 100
    B_values: list = field(default_factory=lambda: [3, 5])
    max_records: int = None
    G: int = 100
    G_values: list = field(default_factory=lambda: [2, 5, 10, 50, 100])

    # extraction
    q_tilde: list = field(default_factory=lambda: [10, 50, 100, 500, 1000])
    trials: int = 100

    # aia
    records: int = 200
    S_prime: int = 1000
    m_init: float = 2.0
    delta: float = 0.5
    aia_correlation: float = 0.0
    aia_targets: int = 5
    source: str = 'synthetic'

    # model training / attack knobs
    learning_rate: float = 0.05
    batch_size: int = None
    feature_kind: str = 'black_box'
    seed_known: bool = False
    shift_S: int = 100
    shift_M: int = 10
    shift_e: float = 0.01

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            with open(path) as f:
                values = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"Unknown experiment kind: {self.kind}")
        if self.scenario not in ('S1', 'S2', 'S3'):
            raise ConfigError(f"Unknown scenario: {self.scenario}")
        if self.model_kind not in ('lr', 'mlp'):
            raise ConfigError(f"Unknown model kind: {self.model_kind}")
        if self.dataset not in DATASET_NAMES:
            raise ConfigError(f"Unknown dataset: {self.dataset}")
        if self.feature_kind not in ('black_box', 'weights', 'canonical', 'combined'):
            raise ConfigError(f"Unknown feature kind: {self.feature_kind}")
        if self.n < 2 or (self.kind != 'grid' and self.n < 3):
            raise ConfigError(f"n={self.n} is too small")
        if self.kind == 'grid' and self.n != 3:
            raise ConfigError("The grid experiment needs n=3")
        if self.kind == 'increasing_n' and any(not 3 <= n <= 10 for n in self.ns):
            raise ConfigError("increasing_n supports n in 3..10")
        if self.kind == 'grid' and self.resolution < 2:
            raise ConfigError("Grid resolution must be at least 2")
        if self.source not in ('synthetic', 'dataset'):
            raise ConfigError(f"Unknown source: {self.source}")
        for name in ('B', 'Q', 'm', 'targets_per_cell', 'collections', 'trials', 'records', 'S_prime', 'G',
                     'aia_targets', 'folds'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ('K', 'targets'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.B < 2 or any(b < 2 for b in self.B_values):
            raise ConfigError("B must be at least 2")
        if self.workers < 1 and self.workers != -1:
            raise ConfigError("workers must be >= 1 (or -1 for all cores)")
        if self.m_init <= 0 or self.delta <= 0:
            raise ConfigError("AIA resolutions must be positive")
        if not -1.0 <= self.aia_correlation <= 1.0:
            raise ConfigError("aia_correlation must be in [-1, 1]")
        if not 0.0 <= self.cell_min_abs < 1.0:
            raise ConfigError("cell_min_abs must be in [0, 1)")

    def shadow_count(self, n=None):
        if self.K is not None:
            return self.K
        return full_K(n or self.n) if self.full_scale else DESK_K

    def target_count(self):
        if self.targets is not None:
            return self.targets
        if not self.full_scale:
            return DESK_TARGETS
        return FULL_GRID_TARGETS if self.kind == 'grid' else FULL_TARGETS

    def output_dir(self):
        return Path(self.output)

    def to_dict(self):
        return asdict(self)
