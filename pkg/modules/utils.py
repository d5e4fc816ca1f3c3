"""
Utility functions used across modules
Seed discipline, float formatting and accuracy confidence intervals
"""
import zlib
from datetime import datetime

import numpy as np

# Stage codes for the counter-based seed split
STAGES = {
    'target': 0,
    'dataset': 1,
    'train': 2,
    'shadow': 3,
    'query': 4,
    'meta': 5,
    'interval': 6,
    'shift': 7,
    'model_less': 8,
    'aia': 9,
    'probe': 10,
    'collection': 11,
    'records': 12,
    'baseline': 13,
}


def _key_part(part):
    if isinstance(part, str):
        return STAGES.get(part, zlib.crc32(part.encode('utf-8')))
    return int(part)


def child_seed_sequence(master_seed, experiment, *keys):
    """
    Derive a SeedSequence keyed on (experiment, index..., stage...)

    The same key always yields the same stream, whichever worker asks for it
    and in whatever order, which is what makes reports byte-identical.
    """
    spawn_key = (zlib.crc32(experiment.encode('utf-8')),) + tuple(_key_part(k) for k in keys)
    return np.random.SeedSequence(int(master_seed), spawn_key=spawn_key)


def child_rng(master_seed, experiment, *keys):
    """Random generator for one (experiment, keys) slot"""
    return np.random.default_rng(child_seed_sequence(master_seed, experiment, *keys))


def child_seed(master_seed, experiment, *keys):
    """Integer seed (32 bits) for one (experiment, keys) slot"""
    return int(child_seed_sequence(master_seed, experiment, *keys).generate_state(1)[0])


def spawn_seed_sequences(rng, count):
    """Split a generator into `count` independent seed sequences"""
    base = int(rng.integers(0, 2**63 - 1))
    return np.random.SeedSequence(base).spawn(count)


def spawn_rngs(rng, count):
    """Split a generator into `count` independent generators"""
    return [np.random.default_rng(seq) for seq in spawn_seed_sequences(rng, count)]


def accuracy_ci(correct):
    """
    Mean accuracy with a 95% normal-approximation half-width

    Args:
        correct: iterable of booleans (one per target)

    Returns:
        (accuracy, half_width) with half_width = 1.96 * sqrt(p(1-p)/T)
    """
    values = np.asarray(list(correct), dtype=float)
    if values.size == 0:
        return float('nan'), float('nan')
    p = float(values.mean())
    half = 1.96 * float(np.sqrt(p * (1.0 - p) / values.size))
    return p, half


def format_duration(seconds):
    """Format a wall-clock duration as HH:MM:SS.mmm"""
    hours = int(seconds // 3600)
    minutes = int((seconds % 3600) // 60)
    secs = int(seconds % 60)
    milliseconds = int((seconds % 1) * 1000)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}.{milliseconds:03d}"


def timestamp():
    """ISO timestamp for summaries (never written into report.csv)"""
    return datetime.now().isoformat(timespec='seconds')
