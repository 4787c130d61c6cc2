"""Python interface to the counterfactual hidden Markov model core.

Configurations are plain dicts with the same schema as the command-line JSON file.
"""

import json

from . import _core
from ._core import Error, Record, auroc, read_cohort, write_cohort

__version__ = _core.__version__

__all__ = [
    "Error",
    "Record",
    "auroc",
    "counterfactual_probabilities",
    "fit",
    "impute",
    "log_likelihood",
    "metrics",
    "read_cohort",
    "replicate",
    "resolve_config",
    "simulate",
    "write_cohort",
]


def _dump(value):
    if value is None:
        return ""
    return value if isinstance(value, str) else json.dumps(value)


def resolve_config(config=None):
    """Return the fully resolved configuration with every default filled in."""
    return json.loads(_core.resolve_config(_dump(config)))


def simulate(config=None, counterfactual_world=False):
    """Simulate a cohort. Returns (records, truth) where truth holds latent stages per record."""
    records, truth = _core.simulate(_dump(config), counterfactual_world)
    return records, json.loads(truth)


def fit(records, horizon, config=None):
    """Maximum-likelihood fit. Returns the fit result, including the estimate under ``params``."""
    return json.loads(_core.fit(records, horizon, _dump(config)))


def log_likelihood(params, records, horizon):
    return _core.log_likelihood(_dump(params), records, horizon)


def counterfactual_probabilities(params, records, horizon, reference):
    return _core.counterfactual_probabilities(_dump(params), records, horizon, list(reference))


def impute(params, records, horizon, reference, seed, per_stratum=False):
    return json.loads(_core.impute(_dump(params), records, horizon, list(reference), seed, per_stratum))


def metrics(pred, outcome):
    return json.loads(_core.metrics(list(pred), list(outcome)))


def replicate(config=None):
    """Run the replication study and return its parameter and metric summaries."""
    return json.loads(_core.replicate(_dump(config)))
