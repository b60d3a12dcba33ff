"""Python access to the DNE core: sampling, smoothing, attacks and experiment recipes."""

import json

from ._dne import (
    Classifier,
    LoadError,
    ParameterError,
    ShapeError,
    Spec,
    SynonymGraph,
    Workspace,
    cbwd_weight,
    default_spec,
    derive_seed,
    evaluate_clean,
    generate_corpus,
    genetic_attack,
    load_checkpoint,
    load_spec,
    load_workspace,
    pwws_attack,
    sample_dirichlet,
    smooth_predict,
    train_model,
)
from . import _dne


def run_experiment(spec):
    """Train and attack one configuration; returns its summary row."""
    return json.loads(_dne.run_experiment(spec))


def run_comparison(spec):
    return json.loads(_dne.run_comparison(spec))


def run_ablation(spec):
    return json.loads(_dne.run_ablation(spec))


def run_sweep(spec, alphas=(0.1, 1.0), lambdas=(0.02, 0.1, 0.5)):
    return json.loads(_dne.run_sweep(spec, list(alphas), list(lambdas)))
