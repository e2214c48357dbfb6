"""Locate-then-edit knowledge editing on toy transformers."""

import json

from . import _adrl
from ._adrl import Error, Model, apply_rank_one, avg_score, patch_attention, select_drift_heads, trace

__all__ = [
    "Error",
    "Model",
    "apply_rank_one",
    "avg_score",
    "edit",
    "evaluate",
    "gen_world",
    "generate_world",
    "patch_attention",
    "run_experiment",
    "select_drift_heads",
    "trace",
    "train",
]


def generate_world(seed, **sizes):
    """World as a dict; keyword sizes override the defaults."""
    return json.loads(_adrl.world_json(seed, json.dumps(sizes)))


def gen_world(out_dir, seed=1, n_cases=100, case_seed=0, **sizes):
    """Writes world.json, vocab.txt, corpus.txt and cases.jsonl; returns the world dict."""
    world = generate_world(seed, **sizes)
    _adrl.gen_world(str(out_dir), json.dumps(world), n_cases, case_seed)
    return world


def train(world_dir, out, model=None, train=None):
    """Trains on a world directory, saves the checkpoint and its sidecars; returns the recall report."""
    config = {}
    if model is not None:
        config["model"] = model
    if train is not None:
        config["train"] = train
    return json.loads(_adrl.train(str(world_dir), json.dumps(config), str(out)))


def edit(model, case, corpus, cov_samples=20000, **plan):
    """Applies one edit; returns (edited Model, result dict)."""
    edited, result = _adrl.edit(model, json.dumps(case), json.dumps(plan), str(corpus), cov_samples)
    return edited, json.loads(result)


def evaluate(model, cases, with_fluency=True, threads=1):
    """Metric report for a list of case dicts."""
    return json.loads(_adrl.evaluate(model, json.dumps(cases), with_fluency, threads))


def run_experiment(spec, out_dir):
    """Runs a full experiment spec; returns the summary table as CSV text."""
    return _adrl.run_experiment(json.dumps(spec), str(out_dir))
