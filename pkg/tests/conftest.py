import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prefplan.attr_model import AttrModelConfig, annotate, train_attr_model
from prefplan.data import build_feedback, collect, default_grid, sample_pairs, segment_dataset
from prefplan.diffusion import DiffusionConfig, train_diffusion, trajectory_features
from prefplan.env import ATTRIBUTE_NAMES, default_schema
from prefplan.planner import PipelineModels


@pytest.fixture(scope="session")
def tiny_pipeline():
    """A fully trained (but tiny) pipeline for planner/service/eval tests.

    Quality is irrelevant here; contracts and shapes are what matter.
    """
    schema = default_schema()
    ds = collect(grid=default_grid()[::2], steps_per_policy=120, seed=9, episodes_per_policy=1)
    segs = segment_dataset(ds, H=8)
    pairs = sample_pairs(len(segs), 160, seed=9)
    records = build_feedback(segs, pairs, schema)

    attr_cfg = AttrModelConfig(embed_dim=32, heads=2, layers=1, ff_dim=32, dropout=0.1,
                               ensembles=2, batch=16, grad_steps=60)
    attr, _ = train_attr_model(records, segs, attr_cfg, seed=9, attr_names=ATTRIBUTE_NAMES)

    strengths = annotate(segs, attr)
    feats = trajectory_features(segs.states, segs.actions)
    diff_cfg = DiffusionConfig(embed_dim=32, heads=2, blocks=2, mlp_ratio=2, dropout=0.1,
                               horizon=8, batch=16, grad_steps=150, timesteps=50)
    diffusion, _ = train_diffusion(feats, strengths, diff_cfg, seed=9,
                                   attr_names=ATTRIBUTE_NAMES)
    return {
        "models": PipelineModels(attr=attr, diffusion=diffusion),
        "schema": schema,
        "dataset": ds,
        "segments": segs,
        "records": records,
    }
