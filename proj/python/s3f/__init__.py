# SPDX-License-Identifier: Apache-2.0
"""Voxel and point-cloud transformer tokenizers with 2D ViT weight transfer."""

import json

from ._s3f import (
    S3fError,
    decode_binvox,
    default_config,
    encode_binvox,
    farthest_point_sample,
    interpolate,
    kl_divergence,
    knn,
    load_archive,
    make_voxels,
    resample_pos_embed,
    save_archive,
    token_count,
    tokenize_voxels,
    validate_contract,
)
from . import _s3f


def config(**overrides):
    """Default run configuration as a dict, updated with `overrides`."""
    cfg = json.loads(default_config())
    cfg.update(overrides)
    return cfg


def train(cfg, precision=""):
    return _s3f.train(json.dumps(cfg), precision)


def evaluate(cfg, checkpoint, precision=""):
    return json.loads(_s3f.evaluate(json.dumps(cfg), str(checkpoint), precision))


def inspect_tokens(cfg, input, precision=""):
    return _s3f.inspect_tokens(json.dumps(cfg), input, precision)


__all__ = [
    "S3fError",
    "config",
    "decode_binvox",
    "encode_binvox",
    "evaluate",
    "farthest_point_sample",
    "inspect_tokens",
    "interpolate",
    "kl_divergence",
    "knn",
    "load_archive",
    "make_voxels",
    "resample_pos_embed",
    "save_archive",
    "token_count",
    "tokenize_voxels",
    "train",
    "validate_contract",
]
