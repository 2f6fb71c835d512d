"""Shared fixtures; trained models are cached under tests/_artifacts.

Training the default desk-scale codec takes minutes, so checkpoints are
keyed by every config involved plus a digest of the numeric core. Set
PCLINK_RETRAIN=1 to force retraining.
"""

import hashlib
import os
from pathlib import Path

import pytest

from pclink import pipeline
from pclink.codec import Codec, CodecConfig, TrainConfig

ARTIFACTS = Path(__file__).parent / "_artifacts"
_SRC = Path(__file__).resolve().parents[1] / "src" / "pclink"


def _core_digest() -> str:
    h = hashlib.sha256()
    for name in ("tensornet.py", "codec.py"):
        h.update((_SRC / name).read_bytes())
    return h.hexdigest()[:12]


def train_cached(tag: str, model_cfg: CodecConfig, model_seed: int,
                 train_cfg: TrainConfig, corpus_cfg: pipeline.CorpusConfig) -> Codec:
    ARTIFACTS.mkdir(exist_ok=True)
    key = hashlib.sha256(
        repr((model_cfg, model_seed, train_cfg, corpus_cfg, _core_digest())).encode()
    ).hexdigest()[:16]
    path = ARTIFACTS / f"{tag}-{key}.ckpt"
    if path.exists() and not os.environ.get("PCLINK_RETRAIN"):
        return Codec.load(path.read_bytes())
    occupancy = pipeline.training_occupancy(corpus_cfg)
    codec = Codec(model_cfg, seed=model_seed)
    codec.train(occupancy, train_cfg)
    path.write_bytes(codec.save())
    return codec


@pytest.fixture(scope="session")
def desk_codec() -> Codec:
    """The default desk-scale model trained with all-default settings."""
    return train_cached("desk", CodecConfig(), 0, TrainConfig(), pipeline.CorpusConfig())


@pytest.fixture(scope="session")
def desk_eval_cubes():
    """Held-out cubes (seeds unseen in training), capped for sweep speed."""
    shapes = pipeline.eval_shapes()
    cubes = [c for s in shapes for c in s.cubes]
    keep = pipeline._even_subset(len(cubes), 24)
    return [cubes[i] for i in keep]
