import numpy as np
import pytest

from crossemo.store import EMOTIONS, EmbeddingRecord, make_stratified_split
from crossemo.synthetic import coupled_config, generate_synthetic_manifest


def make_record(
    utterance_id="speech-neutral-0000",
    domain="speech",
    emotion="neutral",
    num_layers=2,
    frames=3,
    dim=4,
    seed=0,
    model_tag="test",
):
    rng = np.random.default_rng(seed)
    return EmbeddingRecord(
        utterance_id=utterance_id,
        domain=domain,
        emotion=emotion,
        layers=rng.normal(size=(num_layers, frames, dim)).astype(np.float32),
        model_tag=model_tag,
    )


def make_corpus(num_layers=2, frames=3, dim=4, per_class=2, seed=0):
    """One small record per (domain, emotion, index); all strata populated."""
    records = []
    for domain in ("speech", "music"):
        for emotion in EMOTIONS:
            for i in range(per_class):
                records.append(
                    make_record(
                        utterance_id=f"{domain}-{emotion}-{i:04d}",
                        domain=domain,
                        emotion=emotion,
                        num_layers=num_layers,
                        frames=frames,
                        dim=dim,
                        seed=hash((domain, emotion, i)) % (2**32),
                    )
                )
    return records


@pytest.fixture
def small_corpus():
    return make_corpus()


@pytest.fixture
def coupled_fixture():
    """Separable, fully coupled corpus with its manifest (seed 11)."""
    config = coupled_config(dim=8, frames=3, num_layers=2, count_per_class=15)
    records, manifest = generate_synthetic_manifest(config, 11)
    return records, manifest


@pytest.fixture
def split_manifest(small_corpus):
    return make_stratified_split(small_corpus, seed=5)
