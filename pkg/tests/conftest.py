import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
    deadline=None,
)
settings.load_profile("ci")


def rel_err(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@pytest.fixture(scope="session")
def mini_pipeline():
    """A small trained pipeline shared by integration-style tests."""
    from brains.preprocess import fit_preprocess
    from brains.retrieval import build_index
    from brains.synthetic import GeneratorConfig, generate_synthetic, split_corpus
    from brains.training import TrainConfig, TrainableModel, train

    records = generate_synthetic(GeneratorConfig(n=300), seed=5)
    train_split, val_split, test_split = split_corpus(records, (0.8, 0.1, 0.1), 5)
    stats = fit_preprocess(train_split)
    model = TrainableModel.init(seed=1)
    index = build_index(train_split, model.encoder, stats)
    cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=1e-2, seed=1)
    checkpoint, history = train(train_split, val_split, cfg, index, stats, model)
    return {
        "records": records,
        "train": train_split,
        "val": val_split,
        "test": test_split,
        "stats": stats,
        "index": index,
        "checkpoint": checkpoint,
        "history": history,
        "store": {r.case.id: r for r in train_split},
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
