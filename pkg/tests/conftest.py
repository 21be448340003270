import numpy as np
import pytest

from twinloop import datagen, detector, pipeline


SMALL_TIME_STEPS = 10


@pytest.fixture(scope="session")
def small_dataset():
    return datagen.generate(datagen.GenConfig(n_samples=1500, event_rate=0.05, seed=21))


@pytest.fixture(scope="session")
def small_batches(small_dataset):
    norm = pipeline.normalize(small_dataset, window=100)
    train_d, val_d, test_d = datagen.split(norm, (0.6, 0.2, 0.2))
    return (
        pipeline.window(train_d, SMALL_TIME_STEPS, 1),
        pipeline.window(val_d, SMALL_TIME_STEPS, 1),
        pipeline.window(test_d, SMALL_TIME_STEPS, 1),
    )


@pytest.fixture(scope="session")
def small_spec():
    return detector.DetectorSpec(
        conv_filters=(8, 16),
        recurrent_units=(16, 8),
        attention_dim=8,
        dense_units=8,
        dropout=0.2,
    )


@pytest.fixture(scope="session")
def trained_small_model(small_batches, small_spec):
    train_b, val_b, _ = small_batches
    model = detector.DetectorModel(
        small_spec, (SMALL_TIME_STEPS, train_b.n_features), seed=7
    )
    cfg = detector.TrainConfig(max_epochs=8, early_stop_patience=8, seed=7)
    model, history = detector.train(model, train_b, val_b, cfg)
    return model, history
