import pytest

from msd_trainer import TrainConfig, train


@pytest.fixture(scope="session")
def spiral_csv(tmp_path_factory):
    """Spiral dataset CSV in the external-interface format (header x,y,label)."""
    from modeseek import build_spiral, sample
    from modeseek.mixtures import dataset_to_csv
    path = tmp_path_factory.mktemp("data") / "spiral.csv"
    dataset_to_csv(sample(build_spiral(), 10_000, seed=0), path)
    return str(path)


@pytest.fixture(scope="session")
def spiral_weights(tmp_path_factory, spiral_csv):
    """Weight file from a full spiral training run, shared across tests."""
    out = str(tmp_path_factory.mktemp("model") / "spiral.msdw")
    result = train(TrainConfig(dataset_csv=spiral_csv, out_weights=out,
                               steps=12_000, seed=0))
    assert result.weight_path == out
    return out
