"""Shared fixtures.

The expensive pieces (synthetic corpus on disk, a desk-scale trained model)
are session-scoped so the acceptance tests and the harness tests can share
them instead of retraining.
"""

import pytest

from convsep.harness import RunConfig, cmd_synth_data, cmd_train


def desk_config(data_dir) -> RunConfig:
    """The desk-scale training configuration used throughout the tests:
    a reduced network and short segments, sized to train in a couple of
    minutes while still separating the held-out speakers clearly."""
    return RunConfig(
        data_dir=str(data_dir),
        net_preset="small",
        embedding_dim=8,
        net_channels=12,
        net_dilations=(1, 2, 4, 8),
        segment_frames=100,
        batch_size=2,
        steps=400,
        checkpoint_every=200,
        kmeans_restarts=4,
    )


@pytest.fixture(scope="session")
def desk_cfg(tmp_path_factory):
    """Config plus synthesized corpus (train speakers and a test manifest)."""
    data = tmp_path_factory.mktemp("data")
    cfg = desk_config(data)
    cmd_synth_data(cfg, n_test=12, duration=20.0)
    return cfg


@pytest.fixture(scope="session")
def trained_model(desk_cfg, tmp_path_factory):
    """A network trained at desk scale; returns (network, config, run_dir)."""
    run_dir = tmp_path_factory.mktemp("runs") / "desk"
    net, _ = cmd_train(desk_cfg, run_dir)
    return net, desk_cfg, run_dir
