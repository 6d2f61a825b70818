from pytest import fixture

import logging
from pathlib import Path
from shutil import rmtree
from tempfile import gettempdir, mkdtemp

import numpy as np

from hhscore.config import ExperimentConfig
from hhscore.households import SyntheticConfig, generate_synthetic_corpus


logging.basicConfig(level=logging.DEBUG, filename=str(Path(gettempdir()) / "hhscore_tests.log"),
                    filemode="w")


@fixture()
def workdir():
    """Temporary directory removed after the test."""
    path = mkdtemp(prefix="hhscore_test_")
    yield Path(path)
    rmtree(path)


@fixture()
def rng():
    return np.random.default_rng(1234)


@fixture(scope="session")
def small_synthetic():
    return SyntheticConfig(
        speaker_count=24,
        utterances_per_speaker=30,
        dimension=16,
        identity_subspace_dim=4,
        within_speaker_noise=0.5,
        household_nuisance_scale=0.6,
        share_nuisance=True,
        environment_size=4,
        seed=7,
    )


@fixture(scope="session")
def small_corpus(small_synthetic):
    return generate_synthetic_corpus(small_synthetic)


@fixture()
def small_experiment(small_synthetic, workdir):
    """Experiment settings that run in a couple of seconds."""
    cfg = ExperimentConfig(
        output_dir=str(workdir / "run"),
        household_size=2,
        household_count=3,
        modes=["baseline", "local_only", "fused"],
        adapted_dim=8,
        train_max=10,
        guest_count=20,
        seed=3,
    )
    cfg.synthetic = small_synthetic
    cfg.train.epochs = 2
    cfg.train.batch_size = 256
    return cfg
