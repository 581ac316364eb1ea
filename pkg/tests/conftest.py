import pytest

from teocc.harness.config import TrainConfig, config_from_flat
from teocc.harness.data import EpisodeStore
from teocc.scenesim import generate_episode

# 16 x 16 x 8 grid, three history frames, narrow channels.
TINY = dict(
    x_range=[-3.2, 3.2], y_range=[-3.2, 3.2], z_range=[-0.8, 2.4], voxel_size=0.4,
    num_history=3, num_frames=6, img_channels=8, radar_channels=4, fused_channels=8, head_hidden=8,
    encoder_hidden=8, decoder_channels=[8, 8, 8], decoder_blocks=1, steps=4, batch_size=2, lr=0.01,
    train_episodes=3, val_episodes=2, building_offset=[4.0, 5.0], sidewalk_offset=[2.6, 3.2],
    car_offset=[1.4, 2.0], num_buildings=2, num_barriers=2, num_cars=2, num_pedestrians=2, log_every=1,
)


def tiny_config(**changes) -> TrainConfig:
    return config_from_flat({**TINY, **changes})


@pytest.fixture(scope="session")
def tiny_stores():
    cfg = tiny_config()
    train = EpisodeStore([generate_episode(cfg.sim, s) for s in (11, 12, 13)])
    val = EpisodeStore([generate_episode(cfg.sim, s) for s in (21, 22)])
    return train, val


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
