import numpy as np
import pytest
import torch

from r2p.bank import build_bank, futures_for_bank
from r2p.data import SceneBatch
from r2p.scenes import SceneDims, generate_dataset, three_intent_mix

torch.set_num_threads(1)

DESK_DIMS = SceneDims(n_agents=4, n_lanes=16, nodes_per_lane=10, n_lights=1,
                      t_history=10, t_future=30)


@pytest.fixture(scope="session")
def desk_scenes():
    return generate_dataset(96, 0, three_intent_mix(0.1), DESK_DIMS)


@pytest.fixture(scope="session")
def desk_bank(desk_scenes):
    return build_bank(futures_for_bank(desk_scenes), 8, 8, mode="clustered",
                      seed=0, d_emb=32)


@pytest.fixture(scope="session")
def desk_batch(desk_scenes):
    return SceneBatch.from_scenes(desk_scenes[:6])


def random_bank(b=16, t_f=12, d_emb=8, seed=0):
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, 0.6, size=(b, t_f, 2))
    trajs = np.cumsum(steps, axis=1)
    trajs = np.concatenate([np.zeros((b, 1, 2)), trajs[:, :-1]], axis=1)
    from r2p.bank import MotionBank, embed_trajectories
    emb = embed_trajectories(trajs, seed, d_emb).astype(np.float32)
    return MotionBank(trajs.astype(np.float32), emb, 1, b, "random", seed)
