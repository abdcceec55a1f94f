import numpy as np
import pytest

from baggrasp import config, learned, sim
from baggrasp.learned import LabeledScene, preprocess


@pytest.fixture(scope="session")
def cfg():
    return config.PipelineConfig()


def make_dataset(seed0: int, n: int, cfg=None) -> list:
    """n labeled 36x64 training scenes from consecutive generator seeds."""
    cfg = cfg or config.PipelineConfig()
    out, seed = [], seed0
    while len(out) < n:
        scene = sim.generate_scene(seed, cfg)
        seed += 1
        if scene.label is None:
            continue
        rgb, dep, frame = preprocess(scene.rgb, scene.depth)
        px, py = learned.full_to_net_px(scene.label[0][0], scene.label[0][1], frame)
        if not (-0.5 <= px <= learned.IN_W - 0.5 and -0.5 <= py <= learned.IN_H - 0.5):
            continue
        out.append(LabeledScene(rgb, dep, (px, py), scene.label[1]))
    return out


def random_rotation(rng, max_angle=np.pi - 0.01) -> np.ndarray:
    from baggrasp import so3
    w = rng.normal(size=3)
    w *= rng.uniform(0.0, max_angle) / np.linalg.norm(w)
    return so3.exp_so3(w)
