import pytest

from layersim.oracle import SceneConfig, generate_sequence

# a quick two-layer scene: 5x5 grids, a sphere under the cloth moving sideways
SMALL_SCENE = dict(grids=[[5, 5], [5, 5]], spacing=0.25, frames=8, body_samples=400,
                   capsules=[{"a": [0, 0, 0], "b": [0, 0, 0], "radius": 0.3}],
                   body_velocity=[0.2, 0.0, 0.0], patch_size=2, seed=5)


@pytest.fixture(scope="session")
def small_seq():
    return generate_sequence(SceneConfig(**SMALL_SCENE))
