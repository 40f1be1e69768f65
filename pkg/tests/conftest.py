import pytest

from budgetsplat.synthetic import SyntheticSceneSpec, generate_scene
from budgetsplat.train import TrainConfig

SMALL_SPEC = dict(resolution=24, n_cameras=4, n_frames=4, n_boxes=2, n_spheres=1)


def short_config(**kw):
    base = dict(n_target=64, phase_iters=(30, 200, 40), densify_interval=40)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    return generate_scene(SyntheticSceneSpec(**SMALL_SPEC), tmp_path_factory.mktemp("small"))


# criterion number -> (name, passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
