import hashlib

import numpy as np
import pytest

from budgetsplat.camera import Dataset
from budgetsplat.synthetic import SyntheticSceneSpec, build_primitives, generate_scene

from conftest import SMALL_SPEC


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def frames_of(ds, v):
    return [ds.image(v, f) for f in range(ds.n_frames)]


def test_static_scene_frames_are_identical(tmp_path):
    ds = generate_scene(SyntheticSceneSpec(**SMALL_SPEC, n_movers=0), tmp_path)
    for v in ds.views:
        fr = frames_of(ds, v.view_id)
        assert all(np.array_equal(fr[0], x) for x in fr[1:])


def test_zero_amplitude_mover_is_time_invariant(tmp_path):
    ds = generate_scene(SyntheticSceneSpec(**SMALL_SPEC, mover_amplitude=0.0), tmp_path)
    for v in ds.views:
        fr = frames_of(ds, v.view_id)
        assert all(np.array_equal(fr[0], x) for x in fr[1:])


def test_mover_changes_frames(tmp_path):
    ds = generate_scene(SyntheticSceneSpec(**SMALL_SPEC), tmp_path)
    fr = frames_of(ds, ds.held_out)
    assert any(not np.array_equal(fr[0], x) for x in fr[1:])


def test_movers_do_not_disturb_static_layout():
    a = build_primitives(SyntheticSceneSpec(n_movers=0, seed=3))
    b = build_primitives(SyntheticSceneSpec(n_movers=1, seed=3))
    assert len(b) == len(a) + 1
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.center, q.center)


def test_same_seed_gives_identical_bytes(tmp_path):
    spec = SyntheticSceneSpec(**SMALL_SPEC, noise=0.01, seed=5)
    generate_scene(spec, tmp_path / "a")
    generate_scene(spec, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_different_seed_differs(tmp_path):
    generate_scene(SyntheticSceneSpec(**SMALL_SPEC, seed=1), tmp_path / "a")
    generate_scene(SyntheticSceneSpec(**SMALL_SPEC, seed=2), tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")


def test_dataset_reload(tmp_path):
    ds = generate_scene(SyntheticSceneSpec(**SMALL_SPEC), tmp_path)
    back = Dataset.load(tmp_path)
    assert back.n_frames == ds.n_frames and back.held_out == 0
    assert len(back.train_views) == len(ds.views) - 1
    np.testing.assert_array_equal(back.bounds, ds.bounds)
    assert back.extra["scene"]["seed"] == 0


def test_missing_frame_fails(tmp_path):
    generate_scene(SyntheticSceneSpec(**SMALL_SPEC), tmp_path)
    (tmp_path / "frames" / "v01_t0003.png").unlink()
    with pytest.raises(FileNotFoundError):
        Dataset.load(tmp_path)


@pytest.mark.parametrize("kw", [dict(n_cameras=2), dict(n_frames=1)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SyntheticSceneSpec(**kw)
