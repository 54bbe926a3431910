import json
import warnings

import numpy as np
import pytest

from motionbits.errors import SceneSpecError
from motionbits.flowio import FLOW_BWD_DIR, MASK_DIR, frame_path, read_flow, read_labels
from motionbits.scene import (Body, SamplerParams, SceneSpec, body_twist, load_scene_spec,
                              render_scene, sample_scene, twist_distance, twist_length_scale,
                              write_scene)


def one_disc(frames=3, step=(2.0, 0.0), rot=0.0):
    return SceneSpec.from_dict({
        "width": 64, "height": 48, "frames": frames,
        "bodies": [{"shape": {"type": "disc", "radius": 8}, "start": [0, 30, 24],
                    "step": {"rotation": rot, "translation": list(step)}}]})


def test_one_body_labels_and_flow():
    frames = render_scene(one_disc())
    assert set(np.unique(frames[1].labels)) == {0, 1}
    assert np.all(frames[0].labels == 0)  # nothing has moved yet at t = 0
    fwd = frames[0].fwd.data
    inside = frames[0].owner == 0
    assert np.allclose(fwd[inside], [2.0, 0.0]) and np.all(fwd[~inside] == 0)


def test_flows_are_exact_rigid_motion():
    spec = one_disc(rot=0.05, step=(1.0, -1.5))
    fr = render_scene(spec)[2]
    b = spec.bodies[0]
    T = b.pose(1) @ b.pose(2).inverse()
    ys, xs = np.nonzero(fr.owner == 0)
    P = np.stack([xs, ys], 1).astype(float)
    assert np.allclose(fr.bwd.data[ys, xs], T.apply(P) - P, atol=1e-12)


def test_body_twist_is_shared_by_all_points():
    spec = one_disc(rot=0.02)
    tw = body_twist(spec.bodies[0], 1)
    T = spec.bodies[0].pose(1) @ spec.bodies[0].pose(0).inverse()
    assert tw.omega == pytest.approx(T.angle)
    assert np.allclose(tw.v, T.t)


def test_static_body_has_no_label():
    frames = render_scene(one_disc(step=(0.0, 0.0)))
    assert all(np.all(f.labels == 0) for f in frames)


def test_occlusion_near_body_wins():
    d = {"width": 40, "height": 40, "frames": 2, "bodies": [
        {"shape": {"type": "disc", "radius": 10}, "start": [0, 20, 20], "depth": 5,
         "step": {"translation": [1, 0]}},
        {"shape": {"type": "polygon", "vertices": [[-4, -4], [4, -4], [4, 4], [-4, 4]]},
         "start": [0, 20, 20], "depth": 1, "step": {"translation": [0, 1]}}]}
    fr = render_scene(SceneSpec.from_dict(d))[1]
    assert fr.labels[20, 20] == 2 and fr.labels[20, 12] == 1


def test_invisible_body_warns():
    d = {"width": 20, "height": 20, "frames": 2, "bodies": [
        {"shape": {"type": "disc", "radius": 2}, "start": [0, 100, 100], "step": {"translation": [1, 0]}}]}
    with pytest.warns(UserWarning, match="not visible"):
        render_scene(SceneSpec.from_dict(d))


@pytest.mark.parametrize("bad", [
    {"width": 10, "height": 10, "frames": 1},
    {"width": 10, "height": 10, "frames": 2, "bodies": [{"shape": {"type": "disc", "radius": -1}, "start": [0, 0, 0]}]},
    {"width": 10, "height": 10, "frames": 2, "bodies": [{"shape": {"type": "polygon", "vertices": [[0, 0], [1, 1], [2, 2]]}, "start": [0, 0, 0]}]},
    {"width": 10, "height": 10, "frames": 2, "bodies": [{"shape": {"type": "blob"}, "start": [0, 0, 0]}]},
    {"height": 10, "frames": 2},
])
def test_invalid_scene_descriptions(bad):
    with pytest.raises(SceneSpecError):
        SceneSpec.from_dict(bad)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{\n  "width": 10,\n  oops\n}')
    with pytest.raises(SceneSpecError, match="line 3"):
        load_scene_spec(p)


@pytest.mark.parametrize("seed", range(8))
def test_sampler_invariants(seed):
    p = SamplerParams()
    spec = sample_scene(seed, p)
    assert p.bodies[0] <= len(spec.bodies) <= p.bodies[1]
    L = twist_length_scale(p.width, p.height)
    for t in range(1, spec.frames):
        tws = [body_twist(b, t) for b in spec.bodies]
        for i, a in enumerate(tws):
            assert np.hypot(a.omega * L, np.hypot(*a.v)) >= p.min_separation
            for b in tws[i + 1:]:
                assert twist_distance(a, b, L) >= p.min_separation
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        frames = render_scene(spec)
    assert len(np.unique(frames[-1].labels[frames[-1].labels > 0])) == len(spec.bodies)


def test_sampler_deterministic():
    assert sample_scene(5).to_dict() == sample_scene(5).to_dict()


def test_noise_is_seeded():
    spec = sample_scene(1, SamplerParams(noise_sigma=0.3))
    a, b = render_scene(spec), render_scene(spec)
    assert np.array_equal(a[3].bwd.data, b[3].bwd.data)
    clean = render_scene(sample_scene(1))
    assert 0.25 < np.std(a[3].bwd.data - clean[3].bwd.data) < 0.35


def test_write_scene_layout(tmp_path):
    spec = one_disc()
    write_scene(spec, tmp_path)
    assert read_flow(frame_path(tmp_path, FLOW_BWD_DIR, 1)).shape == (48, 64)
    assert not frame_path(tmp_path, FLOW_BWD_DIR, 0).exists()
    assert read_labels(frame_path(tmp_path, MASK_DIR, 2)).max() == 1
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["frames"][1]["twists"]["1"] == [0.0, 2.0, 0.0]
    assert SceneSpec.from_dict(json.loads((tmp_path / "scene.json").read_text())).to_dict() == spec.to_dict()
