import pytest
import numpy as np

from annotate import (
    CameraView, RigCamera, SceneInput, SceneRecord, annotate_object, annotate_scene, annotate_scenes,
    attach_object_states, fit_bbox, image_ids, load_frame_index, mock_depth, relative_pose,
    write_frame_index
)
from calib import CameraExtrinsics
from errors import MissingExtrinsics, MissingMesh, ValueOverflow
from geometry import CameraIntrinsics, Pose, compose, rotation_about, rotation_from_quat
from mesh_render import rasterize_mask
from mocap import MocapLog, ObjectState
from synth import box_mesh


K = CameraIntrinsics(300.0, 300.0, 161.5, 127.5, 324, 256)
MESHES = {2: box_mesh((600.0, 400.0, 400.0), object_id=2),
          3: box_mesh((400.0, 300.0, 220.0), object_id=3)}


def random_pose(rng, spread=3000.0):
    q = rng.normal(size=4)
    return Pose(rotation_from_quat(q / np.linalg.norm(q)), rng.uniform(-spread, spread, 3))


def camera(camera_id, pose=None):
    return RigCamera(camera_id, K, CameraExtrinsics(camera_id, pose or Pose.identity()))


@pytest.fixture
def rig():
    """Two cameras looking down +z, one shifted sideways."""
    return {'camB': camera('camB', Pose.from_translation([300.0, 0.0, 0.0])), 'camA': camera('camA')}


@pytest.fixture
def states():
    return [ObjectState(3, Pose.from_translation([400.0, 0.0, 3000.0]), 1.0),
            ObjectState(2, Pose(rotation_about('x', 90, degrees=True), [-400.0, 0.0, 3500.0]), 1.0)]


class TestRelativePose:
    """Test suite for the object-in-camera transform."""

    def test_chain_closure(self):
        """Test that camera pose times relative pose gives back the object pose."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            cam = CameraExtrinsics('c', random_pose(rng))
            obj = ObjectState(1, random_pose(rng))
            closed = compose(cam.pose_mc_cam, relative_pose(cam, obj))
            assert np.abs(closed.rotation - obj.pose_mc_obj.rotation).max() < 1e-9
            assert np.abs(closed.translation - obj.pose_mc_obj.translation).max() < 1e-9

    def test_identity_camera(self):
        """Test that a camera at the mocap origin sees the mocap pose unchanged."""
        obj = ObjectState(1, Pose.from_translation([1.0, 2.0, 3.0]))
        rel = relative_pose(CameraExtrinsics('c', Pose.identity()), obj)
        assert np.array_equal(rel.matrix, obj.pose_mc_obj.matrix)


class TestMaskProducts:
    """Test suite for bounding boxes and mock depth."""

    def test_fit_bbox(self):
        """Test that the box is tight, inclusive and in (x, y, w, h) order."""
        mask = np.zeros((10, 12), dtype=bool)
        mask[2:5, 3:9] = True
        assert fit_bbox(mask) == (3, 2, 6, 3)
        single = np.zeros((4, 4), dtype=bool)
        single[3, 0] = True
        assert fit_bbox(single) == (0, 3, 1, 1)
        assert fit_bbox(np.zeros((4, 4), dtype=bool)) is None

    def test_mock_depth_stamps_mask(self):
        """Test that the fixed distance is written under the mask only."""
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        depth = mock_depth(mask, 6000.0, 1.0)
        assert depth.dtype == np.uint16
        assert depth[1, 1] == 6000
        assert depth.sum() == 6000

    def test_mock_depth_scale_rounding(self):
        """Test that depth is quantised by rounding half up."""
        mask = np.ones((1, 1), dtype=bool)
        assert mock_depth(mask, 6000.0, 0.1)[0, 0] == 60000
        assert mock_depth(mask, 2.5, 1.0)[0, 0] == 3
        assert mock_depth(mask, 1000.0, 3.0)[0, 0] == 333

    def test_mock_depth_overflow(self):
        """Test that values beyond 16 bits raise ValueOverflow."""
        with pytest.raises(ValueOverflow):
            mock_depth(np.ones((2, 2), dtype=bool), 7000.0, 0.1)

    def test_mock_depth_invalid(self):
        """Test that non-positive distances and scales are rejected."""
        with pytest.raises(ValueError):
            mock_depth(np.ones((1, 1), dtype=bool), 0.0, 1.0)
        with pytest.raises(ValueError):
            mock_depth(np.ones((1, 1), dtype=bool), 10.0, -1.0)


class TestAnnotateObject:
    """Test suite for per-object annotation."""

    def test_annotation_contents(self, states):
        """Test that mask, bbox and count describe the same silhouette."""
        cam = CameraExtrinsics('camA', Pose.identity())
        annotation = annotate_object(cam, K, states[0], MESHES[3])
        assert annotation.object_id == 3
        assert annotation.visible_pixel_count == annotation.mask.sum()
        assert annotation.bbox == fit_bbox(annotation.mask)
        assert np.array_equal(annotation.mask, rasterize_mask(MESHES[3], annotation.relative_pose, K))

    def test_visibility_threshold(self, states):
        """Test that objects below the pixel threshold are filtered."""
        cam = CameraExtrinsics('camA', Pose.identity())
        count = annotate_object(cam, K, states[0], MESHES[3]).visible_pixel_count
        assert annotate_object(cam, K, states[0], MESHES[3], min_visible_pixels=count) is not None
        assert annotate_object(cam, K, states[0], MESHES[3], min_visible_pixels=count + 1) is None

    def test_object_behind_camera(self):
        """Test that an object behind the camera yields no annotation."""
        behind = ObjectState(2, Pose.from_translation([0.0, 0.0, -3000.0]))
        assert annotate_object(CameraExtrinsics('c', Pose.identity()), K, behind, MESHES[2]) is None

    def test_mesh_mismatch(self, states):
        """Test that a mesh for another object is refused."""
        with pytest.raises(ValueError):
            annotate_object(CameraExtrinsics('c', Pose.identity()), K, states[0], MESHES[2])


class TestAnnotateScene:
    """Test suite for snap annotation."""

    def test_sorted_views_and_objects(self, rig, states):
        """Test that cameras and objects come out in sorted order with stable image ids."""
        scene = SceneInput(4, 1.0, {'camB': 'b.png', 'camA': None}, 'lab', list(states))
        record = annotate_scene(rig, MESHES, scene)
        assert [v.camera_id for v in record.views] == ['camA', 'camB']
        assert [v.image_id for v in record.views] == [0, 1]
        assert [s.object_id for s in record.objects] == [2, 3]
        for view in record.views:
            assert [a.object_id for a in view.annotations] == [2, 3]
        assert record.views[1].image_path == 'b.png'
        assert record.instance_count == 4
        assert record.scenario == 'lab'
        assert record.annotation_time_s > 0.0

    def test_depth_matches_aggregate(self, rig, states):
        """Test that depth is non-zero exactly where some object is visible."""
        record = annotate_scene(rig, MESHES, SceneInput(0, 1.0, {'camA': None}, objects=list(states)),
                                mock_depth_distance=5000.0)
        view = record.views[0]
        assert np.array_equal(view.depth > 0, view.aggregated_mask)
        assert set(np.unique(view.depth)) == {0, 5000}

    def test_subset_of_cameras(self, rig, states):
        """Test that image ids follow the rig even when a camera is missing."""
        record = annotate_scene(rig, MESHES, SceneInput(0, 1.0, {'camB': None}, objects=list(states)))
        assert record.views[0].image_id == image_ids(rig)['camB'] == 1

    def test_missing_mesh(self, rig, states):
        """Test that an object without a mesh raises MissingMesh."""
        with pytest.raises(MissingMesh):
            annotate_scene(rig, {2: MESHES[2]}, SceneInput(0, 1.0, {'camA': None}, objects=list(states)))

    def test_missing_extrinsics(self, rig, states):
        """Test that an uncalibrated camera raises MissingExtrinsics."""
        with pytest.raises(MissingExtrinsics):
            annotate_scene(rig, MESHES, SceneInput(0, 1.0, {'camZ': None}, objects=list(states)))

    def test_empty_snap(self, rig):
        """Test that a snap without objects still yields blank views."""
        record = annotate_scene(rig, MESHES, SceneInput(0, 1.0, {'camA': None, 'camB': None}))
        assert record.instance_count == 0
        assert all(not v.depth.any() for v in record.views)

    def test_too_many_views(self):
        """Test that a record holds at most eight images."""
        views = [CameraView(f"c{i}", i, K, CameraExtrinsics(f"c{i}", Pose.identity())) for i in range(9)]
        with pytest.raises(ValueError):
            SceneRecord(0, [], views)

    @pytest.mark.asyncio
    async def test_parallel_keeps_order(self, rig, states):
        """Test that pooled annotation returns records in input order."""
        scenes = [SceneInput(i, float(i), {'camA': None, 'camB': None}, objects=list(states))
                  for i in (5, 2, 9, 0)]
        records = await annotate_scenes(rig, MESHES, scenes, workers=3)
        assert [r.scene_id for r in records] == [5, 2, 9, 0]
        serial = annotate_scene(rig, MESHES, scenes[0])
        assert np.array_equal(records[0].views[0].annotations[0].mask, serial.views[0].annotations[0].mask)

    @pytest.mark.asyncio
    async def test_sink_results(self, rig, states):
        """Test that a sink's return values replace the records."""
        scenes = [SceneInput(i, 0.0, {'camA': None}, objects=list(states)) for i in range(3)]
        counts = await annotate_scenes(rig, MESHES, scenes, workers=2, sink=lambda r: r.instance_count,
                                       min_visible_pixels=1)
        assert counts == [2, 2, 2]


class TestFrameIndex:
    """Test suite for the frame index and mocap synchronisation."""

    def test_write_then_load(self, tmp_path):
        """Test that snaps are grouped by scene id with their frames."""
        scenes = [SceneInput(0, 0.2, {'cam0': 'rgb/0_0.png', 'cam1': None}, 'lab'),
                  SceneInput(1, 0.4, {'cam0': None}, 'lab')]
        write_frame_index(scenes, tmp_path / 'frames.csv')
        loaded = load_frame_index(tmp_path / 'frames.csv')
        assert [s.scene_id for s in loaded] == [0, 1]
        assert loaded[0].frames == {'cam0': 'rgb/0_0.png', 'cam1': None}
        assert loaded[0].timestamp == pytest.approx(0.2, abs=1e-15)
        assert loaded[1].scenario == 'lab'

    def test_scene_time_is_mean(self, tmp_path):
        """Test that a snap's timestamp averages its frames."""
        path = tmp_path / 'frames.csv'
        path.write_text("scene_id,camera_id,timestamp_s\n3,cam0,1.00\n3,cam1,1.02\n")
        scene = load_frame_index(path)[0]
        assert scene.timestamp == pytest.approx(1.01)
        assert scene.scenario == 'default'
        assert scene.frames == {'cam0': None, 'cam1': None}

    def test_attach_states(self):
        """Test that states within the window are attached and others skipped."""
        log = MocapLog.from_states([ObjectState(1, Pose.identity(), 0.00),
                                    ObjectState(1, Pose.identity(), 0.10),
                                    ObjectState(2, Pose.identity(), 0.50)])
        scenes = attach_object_states([SceneInput(0, 0.09, {}), SceneInput(1, 0.51, {})], log, window=0.02)
        assert [s.object_id for s in scenes[0].objects] == [1]
        assert scenes[0].objects[0].timestamp == 0.10
        assert [s.object_id for s in scenes[1].objects] == [2]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
