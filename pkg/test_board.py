import pytest
import json
import numpy as np

from board import (
    BoardObservation, BoardSpec, build_correspondences, dump_observations, find_observation_files,
    first_intersection_mc, grid_points_mc, load_observations, orientation_diversity
)
from errors import (
    ConfigError, DimensionMismatch, InsufficientOrientationDiversity, InvalidObservation,
    MixedCameras, SchemaError
)
from geometry import CameraIntrinsics, Pose, project_points, invert, rotation_about
from synth import RigSpec, generate_board_session, generate_rig


K = CameraIntrinsics(500.0, 500.0, 323.5, 255.5, 648, 512)


def placement(angle_deg, camera_id='cam0'):
    """A board 4 m in front of the origin, spun about its normal."""
    spec = BoardSpec()
    pose = Pose(rotation_about('z', angle_deg, degrees=True), [-400.0, -550.0, 4000.0])
    uv, _ = project_points(K, Pose.identity(), grid_points_mc(spec, pose))
    return BoardObservation(pose, uv, camera_id)


class TestBoardSpec:
    """Test suite for the board geometry."""

    def test_local_points_layout(self):
        """Test that intersections are row-major and start at the static offset."""
        spec = BoardSpec()
        points = spec.local_points()
        assert points.shape == (70, 3)
        assert np.array_equal(points[0], [100.0, 100.0, 0.0])
        assert np.array_equal(points[1], [200.0, 100.0, 0.0])
        assert np.array_equal(points[7], [100.0, 200.0, 0.0])
        assert np.array_equal(points[-1], [700.0, 1000.0, 0.0])

    def test_first_intersection_matches_grid(self):
        """Test that the extrapolated first intersection is grid point zero."""
        spec = BoardSpec()
        pose = Pose(rotation_about('x', 30, degrees=True), [10.0, 20.0, 30.0])
        first = first_intersection_mc(spec, pose)
        assert np.allclose(first.translation, grid_points_mc(spec, pose)[0], atol=1e-9)
        assert np.array_equal(first.rotation, pose.rotation)

    def test_invalid_specs(self):
        """Test that small grids and offsets off the board are rejected."""
        with pytest.raises(ConfigError):
            BoardSpec(inner_cols=2)
        with pytest.raises(ConfigError):
            BoardSpec(square_size=0.0)
        with pytest.raises(ConfigError):
            BoardSpec(origin_offset=(900.0, 100.0, 0.0))


class TestCorrespondences:
    """Test suite for turning board placements into PnP input."""

    def test_concatenates_placements(self):
        """Test that every placement contributes one point per intersection."""
        c = build_correspondences(BoardSpec(), [placement(0), placement(10), placement(20)], K)
        assert c.n == 210
        assert np.allclose(c.points_3d[70], grid_points_mc(BoardSpec(), placement(10).board_pose_mc)[0])

    def test_mixed_cameras(self):
        """Test that observations from two cameras cannot be mixed."""
        with pytest.raises(MixedCameras):
            build_correspondences(BoardSpec(), [placement(0), placement(10, 'cam1')], K)

    def test_single_placement(self):
        """Test that one placement cannot constrain the pose."""
        with pytest.raises(InsufficientOrientationDiversity):
            build_correspondences(BoardSpec(), [placement(0)], K)

    def test_parallel_placements(self):
        """Test that placements within a few degrees of each other are rejected."""
        with pytest.raises(InsufficientOrientationDiversity):
            build_correspondences(BoardSpec(), [placement(0), placement(2), placement(4)], K)

    def test_wrong_corner_count(self):
        """Test that a detection with missing corners raises DimensionMismatch."""
        short = placement(10)
        short = BoardObservation(short.board_pose_mc, short.corners_2d[:60], 'cam0')
        with pytest.raises(DimensionMismatch):
            build_correspondences(BoardSpec(), [placement(0), short], K)

    def test_corners_far_outside(self):
        """Test that corners beyond the image margin raise InvalidObservation."""
        bad = placement(10)
        bad = BoardObservation(bad.board_pose_mc, bad.corners_2d - 1000.0, 'cam0')
        with pytest.raises(InvalidObservation):
            build_correspondences(BoardSpec(), [placement(0), bad], K)

    def test_orientation_diversity(self):
        """Test that diversity is the largest pairwise angle in degrees."""
        observations = [placement(0), placement(7), placement(25)]
        assert orientation_diversity(observations) == pytest.approx(25.0)
        assert orientation_diversity(observations[:1]) == 0.0


class TestBoardFiles:
    """Test suite for board observation documents."""

    @pytest.fixture
    def session(self):
        rig = generate_rig(RigSpec(camera_count=2, image_width=648, image_height=512), seed=3)
        return rig, generate_board_session(rig, BoardSpec(), 4, noise_px=0.0, seed=3)

    def test_session_projects_consistently(self, session):
        """Test that synthetic corners are the projections of the tracked grid."""
        rig, observations = session
        for camera_id, placements in observations.items():
            camera = rig[camera_id]
            for obs in placements:
                uv, _ = project_points(camera.intrinsics, invert(camera.extrinsics.pose_mc_cam),
                                       grid_points_mc(BoardSpec(), obs.board_pose_mc))
                assert np.abs(uv - obs.corners_2d).max() < 1e-9

    def test_dump_then_load(self, session, tmp_path):
        """Test that a written observation file reads back unchanged."""
        _, observations = session
        path = tmp_path / 'board' / 'cam1.json'
        dump_observations('cam1', observations['cam1'], path)
        camera_id, loaded = load_observations(path)
        assert camera_id == 'cam1'
        assert len(loaded) == 4
        for a, b in zip(loaded, observations['cam1']):
            assert np.abs(a.corners_2d - b.corners_2d).max() < 1e-9
            assert np.abs(a.board_pose_mc.matrix - b.board_pose_mc.matrix).max() < 1e-9
            assert a.timestamp == b.timestamp
        assert find_observation_files(tmp_path / 'board') == [path]

    def test_malformed_corners(self, tmp_path):
        """Test that a schema problem names the offending key."""
        path = tmp_path / 'cam0.json'
        path.write_text(json.dumps({'camera_id': 'cam0', 'observations': [
            {'board_pose': {'t': [0, 0, 0], 'q': [0, 0, 0, 1]}, 'corners': 'none'}]}))
        with pytest.raises(SchemaError, match=r'observations\[0\].corners'):
            load_observations(path)

    def test_non_numeric_timestamp(self, session, tmp_path):
        """Test that a timestamp that is not a number is a schema error, not a crash."""
        _, observations = session
        path = tmp_path / 'cam0.json'
        dump_observations('cam0', observations['cam0'], path)
        doc = json.loads(path.read_text())
        doc['observations'][1]['timestamp'] = 'noon'
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match=r'observations\[1\].timestamp'):
            load_observations(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
