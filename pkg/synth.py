"""Synthetic facility: camera rig, board sessions, recordings and oracle annotations.

Every random draw comes from one seeded ``numpy.random.Generator`` so a
dataset is reproducible from its seed. The mocap frame has z up with the
floor at z = 0; objects stand on the floor with their origin at the bottom
centre.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import numpy as np

from annotate import (Annotation, CameraView, RigCamera, SceneInput, SceneRecord, fit_bbox,
                      image_ids, mock_depth, relative_pose, write_frame_index)
from board import BoardObservation, BoardSpec, dump_observations, grid_points_mc, orientation_diversity
from calib import CameraExtrinsics, TuningSample, dump_extrinsics
from config import (CORNER_MARGIN_FRACTION, DEPTH_SCALE, FRAME_RATE_FPS, IMAGE_HEIGHT, IMAGE_WIDTH,
                    MIN_VISIBLE_PIXELS, MOCAP_JITTER_DEG, MOCAP_JITTER_MM, MOCK_DEPTH_DISTANCE_MM,
                    RIG_CAMERA_COUNT)
from errors import ConfigError, InvalidInput, OutputExists
from geometry import (CameraIntrinsics, Pose, compose, invert, perturb_pose, project_points,
                      rotation_about, rotation_from_rotvec)
from images import write_mask_png
from jsonio import PathLike, write_json
from mesh_render import TriMesh, aggregate_masks, merge_meshes, rasterize_mask, raycast_mask, write_mesh_ply
from mocap import MocapLog, ObjectState, write_mocap_log
from pipeline_config import (AnnotationConfig, PathsConfig, PipelineConfig, SynthConfig, TuningConfig,
                             dump_pipeline_config)

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.Generator, None]

OBJECT_CLASSES = {1: 'pallet', 2: 'box', 3: 'klt', 4: 'robot', 5: 'workstation'}
MIN_BOARD_DIVERSITY_DEG = 15.0
MIN_CORNERS_IN_FRAME = 0.9
MOCAP_RATE_HZ = 100.0

# Outward-facing winding for the 8 corners indexed x + 2y + 4z.
_BOX_TRIANGLES = np.array([
    [0, 2, 3], [0, 3, 1],
    [4, 5, 7], [4, 7, 6],
    [0, 1, 5], [0, 5, 4],
    [2, 6, 7], [2, 7, 3],
    [0, 4, 6], [0, 6, 2],
    [1, 3, 7], [1, 7, 5],
])


def box_mesh(size: Sequence[float], object_id: int = 0,
             base: Sequence[float] = (0.0, 0.0, 0.0)) -> TriMesh:
    """Closed box of size (x, y, z) mm standing on ``base`` (its bottom centre)."""
    sx, sy, sz = (float(v) for v in size)
    if min(sx, sy, sz) <= 0:
        raise ConfigError(f"box size must be positive, got {tuple(size)}")
    bx, by, bz = base
    corners = np.array([[bx + (i & 1) * sx - sx / 2, by + ((i >> 1) & 1) * sy - sy / 2, bz + ((i >> 2) & 1) * sz]
                        for i in range(8)])
    return TriMesh(corners, _BOX_TRIANGLES.copy(), object_id)


def pallet_mesh(length: float = 1200.0, width: float = 800.0, height: float = 144.0,
                slats: int = 5, object_id: int = 1) -> TriMesh:
    """Three runners under a deck of ``slats`` boards spanning the width."""
    if slats < 2:
        raise ConfigError(f"a pallet needs at least two slats, got {slats}")
    deck = 22.0
    runner = 100.0
    parts = [box_mesh((length, runner, height - deck), base=(0.0, y, 0.0))
             for y in (-width / 2 + runner / 2, 0.0, width / 2 - runner / 2)]
    slat_width = min(145.0, 0.7 * length / slats)
    for x in np.linspace(-length / 2 + slat_width / 2, length / 2 - slat_width / 2, slats):
        parts.append(box_mesh((slat_width, width, deck), base=(float(x), 0.0, height - deck)))
    return merge_meshes(parts, object_id)


def object_mesh(object_id: int) -> TriMesh:
    """Proxy geometry for the five object families of the recording."""
    if object_id == 1:
        return pallet_mesh(object_id=1)
    if object_id == 2:
        return box_mesh((600.0, 400.0, 400.0), object_id=2)
    if object_id == 3:
        return box_mesh((400.0, 300.0, 220.0), object_id=3)
    if object_id == 4:
        return merge_meshes([box_mesh((900.0, 600.0, 350.0)),
                             box_mesh((400.0, 400.0, 300.0), base=(-150.0, 0.0, 350.0))], object_id=4)
    if object_id == 5:
        legs = [box_mesh((60.0, 60.0, 860.0), base=(x, y, 0.0))
                for x in (-760.0, 760.0) for y in (-360.0, 360.0)]
        return merge_meshes(legs + [box_mesh((1600.0, 800.0, 40.0), base=(0.0, 0.0, 860.0))], object_id=5)
    raise ConfigError(f"unknown synthetic object class {object_id} (known: {sorted(OBJECT_CLASSES)})")


@dataclass(frozen=True)
class RigSpec:
    camera_count: int = RIG_CAMERA_COUNT
    ring_radius: float = 6000.0
    camera_height: float = 3500.0
    target: Tuple[float, float, float] = (0.0, 0.0, 500.0)
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT
    horizontal_fov_deg: float = 66.0
    position_jitter: float = 300.0
    angle_jitter_deg: float = 5.0

    def __post_init__(self):
        if self.camera_count < 1:
            raise ConfigError(f"rig needs at least one camera, got {self.camera_count}")
        if not 1.0 <= self.horizontal_fov_deg < 180.0:
            raise ConfigError(f"horizontal_fov_deg must lie in [1, 180), got {self.horizontal_fov_deg}")

    def intrinsics(self) -> CameraIntrinsics:
        focal = (self.image_width / 2.0) / np.tan(np.radians(self.horizontal_fov_deg) / 2.0)
        return CameraIntrinsics(float(focal), float(focal), (self.image_width - 1) / 2.0,
                                (self.image_height - 1) / 2.0, self.image_width, self.image_height)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = 'synthetic'
    object_ids: Tuple[int, ...] = (1, 2, 3)
    duration_s: float = 20.0
    frame_rate: float = FRAME_RATE_FPS
    workspace_radius: float = 2000.0
    waypoints: int = 4
    mocap_rate: float = MOCAP_RATE_HZ
    mocap_jitter_mm: float = MOCAP_JITTER_MM
    mocap_jitter_deg: float = MOCAP_JITTER_DEG
    seed: int = 0

    def __post_init__(self):
        if self.duration_s < 0 or self.frame_rate <= 0 or self.mocap_rate <= 0:
            raise ConfigError("scenario needs duration >= 0 and positive rates")
        if len(set(self.object_ids)) != len(self.object_ids):
            raise ConfigError(f"duplicate object ids in {self.object_ids}")
        if self.waypoints < 2:
            raise ConfigError(f"trajectories need at least two waypoints, got {self.waypoints}")


def camera_id_for(index: int) -> str:
    return f"cam{index}"


def look_at(position: Sequence[float], target: Sequence[float],
            up: Sequence[float] = (0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-mocap pose with z toward target, x right and y down in the image."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, (0.0, 1.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), position)


def generate_rig(spec: RigSpec, seed: Seed = 0) -> Dict[str, RigCamera]:
    """Cameras on a jittered ring, all aimed at the workspace target."""
    rng = np.random.default_rng(seed)
    k = spec.intrinsics()
    rig = {}
    for i in range(spec.camera_count):
        angle = 2 * np.pi * i / spec.camera_count + np.radians(rng.uniform(-1, 1) * spec.angle_jitter_deg)
        radius = spec.ring_radius + rng.uniform(-1, 1) * spec.position_jitter
        height = spec.camera_height + rng.uniform(-1, 1) * spec.position_jitter
        position = (radius * np.cos(angle), radius * np.sin(angle), height)
        camera_id = camera_id_for(i)
        rig[camera_id] = RigCamera(camera_id, k, CameraExtrinsics(camera_id, look_at(position, spec.target)))
    return rig


def _board_pose_in_camera(rng: np.random.Generator, board: BoardSpec, k: CameraIntrinsics) -> Pose:
    uv = np.array([rng.uniform(0.35, 0.65) * k.width, rng.uniform(0.35, 0.65) * k.height])
    ray = np.append(k.to_normalized(uv[None])[0], 1.0)
    centre_cam = ray / np.linalg.norm(ray) * rng.uniform(3000.0, 7000.0)
    tilt = rotation_from_rotvec([rng.uniform(-40, 40), rng.uniform(-40, 40), 0.0], degrees=True)
    spin = rotation_about('z', rng.uniform(-20, 20), degrees=True)
    # board z out of the face, toward the camera
    rotation = tilt @ np.diag([1.0, -1.0, -1.0]) @ spin
    centre_local = np.array([board.board_width / 2, board.board_height / 2, 0.0])
    return Pose(rotation, centre_cam - rotation @ centre_local)


def sample_board_placement(rng: np.random.Generator, camera: RigCamera, board: BoardSpec,
                           noise_px: float = 0.0, timestamp: float = 0.0,
                           max_attempts: int = 1000) -> BoardObservation:
    """One board placement in view of camera, with noisy projected corners."""
    k = camera.intrinsics
    cam_from_mc = invert(camera.extrinsics.pose_mc_cam)
    for _ in range(max_attempts):
        board_cam = _board_pose_in_camera(rng, board, k)
        if board_cam.rotation[:, 2] @ board_cam.translation >= 0:
            continue
        board_mc = compose(camera.extrinsics.pose_mc_cam, board_cam)
        uv, in_front = project_points(k, cam_from_mc, grid_points_mc(board, board_mc))
        if not in_front.all() or not k.contains(uv, margin=CORNER_MARGIN_FRACTION).all():
            continue
        if k.contains(uv).mean() < MIN_CORNERS_IN_FRAME:
            continue
        if noise_px > 0:
            uv = uv + rng.normal(0.0, noise_px, uv.shape)
        return BoardObservation(board_mc, uv, camera.camera_id, timestamp)
    raise InvalidInput(f"no valid board placement for camera {camera.camera_id} "
                     f"after {max_attempts} attempts")


def generate_board_session(rig: Mapping[str, RigCamera], board: BoardSpec, n_placements: int,
                           noise_px: float = 0.0, seed: Seed = 0,
                           max_rounds: int = 100) -> Dict[str, List[BoardObservation]]:
    """Board placements per camera, resampled until they span enough orientations."""
    if n_placements < 1:
        raise ConfigError(f"n_placements must be positive, got {n_placements}")
    rng = np.random.default_rng(seed)
    session = {}
    for camera_id in sorted(rig):
        for _ in range(max_rounds):
            observations = [sample_board_placement(rng, rig[camera_id], board, noise_px, float(i))
                            for i in range(n_placements)]
            if n_placements == 1 or orientation_diversity(
                    observations, enough=MIN_BOARD_DIVERSITY_DEG) >= MIN_BOARD_DIVERSITY_DEG:
                break
        else:
            raise InvalidInput(f"camera {camera_id}: board placements never reached "
                             f"{MIN_BOARD_DIVERSITY_DEG} deg of diversity")
        session[camera_id] = observations
    return session


@dataclass(eq=False)
class Recording:
    """Mocap log and snaps of one scenario, with the truth behind them."""

    mocap: MocapLog
    scenes: List[SceneInput]
    true_states: List[List[ObjectState]]
    oracle: List[SceneRecord] = field(default_factory=list)


def _trajectory(rng: np.random.Generator, scenario: ScenarioSpec):
    radius = scenario.workspace_radius * np.sqrt(rng.uniform(size=scenario.waypoints))
    theta = rng.uniform(0, 2 * np.pi, scenario.waypoints)
    xs, ys = radius * np.cos(theta), radius * np.sin(theta)
    yaws = np.unwrap(rng.uniform(-np.pi, np.pi, scenario.waypoints))
    knots = np.linspace(0.0, max(scenario.duration_s, 1e-9), scenario.waypoints)

    def pose_at(t: float) -> Pose:
        yaw = np.interp(t, knots, yaws)
        return Pose(rotation_about('z', yaw), [np.interp(t, knots, xs), np.interp(t, knots, ys), 0.0])

    return pose_at


def oracle_scene(rig: Mapping[str, RigCamera], meshes: Mapping[int, TriMesh], scene: SceneInput,
                 min_visible_pixels: int = MIN_VISIBLE_PIXELS,
                 mock_depth_distance: float = MOCK_DEPTH_DISTANCE_MM,
                 depth_scale: float = DEPTH_SCALE) -> SceneRecord:
    """Reference annotations from homogeneous matrices and per-pixel ray casting."""
    ids = image_ids(rig)
    objects = sorted(scene.objects, key=lambda s: s.object_id)
    views = []
    for camera_id in sorted(scene.frames):
        camera = rig[camera_id]
        cam_inv = np.linalg.inv(camera.extrinsics.pose_mc_cam.matrix)
        annotations = []
        for state in objects:
            pose = Pose.from_matrix(cam_inv @ state.pose_mc_obj.matrix)
            mask = raycast_mask(meshes[state.object_id], pose, camera.intrinsics)
            count = int(np.count_nonzero(mask))
            if count >= min_visible_pixels:
                annotations.append(Annotation(state.object_id, pose, mask, fit_bbox(mask), count))
        view = CameraView(camera_id, ids[camera_id], camera.intrinsics, camera.extrinsics, annotations)
        view.depth = mock_depth(view.aggregated_mask, mock_depth_distance, depth_scale)
        views.append(view)
    return SceneRecord(scene.scene_id, objects, views, scene.timestamp, scene.scenario,
                       depth_scale=depth_scale)


def generate_recording(rig: Mapping[str, RigCamera], scenario: ScenarioSpec,
                       meshes: Optional[Mapping[int, TriMesh]] = None, with_oracle: bool = True,
                       seed: Seed = None, min_visible_pixels: int = MIN_VISIBLE_PIXELS) -> Recording:
    """Move the scenario's objects along waypoint paths and record them.

    The mocap log carries jittered poses; snaps take their object states from
    that log, and the oracle annotates exactly those states with the true rig.
    """
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    paths = {obj_id: _trajectory(rng, scenario) for obj_id in scenario.object_ids}

    samples = int(np.floor(scenario.duration_s * scenario.mocap_rate)) + 1 if scenario.duration_s > 0 else 0
    logged = []
    for j in range(samples):
        t = j / scenario.mocap_rate
        for obj_id in scenario.object_ids:
            noisy = perturb_pose(paths[obj_id](t), rng.normal(0.0, scenario.mocap_jitter_deg, 3),
                                 rng.normal(0.0, scenario.mocap_jitter_mm, 3), degrees=True)
            logged.append(ObjectState(obj_id, noisy, t))
    log = MocapLog.from_states(logged)

    window = 0.5 / scenario.mocap_rate
    frames = int(np.floor(scenario.duration_s * scenario.frame_rate + 1e-9))
    scenes, true_states = [], []
    for scene_id in range(frames):
        t = scene_id / scenario.frame_rate
        scenes.append(SceneInput(scene_id, t, {camera_id: None for camera_id in sorted(rig)},
                                 scenario.name, log.states_at(t, window)))
        true_states.append([ObjectState(obj_id, paths[obj_id](t), t) for obj_id in sorted(scenario.object_ids)])

    recording = Recording(log, scenes, true_states)
    if with_oracle:
        meshes = meshes if meshes is not None else {obj_id: object_mesh(obj_id) for obj_id in scenario.object_ids}
        recording.oracle = [oracle_scene(rig, meshes, scene, min_visible_pixels) for scene in scenes]
    logger.debug("recorded %d mocap samples and %d snaps for %s", len(log), len(scenes), scenario.name)
    return recording


def generate_tuning_samples(rig: Mapping[str, RigCamera], recording: Recording, n: int,
                            meshes: Optional[Mapping[int, TriMesh]] = None) -> List[TuningSample]:
    """Masks rendered from true poses and the true rig, paired with logged poses.

    Samples come from ``n`` snaps spread evenly over the recording, one per camera.
    """
    if n <= 0 or not recording.scenes:
        return []
    picks = sorted(set(np.linspace(0, len(recording.scenes) - 1, n).round().astype(int).tolist()))
    samples = []
    for index in picks:
        scene, truth = recording.scenes[index], recording.true_states[index]
        if meshes is None:
            meshes = {s.object_id: object_mesh(s.object_id) for s in truth}
        for camera_id in sorted(rig):
            camera = rig[camera_id]
            masks = [rasterize_mask(meshes[s.object_id], relative_pose(camera.extrinsics, s), camera.intrinsics)
                     for s in truth]
            samples.append(TuningSample(f"{scene.scene_id:06d}_{camera_id}", camera_id,
                                        aggregate_masks(masks, shape=camera.intrinsics.shape),
                                        list(scene.objects)))
    return samples


def specs_from_config(synth: SynthConfig, seed: int = 0) -> Tuple[RigSpec, ScenarioSpec]:
    rig = RigSpec(camera_count=synth.camera_count, ring_radius=synth.ring_radius_mm,
                  camera_height=synth.camera_height_mm, image_width=synth.image_width,
                  image_height=synth.image_height, horizontal_fov_deg=synth.horizontal_fov_deg)
    scenario = ScenarioSpec(name=synth.scenario, object_ids=tuple(synth.object_ids),
                            duration_s=synth.duration_s, frame_rate=synth.frame_rate_fps,
                            mocap_jitter_mm=synth.mocap_jitter_mm, mocap_jitter_deg=synth.mocap_jitter_deg,
                            seed=seed)
    return rig, scenario


def write_synthetic_dataset(out_dir: PathLike, synth: SynthConfig, board: BoardSpec = BoardSpec(),
                            seed: int = 0, overwrite: bool = False,
                            annotation: Optional[AnnotationConfig] = None,
                            tuning: Optional[TuningConfig] = None) -> Path:
    """Write every ingestion input for one synthetic facility; returns the config path.

    Layout: models/, board/<camera>.json, mocap.csv, frames.csv,
    tuning/tuning.json with tuning/masks/, extrinsics_gt.json, poselabel.yaml.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise OutputExists(f"{out} is not empty (use --overwrite)")
    rng = np.random.default_rng(seed)
    rig_spec, scenario = specs_from_config(synth, seed)
    rig = generate_rig(rig_spec, rng)
    meshes = {obj_id: object_mesh(obj_id) for obj_id in scenario.object_ids}

    for obj_id, mesh in meshes.items():
        write_mesh_ply(mesh, out / 'models' / f"obj_{obj_id:06d}.ply")

    session = generate_board_session(rig, board, synth.board_placements, synth.corner_noise_px, rng)
    for camera_id, observations in session.items():
        dump_observations(camera_id, observations, out / 'board' / f"{camera_id}.json")

    recording = generate_recording(rig, scenario, meshes, with_oracle=False, seed=rng)
    write_mocap_log(recording.mocap, out / 'mocap.csv')
    write_frame_index(recording.scenes, out / 'frames.csv')

    entries = []
    for sample in generate_tuning_samples(rig, recording, synth.tuning_samples, meshes):
        mask_path = f"masks/{sample.image_id}.png"
        write_mask_png(sample.ground_truth_mask, out / 'tuning' / mask_path)
        scene_index = int(sample.image_id.split('_')[0])
        entries.append({'image_id': sample.image_id, 'camera_id': sample.camera_id, 'mask': mask_path,
                        'timestamp_s': recording.scenes[scene_index].timestamp})
    write_json(out / 'tuning' / 'tuning.json', {'samples': entries})

    dump_extrinsics({camera_id: camera.extrinsics for camera_id, camera in rig.items()},
                    out / 'extrinsics_gt.json')

    config = PipelineConfig(
        paths=PathsConfig(output=out / 'dataset', extrinsics=out / 'extrinsics.json',
                          mocap_log=out / 'mocap.csv', frame_index=out / 'frames.csv',
                          board_observations=out / 'board', tuning=out / 'tuning' / 'tuning.json',
                          models=out / 'models'),
        board=board,
        cameras={camera_id: camera.intrinsics for camera_id, camera in rig.items()},
        tuning=tuning or TuningConfig(),
        annotation=annotation or AnnotationConfig(),
        synth=synth,
        seed=seed,
    )
    config_path = out / 'poselabel.yaml'
    dump_pipeline_config(config, config_path)
    logger.info("synthetic facility written to %s (%d cameras, %d snaps, %d tuning masks)",
                out, len(rig), len(recording.scenes), len(entries))
    return config_path
