"""poselabel command line: localize, tune, annotate, stats, validate, synth, overlay."""

import argparse
import asyncio
import shutil
import time
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

import console
from annotate import (RigCamera, SceneRecord, annotate_scenes, attach_object_states,
                      load_frame_index)
from board import find_observation_files, load_observations
from bop_io import format_stats, list_scenes, read_scene, scene_dir, stats, validate, write_scene
from calib import dump_extrinsics, load_extrinsics, load_tuning_samples, localize_camera, tune_camera
from config import DEFAULT_CONFIG_PATH
from errors import EXIT_OK, IoError, OutputExists, PoseLabelError, ValidationFailed
from images import read_rgb, write_rgb_png
from mesh_render import TriMesh, load_mesh, mask_outline, write_mesh_ply
from mocap import load_mocap_log
from pipeline_config import PipelineConfig, load_pipeline_config, parse_pipeline_config
from synth import write_synthetic_dataset

OVERLAY_COLORS = [(255, 64, 64), (64, 255, 64), (64, 128, 255), (255, 200, 0),
                  (255, 0, 255), (0, 255, 255), (255, 128, 0), (160, 96, 255)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None,
                        help=f"pipeline YAML (default: $POSELABEL_CONFIG or {DEFAULT_CONFIG_PATH})")
    common.add_argument('--workers', type=int, default=None, help="worker threads (default: config or cores)")
    common.add_argument('--seed', type=int, default=None, help="random seed for synth")
    common.add_argument('--overwrite', action='store_true', help="replace existing outputs")
    common.add_argument('--force', action='store_true', help="re-tune cameras already tuned")

    parser = argparse.ArgumentParser(prog='poselabel',
                                     description="Auto-annotation of multi-view 6D pose datasets from mocap")
    subparsers = parser.add_subparsers(dest='command', required=True)
    subparsers.add_parser('localize', parents=[common], help="camera extrinsics from board observations")
    subparsers.add_parser('tune', parents=[common], help="refine extrinsics against ground-truth masks")
    subparsers.add_parser('annotate', parents=[common], help="write the BOP dataset")
    subparsers.add_parser('stats', parents=[common], help="dataset statistics")
    subparsers.add_parser('validate', parents=[common], help="check the dataset layout")
    synth = subparsers.add_parser('synth', parents=[common], help="generate a synthetic facility")
    synth.add_argument('out_dir', type=Path, help="directory for the generated inputs")
    overlay = subparsers.add_parser('overlay', parents=[common], help="burn outlines and boxes into images")
    overlay.add_argument('--out', type=Path, default=None, help="overlay directory (default: <output>/overlay)")
    return parser


def load_meshes(config: PipelineConfig) -> Dict[int, TriMesh]:
    """Meshes from the models directory, then explicit per-object paths."""
    meshes = {}
    models = config.paths.models
    if models is not None:
        if not models.is_dir():
            raise IoError(f"models directory not found: {models}")
        for path in sorted(models.glob('obj_*')):
            if path.suffix.lower() in ('.ply', '.obj'):
                mesh = load_mesh(path)
                meshes[mesh.object_id] = mesh
    for obj_id, path in config.paths.meshes.items():
        meshes[obj_id] = load_mesh(path, object_id=obj_id)
    return meshes


def render_overlay(background: np.ndarray, record: SceneRecord, image_index: int) -> np.ndarray:
    """Silhouette outlines and bounding boxes drawn over one image."""
    view = record.views[image_index]
    canvas = np.array(background, dtype=np.uint8, copy=True)
    for ann in view.annotations:
        canvas[mask_outline(ann.mask)] = OVERLAY_COLORS[ann.object_id % len(OVERLAY_COLORS)]
    image = Image.fromarray(canvas)
    draw = ImageDraw.Draw(image)
    for ann in view.annotations:
        x, y, w, h = ann.bbox
        color = OVERLAY_COLORS[ann.object_id % len(OVERLAY_COLORS)]
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=color)
        draw.text((x + 2, y + 2), f"obj {ann.object_id}", fill=color)
    return np.asarray(image)


class PoseLabelCommands:
    """One method per subcommand; each returns its exit code."""

    def __init__(self, args: argparse.Namespace, config: PipelineConfig):
        self.args = args
        self.config = config

    @property
    def workers(self) -> int:
        return self.config.workers

    def _rig(self) -> Dict[str, RigCamera]:
        extrinsics = load_extrinsics(self.config.paths.extrinsics)
        return {camera_id: RigCamera(camera_id, self.config.intrinsics(camera_id), ext)
                for camera_id, ext in extrinsics.items()}

    async def localize(self) -> int:
        target = self.config.paths.extrinsics
        if target.exists() and not self.args.overwrite:
            raise OutputExists(f"{target} already exists (use --overwrite)")
        directory = self.config.paths.require('board_observations')
        if not directory.is_dir():
            raise IoError(f"board observation directory not found: {directory}")

        files = {path.stem: path for path in find_observation_files(directory)}
        for camera_id in self.config.cameras:
            files.setdefault(camera_id, directory / f"{camera_id}.json")

        rig, status = {}, EXIT_OK
        for name in sorted(files):
            try:
                camera_id, observations = load_observations(files[name])
                rig[camera_id] = localize_camera(self.config.board, observations,
                                                 self.config.intrinsics(camera_id))
                console.success(f"{camera_id}: {len(observations)} placements, "
                                f"RMS reprojection error {rig[camera_id].rms_reprojection_error:.3f} px")
            except PoseLabelError as e:
                console.error(f"{name}: {e}")
                status = max(status, e.exit_code)
        if rig:
            dump_extrinsics(rig, target)
            console.info(f"Extrinsics for {len(rig)} camera(s) written to {target}")
        return status

    async def tune(self) -> int:
        rig = load_extrinsics(self.config.paths.extrinsics)
        mocap = load_mocap_log(self.config.paths.mocap_log) if self.config.paths.mocap_log else None
        samples = load_tuning_samples(self.config.paths.require('tuning'), mocap,
                                      self.config.annotation.sync_window_s)
        meshes = load_meshes(self.config)
        threshold = self.config.tuning.threshold
        status = EXIT_OK
        for camera_id in sorted(rig):
            camera_samples = [s for s in samples if s.camera_id == camera_id]
            if not camera_samples:
                console.info(f"{camera_id}: no tuning masks, keeping localized pose")
                continue
            if rig[camera_id].tuned and not self.args.force:
                score = rig[camera_id].tuning_score
                shown = "n/a" if score is None else f"{score:.4f}"
                console.warn(f"{camera_id}: already tuned (score {shown}), use --force to tune again")
                continue
            try:
                tuned = tune_camera(rig[camera_id], self.config.tuning.grid, camera_samples, meshes,
                                    self.config.intrinsics(camera_id), threshold, self.workers)
            except PoseLabelError as e:
                console.error(f"{camera_id}: {e}")
                status = max(status, e.exit_code)
                continue
            if tuned.tuned:
                console.success(f"{camera_id}: mean IoU {tuned.tuning_score:.4f} meets {threshold:.2f}, pose updated")
            else:
                console.warn(f"{camera_id}: mean IoU below {threshold:.2f}, keeping localized pose")
            rig[camera_id] = tuned
        dump_extrinsics(rig, self.config.paths.extrinsics)
        return status

    async def annotate(self) -> int:
        output = self.config.paths.output
        existing = list_scenes(output)
        if existing and not self.args.overwrite:
            raise OutputExists(f"{output} already holds scenes (use --overwrite)")
        rig = self._rig()
        meshes = load_meshes(self.config)
        scenes = load_frame_index(self.config.paths.require('frame_index'))
        log = load_mocap_log(self.config.paths.require('mocap_log'))
        attach_object_states(scenes, log, self.config.annotation.sync_window_s)
        for scene_id in existing:
            shutil.rmtree(scene_dir(output, scene_id))
        for obj_id, mesh in sorted(meshes.items()):
            write_mesh_ply(mesh, output / 'models' / f"obj_{obj_id:06d}.ply")

        def write(record: SceneRecord) -> int:
            write_scene(record, output, overwrite=True)
            return record.instance_count

        options = self.config.annotation
        started = time.perf_counter()
        counts = await annotate_scenes(
            rig, meshes, scenes, self.workers, sink=write,
            min_visible_pixels=options.min_visible_pixels,
            mock_depth_distance=options.mock_depth_distance_mm,
            depth_scale=options.depth_scale,
        )
        elapsed = time.perf_counter() - started
        total = sum(counts)
        rate = total / elapsed if elapsed > 0 else 0.0
        console.success(f"{len(scenes)} scenes written to {output}")
        print(f"{total} instances in {elapsed:.1f} s ({rate:.1f} inst/s)")
        return EXIT_OK

    async def stats(self) -> int:
        summary = stats(self.config.paths.output)
        console.rule()
        print(format_stats(summary))
        console.rule()
        return EXIT_OK

    async def validate(self) -> int:
        output = self.config.paths.output
        violations = validate(output)
        for violation in violations:
            console.error(str(violation))
        if violations:
            raise ValidationFailed(f"{len(violations)} violation(s) in {output}")
        console.success(f"{output}: {len(list_scenes(output))} scenes, no violations")
        return EXIT_OK

    async def synth(self) -> int:
        config_path = write_synthetic_dataset(self.args.out_dir, self.config.synth, self.config.board,
                                              seed=self.config.seed, overwrite=self.args.overwrite,
                                              annotation=self.config.annotation, tuning=self.config.tuning)
        console.success(f"Synthetic facility written, run with --config {config_path}")
        return EXIT_OK

    async def overlay(self) -> int:
        output = self.config.paths.output
        target = self.args.out or output / 'overlay'
        written = 0
        for scene_id in list_scenes(output):
            record = read_scene(output, scene_id)
            for index, view in enumerate(record.views):
                if not view.annotations:
                    continue
                background = None
                if view.image_path and Path(view.image_path).is_file():
                    background = read_rgb(view.image_path)
                if background is None or background.shape[:2] != view.intrinsics.shape:
                    background = np.full(view.intrinsics.shape + (3,), 64, dtype=np.uint8)
                path = target / f"{scene_id:06d}_{view.image_id:06d}.png"
                if path.exists() and not self.args.overwrite:
                    raise OutputExists(f"{path} already exists (use --overwrite)")
                write_rgb_png(render_overlay(background, record, index), path)
                written += 1
        console.success(f"{written} overlay image(s) written to {target}")
        return EXIT_OK


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {'workers': args.workers, 'seed': args.seed}
    path = args.config or Path(DEFAULT_CONFIG_PATH)
    if args.command == 'synth' and args.config is None and not path.is_file():
        return parse_pipeline_config({}, Path.cwd(), overrides)
    return load_pipeline_config(path, overrides)


async def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    console.setup_logging()
    try:
        config = _load_config(args)
        commands = PoseLabelCommands(args, config)
        return await getattr(commands, args.command)()
    except PoseLabelError as e:
        console.error(str(e))
        return e.exit_code
