import pytest
import os
import logging
from pathlib import Path
from unittest.mock import patch

import yaml

import console
from config import (
    Z_NEAR_MM, PNP_MAX_ITER, PNP_TOL_PX, IOU_THRESHOLD, MIN_VISIBLE_PIXELS,
    MOCK_DEPTH_DISTANCE_MM, SYNC_WINDOW_S, MAX_TUNING_CANDIDATES, IMAGE_WIDTH,
    IMAGE_HEIGHT, RIG_CAMERA_COUNT, get_env_var, get_env_int
)
from errors import (
    EXIT_DOMAIN, EXIT_IO, ConfigError, DegenerateConfiguration, InvalidInput, IoError, OutputExists,
    ParseError, SchemaError, SerializationError, UnsupportedFormat, ValidationFailed
)
from geometry import CameraIntrinsics
from pipeline_config import (
    PipelineConfig, dump_pipeline_config, load_pipeline_config, parse_pipeline_config
)


@pytest.fixture(autouse=True)
def restore_config():
    """Reload config after each test so patched environments do not leak."""
    yield
    import importlib
    import config
    importlib.reload(config)


class TestConfig:
    """Test suite for configuration module."""

    def test_geometry_defaults(self):
        """Test that the near plane and solver defaults match the pipeline contract."""
        assert Z_NEAR_MM == 1.0
        assert PNP_MAX_ITER == 50
        assert PNP_TOL_PX == 1e-8

    def test_annotation_defaults(self):
        """Test that annotation thresholds have the documented defaults."""
        assert MIN_VISIBLE_PIXELS == 32
        assert IOU_THRESHOLD == 0.9
        assert MOCK_DEPTH_DISTANCE_MM == 6000.0
        assert SYNC_WINDOW_S == 0.020
        assert MAX_TUNING_CANDIDATES == 10**6

    def test_rig_defaults(self):
        """Test that the rig defaults describe eight 1296x1024 cameras."""
        assert RIG_CAMERA_COUNT == 8
        assert (IMAGE_WIDTH, IMAGE_HEIGHT) == (1296, 1024)

    @patch.dict(os.environ, {'POSELABEL_LOG': 'debug'})
    def test_log_level_from_env(self):
        """Test that POSELABEL_LOG is read and upper-cased."""
        import importlib
        import config
        importlib.reload(config)

        assert config.LOG_LEVEL == 'DEBUG'

    @patch.dict(os.environ, {'POSELABEL_WORKERS': '3'})
    def test_workers_from_env(self):
        """Test that POSELABEL_WORKERS sets the default worker count."""
        import importlib
        import config
        importlib.reload(config)

        assert config.DEFAULT_WORKERS == 3

    @patch.dict(os.environ, {'POSELABEL_WORKERS': 'many'})
    def test_workers_garbage_falls_back(self):
        """Test that a non-numeric worker count falls back to the core count."""
        import importlib
        import config
        importlib.reload(config)

        assert config.DEFAULT_WORKERS == (os.cpu_count() or 1)

    @patch.dict(os.environ, {'POSELABEL_CONFIG': '  site.yaml  '})
    def test_config_path_from_env(self):
        """Test that POSELABEL_CONFIG is stripped of whitespace."""
        import importlib
        import config
        importlib.reload(config)

        assert config.DEFAULT_CONFIG_PATH == 'site.yaml'

    def test_get_env_var_function(self):
        """Test the get_env_var function with various inputs."""
        assert get_env_var('POSELABEL_NONEXISTENT') is None
        assert get_env_var('POSELABEL_NONEXISTENT', 'default') == 'default'

        with patch.dict(os.environ, {'TEST_VAR': '  value  '}):
            assert get_env_var('TEST_VAR') == 'value'

        # Whitespace-only counts as unset
        with patch.dict(os.environ, {'TEST_VAR': '   '}):
            assert get_env_var('TEST_VAR') is None

    def test_get_env_int_function(self):
        """Test integer parsing with default fallback."""
        with patch.dict(os.environ, {'TEST_INT': ' 12 '}):
            assert get_env_int('TEST_INT') == 12
        with patch.dict(os.environ, {'TEST_INT': 'x'}):
            assert get_env_int('TEST_INT', 5) == 5
        assert get_env_int('POSELABEL_NONEXISTENT', 7) == 7


class TestErrors:
    """Test suite for the exit-code contract."""

    def test_io_errors_exit_one(self):
        """Test that I/O and parsing failures map to exit code 1."""
        for cls in (IoError, ParseError, UnsupportedFormat, SerializationError):
            assert cls("x").exit_code == EXIT_IO
        assert SchemaError('a.json', 'k').exit_code == EXIT_IO

    def test_domain_errors_exit_two(self):
        """Test that domain failures map to exit code 2."""
        for cls in (DegenerateConfiguration, ConfigError, OutputExists, ValidationFailed, InvalidInput):
            assert cls("x").exit_code == EXIT_DOMAIN
        assert isinstance(InvalidInput("x"), ValueError)

    def test_schema_error_names_file_and_key(self):
        """Test that SchemaError carries the file and key path in its message."""
        error = SchemaError('scene_gt.json', '0[1].cam_R_m2c', 'expected 9 finite numbers')
        assert 'scene_gt.json' in str(error)
        assert '0[1].cam_R_m2c' in str(error)
        assert error.key_path == '0[1].cam_R_m2c'


class TestConsole:
    """Test suite for logging setup and operator output."""

    def test_setup_logging_is_idempotent(self):
        """Test that repeated setup does not stack handlers."""
        console.setup_logging('INFO')
        before = len(logging.getLogger().handlers)
        console.setup_logging('DEBUG')
        assert len(logging.getLogger().handlers) == before
        assert logging.getLogger().level == logging.DEBUG
        console.setup_logging('INFO')

    def test_color_formatter_tags_level(self):
        """Test that the formatter renders the level name."""
        formatter = console.ColorFormatter('%(levelname_colored)s %(message)s')
        record = logging.LogRecord('poselabel', logging.WARNING, __file__, 1, 'careful', None, None)
        assert 'WARNING' in formatter.format(record)
        assert 'careful' in formatter.format(record)

    def test_status_lines(self, capsys):
        """Test that status helpers print their message with an emoji prefix."""
        console.success("done")
        console.error("broken")
        out = capsys.readouterr().out
        assert '✅' in out and 'done' in out
        assert '❌' in out and 'broken' in out


class TestPipelineConfig:
    """Test suite for the YAML pipeline configuration."""

    @pytest.fixture
    def config_file(self, tmp_path):
        """Write a small but complete pipeline config."""
        doc = {
            'paths': {'output': 'out', 'extrinsics': 'ext/extrinsics.json',
                      'mocap_log': 'mocap.csv', 'meshes': {2: 'models/box.ply'}},
            'cameras': {'cam0': {'fx': 800.0, 'fy': 800.0, 'cx': 323.5, 'cy': 255.5,
                                 'width': 648, 'height': 512}},
            'tuning': {'translation_range': 20.0, 'translation_step': 10.0,
                       'rotation_range': 0.0, 'threshold': 0.8},
            'annotation': {'min_visible_pixels': 10},
            'workers': 2,
            'seed': 5,
        }
        path = tmp_path / 'poselabel.yaml'
        path.write_text(yaml.safe_dump(doc))
        return path

    def test_load_resolves_relative_paths(self, config_file):
        """Test that relative paths resolve against the config directory."""
        config = load_pipeline_config(config_file)
        base = config_file.parent.resolve()
        assert config.paths.output == base / 'out'
        assert config.paths.extrinsics == base / 'ext' / 'extrinsics.json'
        assert config.paths.meshes == {2: base / 'models' / 'box.ply'}
        assert config.paths.frame_index is None

    def test_load_sections(self, config_file):
        """Test that every section is parsed into its typed form."""
        config = load_pipeline_config(config_file)
        assert config.cameras['cam0'] == CameraIntrinsics(800.0, 800.0, 323.5, 255.5, 648, 512)
        assert config.tuning.threshold == 0.8
        assert config.tuning.grid.candidate_count == 5 ** 3
        assert config.annotation.min_visible_pixels == 10
        assert config.workers == 2
        assert config.seed == 5

    def test_overrides_win(self, config_file):
        """Test that CLI overrides replace file values and None is ignored."""
        config = load_pipeline_config(config_file, {'workers': 7, 'seed': None, 'paths.output': 'other'})
        assert config.workers == 7
        assert config.seed == 5
        assert config.paths.output.name == 'other'

    def test_unknown_key_names_key_path(self, tmp_path):
        """Test that a misspelt key is reported with its full key path."""
        path = tmp_path / 'bad.yaml'
        path.write_text(yaml.safe_dump({'tuning': {'translation_rnage': 5}}))
        with pytest.raises(ConfigError, match='tuning.translation_rnage'):
            load_pipeline_config(path)

    def test_invalid_values_rejected(self):
        """Test that out-of-range numbers raise ConfigError naming the key."""
        with pytest.raises(ConfigError, match='tuning.threshold'):
            parse_pipeline_config({'tuning': {'threshold': 1.5}}, Path('.'))
        with pytest.raises(ConfigError, match='workers'):
            parse_pipeline_config({'workers': 0}, Path('.'))
        with pytest.raises(ConfigError, match='cameras.cam1'):
            parse_pipeline_config({'cameras': {'cam1': {'fx': -1, 'fy': 1, 'cx': 0, 'cy': 0,
                                                         'width': 10, 'height': 10}}}, Path('.'))

    def test_two_pass_flag(self):
        """Test that two_pass accepts booleans and the strings true/false, and nothing else."""
        assert parse_pipeline_config({'tuning': {'two_pass': True}}, Path('.')).tuning.grid.two_pass
        assert not parse_pipeline_config({'tuning': {'two_pass': 'false'}}, Path('.')).tuning.grid.two_pass
        assert parse_pipeline_config({'tuning': {'two_pass': 'True'}}, Path('.')).tuning.grid.two_pass
        with pytest.raises(ConfigError, match='tuning.two_pass'):
            parse_pipeline_config({'tuning': {'two_pass': 'maybe'}}, Path('.'))
        with pytest.raises(ConfigError, match='tuning.two_pass'):
            parse_pipeline_config({'tuning': {'two_pass': 1}}, Path('.'))

    def test_missing_file_is_io_error(self, tmp_path):
        """Test that a missing config exits with the I/O code."""
        with pytest.raises(IoError) as info:
            load_pipeline_config(tmp_path / 'nope.yaml')
        assert info.value.exit_code == EXIT_IO

    def test_invalid_yaml_is_parse_error(self, tmp_path):
        """Test that malformed YAML raises ParseError."""
        path = tmp_path / 'broken.yaml'
        path.write_text("paths: [unclosed\n")
        with pytest.raises(ParseError):
            load_pipeline_config(path)

    def test_dump_then_load(self, config_file, tmp_path):
        """Test that a dumped config loads back to the same settings."""
        config = load_pipeline_config(config_file)
        target = tmp_path / 'copy' / 'poselabel.yaml'
        dump_pipeline_config(config, target)
        again = load_pipeline_config(target)
        assert again.paths.output == config.paths.output
        assert again.paths.meshes == config.paths.meshes
        assert again.cameras == config.cameras
        assert again.tuning.grid == config.tuning.grid
        assert again.board == config.board
        assert again.synth == config.synth

    def test_missing_required_path(self):
        """Test that commands asking for an unset path get a ConfigError."""
        config = PipelineConfig()
        with pytest.raises(ConfigError, match='paths.frame_index'):
            config.paths.require('frame_index')
        with pytest.raises(ConfigError, match='cameras.cam9'):
            config.intrinsics('cam9')


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
