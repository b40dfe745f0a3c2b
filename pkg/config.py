import os
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

def get_env_var(key: str, default: Optional[str] = None) -> Optional[str]:
    """Get environment variable with whitespace stripping and validation."""
    value = os.getenv(key, default)
    if value is not None:
        value = value.strip()
        # Return None if the value is empty after stripping
        if value == '':
            return None
    return value

def get_env_int(key: str, default: Optional[int] = None) -> Optional[int]:
    """Get an integer environment variable, falling back to default on garbage."""
    value = get_env_var(key)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default

# Runtime Configuration
LOG_LEVEL = (get_env_var('POSELABEL_LOG') or 'INFO').upper()
DEFAULT_WORKERS = get_env_int('POSELABEL_WORKERS') or os.cpu_count() or 1
DEFAULT_CONFIG_PATH = get_env_var('POSELABEL_CONFIG', 'poselabel.yaml')

# Geometry
Z_NEAR_MM = 1.0
ROTATION_TOLERANCE = 1e-9

# PnP Settings
PNP_MIN_POINTS = 6
PNP_MAX_ITER = 50
PNP_TOL_PX = 1e-8
LM_LAMBDA_INIT = 1e-3
LM_LAMBDA_MAX = 1e12
COPLANARITY_RATIO = 1e-3
DUPLICATE_POINT_MM = 1e-6

# Checkerboard (non-authoritative: the physical board only fixes its outer size)
BOARD_INNER_COLS = 7
BOARD_INNER_ROWS = 10
BOARD_SQUARE_MM = 100.0
BOARD_WIDTH_MM = 841.0
BOARD_HEIGHT_MM = 1189.0
MIN_ORIENTATION_DIVERSITY_DEG = 5.0
CORNER_MARGIN_FRACTION = 0.10

# Tuning
IOU_THRESHOLD = 0.9
TUNING_TRANSLATION_RANGE_MM = 50.0
TUNING_TRANSLATION_STEP_MM = 10.0
TUNING_ROTATION_RANGE_DEG = 2.0
TUNING_ROTATION_STEP_DEG = 0.5
MAX_TUNING_CANDIDATES = 10**6

# Annotation
MIN_VISIBLE_PIXELS = 32
MOCK_DEPTH_DISTANCE_MM = 6000.0
DEPTH_SCALE = 1.0
SYNC_WINDOW_S = 0.020
MAX_CAMERAS_PER_SCENE = 8

# Synthetic Facility
RIG_CAMERA_COUNT = 8
IMAGE_WIDTH = 1296
IMAGE_HEIGHT = 1024
FRAME_RATE_FPS = 5.0
MOCAP_JITTER_MM = 0.5
MOCAP_JITTER_DEG = 0.05
