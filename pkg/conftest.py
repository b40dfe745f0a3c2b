import json
from pathlib import Path
import pytest

from config import get_env_var


BOUNDS_PATH = Path(__file__).parent / 'fixtures' / 'regression_bounds.json'


class RegressionBounds:
    """Monte-Carlo bounds committed in fixtures/regression_bounds.json.

    Every measurement must stay under its section's ceiling. With recording
    on, the measurement times ``factor`` is stored as the new bound;
    otherwise it is checked against the recorded bound when one exists.
    """

    def __init__(self, path: Path, recording: bool):
        self.path = path
        self.recording = recording
        self.doc = json.loads(path.read_text())
        self.changed = False

    def __getitem__(self, section):
        return self.doc[section]

    def check(self, section: str, key: str, measured: float) -> None:
        entry = self.doc[section]
        ceiling = entry['ceilings'][key]
        assert measured < ceiling, f"{section}.{key} = {measured:.4g}, ceiling {ceiling}"
        if self.recording:
            entry['recorded'][key] = round(float(measured) * self.doc['factor'], 6)
            self.changed = True
            return
        bound = entry['recorded'].get(key)
        if bound is not None:
            assert measured < bound, f"{section}.{key} = {measured:.4g}, recorded bound {bound}"

    def save(self) -> None:
        if self.changed:
            self.path.write_text(json.dumps(self.doc, indent=2) + "\n")


@pytest.fixture(scope='session')
def regression_bounds():
    recording = (get_env_var('POSELABEL_RECORD_BOUNDS') or '').lower() in ('1', 'true', 'yes')
    bounds = RegressionBounds(BOUNDS_PATH, recording)
    yield bounds
    bounds.save()
