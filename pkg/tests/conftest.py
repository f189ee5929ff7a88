from pathlib import Path

import pytest

from mapclean.simulate import load_scenario, render_sequence

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

_rendered = {}


def rendered(name):
    """Render a committed scenario once per session."""
    if name not in _rendered:
        sc = load_scenario(SCENARIO_DIR / f"{name}.yaml")
        _rendered[name] = (sc, render_sequence(sc))
    return _rendered[name]


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIO_DIR
