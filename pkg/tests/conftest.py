import json
from pathlib import Path

import numpy as np
import pytest

from ncpopt import load_tree, preference_from_dict

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_tree(name):
    return load_tree(FIXTURES / name)


def fixture_pref(name):
    return preference_from_dict(json.loads((FIXTURES / name).read_text()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
