import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from htla.hierarchy import parse_taxonomy


@pytest.fixture
def small_tax():
    # two top-level labels, depth 2
    return parse_taxonomy("Root\tA\tB\nA\tA1\tA2\nB\tB1")


@pytest.fixture
def chain_tax():
    return parse_taxonomy("Root\tA\nA\tA1\nA1\tA1a")
