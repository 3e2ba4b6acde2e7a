import random

import pytest


@pytest.fixture
def rng():
    """Seeded generator so randomized tests replay identically."""
    return random.Random(0xC0FFEE)
