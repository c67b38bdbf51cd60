import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("spatiospatial", deadline=None, max_examples=50)
settings.load_profile("spatiospatial")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-architecture gradient checks and desk-scale training runs")
