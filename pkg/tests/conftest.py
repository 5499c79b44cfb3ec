import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def fixtures_dir() -> str:
    return FIXTURES


@pytest.fixture(scope="session")
def fixture_patch(fixtures_dir) -> str:
    """Path of the frozen test-split patch used by the contract tests."""
    import json

    manifest = json.load(open(os.path.join(fixtures_dir, "patches",
                                           "manifest.json")))
    return os.path.join(fixtures_dir, "patches", manifest["test"][0])
