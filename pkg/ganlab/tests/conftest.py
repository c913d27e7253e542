import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toyset import build_toyset  # noqa: E402


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    return build_toyset(tmp_path_factory.mktemp("toyset"), n=16)


@pytest.fixture(scope="session")
def overfit_manifest(tmp_path_factory):
    return build_toyset(tmp_path_factory.mktemp("overfit"), n=8)
