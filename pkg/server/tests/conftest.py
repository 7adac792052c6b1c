import sys

import pytest

from clozeforge.bridge import open_session


def server_argv(*extra, model="dummy"):
    return [sys.executable, "-m", "lm_bridge_server.server", "--model", model, *extra]


@pytest.fixture
def dummy_session():
    session = open_session(server_argv(), timeout=15)
    yield session
    session.close()
