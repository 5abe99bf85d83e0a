import pytest

from lara.expr import Env
from lara.stdlib import demo_database


@pytest.fixture
def demo_db():
    return demo_database()


@pytest.fixture
def demo_env(demo_db):
    return Env(schema=dict(demo_db.schema))
