from contextlib import contextmanager
from functools import partial

import pytest
import ray


def get_default_fixture_ray_kwargs():
    ray_kwargs = {
        "num_cpus": 2,
        "object_store_memory": 150 * 1024 * 1024,
        "include_dashboard": False,
        "namespace": "default_test_namespace",
    }
    return ray_kwargs


@contextmanager
def _ray_start(**kwargs):
    init_kwargs = get_default_fixture_ray_kwargs()
    init_kwargs.update(kwargs)
    ray.init(**init_kwargs)
    try:
        yield
    finally:
        # The code after the yield will run as teardown code.
        ray.shutdown()


# Starts a local Ray instance inside the test body.
@pytest.fixture(scope="function")
def ray_start_local(request):
    param = getattr(request, "param", {})
    request.cls.ray_start_local = partial(_ray_start, **param)
