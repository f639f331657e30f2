import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

RUN_SLOW = os.getenv("NSBENCH_RUN_SLOW", "0") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running convergence tests (set NSBENCH_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set NSBENCH_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_domain():
    from utils.geometry_utils import DomainSpec

    return DomainSpec(x_min=-5.0, x_max=10.0, y_half=5.0)


@pytest.fixture(scope="session")
def cylinder_mesh(small_domain):
    """Graded P4-curved mesh of a short channel around the unit cylinder."""
    from utils.geometry_utils import MeshParams, build_domain
    from utils.mesh_utils import generate_mesh

    # the short channel ends well inside the log-linear grading distance
    params = MeshParams(h_max=1.0, grading_ratio=4.0, geometry_order=4, grading_law="linear")
    return generate_mesh(build_domain(small_domain), params)


@pytest.fixture(scope="session")
def cylinder_mesh_file(cylinder_mesh, tmp_path_factory):
    from utils.mesh_utils import save_mesh

    path = tmp_path_factory.mktemp("meshes") / "small.nsmesh"
    save_mesh(cylinder_mesh, path)
    return path
