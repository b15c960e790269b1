"""Shared fixtures.  The Lorenz pipeline fixture is session-scoped because a
full scan-and-close run takes tens of seconds and several tests consume it.
"""

import json

import numpy as np
import pytest

import lpflow.cli as cli


LORENZ_PIPELINE_DOC = {
    "field": {"family": "lorenz"},
    "simulate": {"x0": [1.0, 1.0, 1.0], "transient": 30.0, "t_final": 1000.0},
    "cocycle": {"T": 0.5},
    "pesin": {"eta": 0.3, "T": 0.5, "C": 10.0},
    "scan": {"D_rel": 0.05},
    "close": {"eps": 0.1, "max_candidates": 10, "max_duration": 25.0},
    "seed": 0,
}


@pytest.fixture(scope="session")
def lorenz_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "lorenz.json"
    doc = dict(LORENZ_PIPELINE_DOC)
    doc["out_dir"] = str(tmp_path_factory.mktemp("lorenz_out"))
    path.write_text(json.dumps(doc))
    return cli.load_config(path)


@pytest.fixture(scope="session")
def lorenz_scan(lorenz_config):
    """Trajectory, cocycle, splitting, certificates, and near-return
    candidates for the standard Lorenz parameters."""
    return cli.scan_pipeline(lorenz_config)


@pytest.fixture(scope="session")
def lorenz_closed(lorenz_config, lorenz_scan):
    """Closed periodic orbits with shadowing reports and spectra."""
    return cli.close_pipeline(lorenz_config, lorenz_scan, threads=4)


@pytest.fixture(scope="session")
def hopf_orbit():
    import lpflow.field as vf
    import lpflow.flow as fl
    import lpflow.orbits as ob
    spec = vf.hopf_cylinder()
    seg = fl.integrate_flow(spec, np.array([1.05, 0.0, 0.01]),
                            [0.0, 2.0 * np.pi])
    return spec, ob.close_orbit(spec, seg)
