import os
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.realpath(__file__)), '..', 'scripts'))

import pytest

from _zonesim.config import RunConfig
from _zonesim.floorplan import default_floorplan
from _zonesim.pipeline import cmd_pipeline

FIXTURES = os.path.join(os.path.dirname(os.path.realpath(__file__)), 'fixtures')

@pytest.fixture(scope='session')
def fixtures_dir():
	return FIXTURES

@pytest.fixture(scope='session')
def lab():
	return default_floorplan()

@pytest.fixture(scope='session')
def default_run(tmp_path_factory):
	"""One full pipeline run with the reference configuration, shared by the end-to-end tests."""
	out = tmp_path_factory.mktemp('default-run')
	cfg = RunConfig(out_dir=str(out))
	cmd_pipeline(cfg)
	return cfg, out
