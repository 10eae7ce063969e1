"""Module tests"""

from dataclasses import replace
from unittest import mock

import pytest

import pgdbar.worker
from pgdbar.cf import process_methods
from pgdbar.scenarios import parse_config


@pytest.fixture()
def tiny_config():
    cfg = parse_config(case=2, environ={})
    return replace(cfg, elements=5, steps=16, m_max=2, j_max=4)


@pytest.mark.parametrize("name", ["lpgd1", "lpgd2", "hpgd"])
def test_process_method(tiny_config, name):
    pgdbar.worker.init_worker(tiny_config, {})
    method, field, report = pgdbar.worker.process_method(name)
    assert method == name
    assert report.method == name
    assert field.rank <= 2
    # without a comparison nothing is recorded
    assert report.ranks == []


def test_process_method_unknown(tiny_config):
    pgdbar.worker.init_worker(tiny_config, {})
    with pytest.raises(ValueError):
        pgdbar.worker.process_method("svd")


def test_process_methods_in_process(tiny_config):
    progress = mock.Mock()
    results = process_methods(["hpgd", "lpgd1"], tiny_config, {}, num_workers=1,
                              progress_bar=progress)
    assert set(results) == {"hpgd", "lpgd1"}
    assert progress.update.call_count == 2


def test_process_methods_pool(tiny_config):
    progress = mock.Mock()
    results = process_methods(["lpgd2", "hpgd"], tiny_config, {}, num_workers=2,
                              progress_bar=progress)
    assert set(results) == {"lpgd2", "hpgd"}
    assert sum(call[0][0] for call in progress.update.call_args_list) == 2


def test_process_methods_empty(tiny_config):
    assert process_methods([], tiny_config, {}) == {}
