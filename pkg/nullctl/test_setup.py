#!/usr/bin/env python3
"""
Test script to verify nullctl setup
"""

import logging
import os


def test_imports():
    """Test that all required modules can be imported"""
    import click
    import dotenv
    import numpy
    import pandas
    import pydantic
    import rich
    import scipy
    import tqdm

    assert pydantic.VERSION.startswith('2')
    for module in (click, dotenv, numpy, pandas, rich, scipy, tqdm):
        assert module.__name__


def test_config():
    """Test configuration loading"""
    from nullctl import config

    assert config.OUTPUT_DIR
    assert config.LOG_LEVEL in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
    assert config.MIN_C0 == 32
    assert config.DEFAULT_C0 > config.MIN_C0
    assert config.L1_STARTS == 32
    assert config.NEGATIVE_DEMO_RUNS == 16
    assert config.SENTINEL_SIGMA_RATIO == 1e-14


def test_utils(tmp_path):
    """Test utility functions"""
    from nullctl.utils import atomic_write_text, ensure_directory_exists, setup_logging

    log_file = tmp_path / 'nullctl.log'
    logger = setup_logging(logging.INFO, str(log_file))
    logger.info("Testing logging system")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert 'Testing logging system' in log_file.read_text()

    target = tmp_path / 'nested' / 'dir'
    ensure_directory_exists(str(target))
    assert target.is_dir()

    path = atomic_write_text(str(target / 'table.csv'), 'a,b\n1,2\n')
    assert open(path).read() == 'a,b\n1,2\n'
    assert [name for name in os.listdir(target) if name.startswith('.tmp-')] == []
    setup_logging(logging.WARNING)
