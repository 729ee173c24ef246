# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from pathlib import Path

import pytest

import rgnmr
from rgnmr.errors import InvalidArgumentError
from rgnmr.utils.environment import get_default_seed, get_default_threads, get_log_level


def test_defaults(monkeypatch):
    monkeypatch.delenv("RGNMR_SEED", raising=False)
    monkeypatch.delenv("RGNMR_THREADS", raising=False)
    monkeypatch.delenv("RGNMR_LOG_LEVEL", raising=False)

    assert get_default_seed() == 0
    assert get_default_threads() == 1
    assert get_log_level() == "INFO"


def test_values_from_environment(monkeypatch):
    monkeypatch.setenv("RGNMR_SEED", "42")
    monkeypatch.setenv("RGNMR_THREADS", "4")
    monkeypatch.setenv("RGNMR_LOG_LEVEL", "debug")

    assert get_default_seed() == 42
    assert get_default_threads() == 4
    assert get_log_level() == "DEBUG"


@pytest.mark.parametrize(
    "name, value, accessor",
    [
        ("RGNMR_SEED", "-1", get_default_seed),
        ("RGNMR_SEED", "abc", get_default_seed),
        ("RGNMR_THREADS", "0", get_default_threads),
    ],
)
def test_rejects_bad_values(monkeypatch, name, value, accessor):
    monkeypatch.setenv(name, value)

    with pytest.raises(InvalidArgumentError):
        accessor()


def test_package_resolves_to_sources():
    package_dir = Path(rgnmr.__file__).parent

    assert package_dir.parent.name == "src"
    assert (package_dir / "errors.py").is_file()
