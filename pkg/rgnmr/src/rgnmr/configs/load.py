# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from pathlib import Path

import yaml

from rgnmr.errors import InvalidArgumentError
from rgnmr.simulation.sweep import SweepConfig

PRESETS = [
    "oversampling",
    "overparameterization",
    "condition_number",
    "outliers_fraction",
    "power_law",
    "additive_noise",
    "phase_transition",
]


def load(preset: str) -> dict:
    # Presets are the YAML files next to this module
    file_path = Path(__file__).parent / f"{preset}.yaml"

    with open(file_path, "r") as file:
        return yaml.safe_load(file)


def load_sweep(name_or_path: str | Path) -> SweepConfig:
    """Loads a packaged preset by name, or a YAML file by path."""

    if str(name_or_path) in PRESETS:
        return SweepConfig.model_validate(load(str(name_or_path)))

    path = Path(name_or_path)
    if not path.is_file():
        raise InvalidArgumentError(
            f"'{name_or_path}' is neither a preset ({', '.join(PRESETS)}) nor a file"
        )

    return SweepConfig.from_yaml(path)
