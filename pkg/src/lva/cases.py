"""The two worked examples shipped with the package (bus stop and bedside)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .backends.scripted import ScriptedFixture
from .episode import Dataset, load_dataset

SHELDON_QUESTION = "case_sheldon_bus_stop"
BEDSIDE_QUESTION = "case_bedside_window"


def cases_dir() -> Path:
    return Path(str(resources.files("lva") / "data" / "cases"))


def load_cases() -> tuple[Dataset, ScriptedFixture]:
    root = cases_dir()
    return load_dataset(root / "episodes", "cases"), ScriptedFixture.load(root / "fixtures.json")
