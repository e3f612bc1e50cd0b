"""Access to packaged data files (fixture KBs, seed templates, stopwords)."""
from __future__ import annotations

from importlib import resources


def data_text(name: str) -> str:
    return resources.files("guided_decode").joinpath("data", name).read_text("utf-8")


def data_path(name: str) -> str:
    """Filesystem path of a packaged data file (files are shipped unzipped)."""
    return str(resources.files("guided_decode").joinpath("data", name))
