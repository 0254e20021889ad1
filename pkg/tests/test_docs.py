"""Test for the documentation."""

import shlex
import subprocess
import sys

from importlib.util import find_spec
from pathlib import Path

import pytest

from conftest import PROJECT_ROOT_DIR


@pytest.fixture(name="site_dir", scope="module")
def fixture_site_dir(pytestconfig: pytest.Config, tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Where the documentation site is built."""
    if xml_path := pytestconfig.getoption("xmlpath"):
        site_path = (Path(str(xml_path)).parent / ".site_html/").resolve()
        site_path.mkdir(parents=True, exist_ok=True)
        return site_path
    return tmp_path_factory.mktemp(f"site_{sys.version_info.major}{sys.version_info.minor}")


@pytest.mark.docs
@pytest.mark.slow
@pytest.mark.skipif(find_spec("mkdocs") is None, reason="The mkdocs package is not installed.")
def test_docs_html(site_dir: Path) -> None:
    """Build the site in strict mode and check every page was rendered."""
    subprocess.check_call(  # noqa: S603
        shlex.split(f"mkdocs build --strict --site-dir={site_dir.as_posix()}"),
        cwd=PROJECT_ROOT_DIR,
    )

    for page in ("basic_usage", "checkpoint_format", "csv_schemas", "glossary", "reference"):
        assert (site_dir / page / "index.html").is_file(), page
    assert "retnet_lab.retention.paradigms" in (site_dir / "reference" / "index.html").read_text(
        encoding="utf-8"
    )
