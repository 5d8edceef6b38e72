import json

import pytest

from hierdet import BBox, Detection, LabelHierarchy, parse_hierarchy


@pytest.fixture
def chain():
    """A -> B -> C."""
    return LabelHierarchy({"A": [], "B": ["A"], "C": ["B"]})


@pytest.fixture
def diamond():
    """A -> {B, C} -> D."""
    return LabelHierarchy({"A": [], "B": ["A"], "C": ["A"], "D": ["B", "C"]})


@pytest.fixture
def box():
    return BBox(0.1, 0.2, 0.5, 0.6)


@pytest.fixture
def write_hierarchy(tmp_path):
    def _write(doc, name="hierarchy.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return path
    return _write


CHAIN_DOC = {"LabelName": "/m/0bl9f", "Subcategory": [
    {"LabelName": "A", "Subcategory": [
        {"LabelName": "B", "Subcategory": [{"LabelName": "C"}]}]}]}


@pytest.fixture
def chain_doc():
    return CHAIN_DOC


def det(label, score, box, image="img1"):
    return Detection(image, label, score, BBox(*box))


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
