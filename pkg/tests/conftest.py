import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixturedata import build_corpus_tree, write_playbook


@pytest.fixture
def corpus_tree(tmp_path):
    """Four-visit corpus; returns (corpus_dir, manifest_path)."""
    corpus_dir = build_corpus_tree(tmp_path)
    return corpus_dir, tmp_path / "manifest.tsv"


@pytest.fixture
def all_eval_manifest(tmp_path):
    return tmp_path / "manifest_all_eval.tsv"


@pytest.fixture
def playbook_path(tmp_path):
    return write_playbook(tmp_path / "playbook.json")
