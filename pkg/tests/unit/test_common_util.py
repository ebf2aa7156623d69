import os
import pytest
import rigidflow.utils.common_util as util


def test_check_write_access(tmp_path):

    path = str(tmp_path / "nested" / "dir")
    util.check_write_access(path)

    assert os.path.isdir(path)
    assert os.listdir(path) == []


def test_check_write_access_on_a_file(tmp_path):

    blocker = tmp_path / "file.txt"
    blocker.write_text("content")

    with pytest.raises(PermissionError):
        util.check_write_access(str(blocker / "dir"))


def test_output_root(monkeypatch, tmp_path):

    assert util.output_root() == str(tmp_path / "out")

    monkeypatch.delenv(util.OUTPUT_ROOT_VARIABLE)
    assert util.output_root() == "."
    assert util.output_root("runs") == "runs"


@pytest.mark.parametrize("text, digest", [
    ("", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    ("abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
])
def test_hashes(tmp_path, text: str, digest: str):

    path = tmp_path / "data.txt"
    path.write_bytes(text.encode("utf-8"))

    assert util.text_hash(text) == digest
    assert util.file_hash(str(path)) == digest
