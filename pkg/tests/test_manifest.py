import json

import numpy as np
import pandas as pd
import pytest

from flipped_risk import __version__
from flipped_risk.errors import DataError
from flipped_risk.manifest import HASH_PREFIX, inputs_digest, read_csv, sha256_file, write_csv, write_manifest


@pytest.fixture
def inputs(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("a,b\n1,2\n", encoding="utf-8")
    schema = tmp_path / "data.schema"
    schema.write_text("a numeric outcome\nb numeric relevant\n", encoding="utf-8")
    return {"data": data, "schema": schema}


def test_digest_depends_on_contents_and_config(inputs):
    config = {"flag": {"alpha": 0.1}}
    first = inputs_digest(inputs, config)
    assert first == inputs_digest(dict(reversed(list(inputs.items()))), config)
    assert first != inputs_digest(inputs, {"flag": {"alpha": 0.2}})
    inputs["data"].write_text("a,b\n1,3\n", encoding="utf-8")
    assert first != inputs_digest(inputs, config)


def test_csv_carries_the_digest_line(tmp_path):
    frame = pd.DataFrame({"row_id": [1, 2], "score": [1 / 3, 2.0]})
    path = write_csv(frame, tmp_path / "nested" / "scores.csv", "abc123")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"{HASH_PREFIX}abc123"
    assert lines[1] == "row_id,score"
    assert lines[2] == "1,0.3333333333"
    again, digest = read_csv(path)
    assert digest == "abc123"
    np.testing.assert_allclose(again["score"], [0.3333333333, 2.0])


def test_identical_frames_give_identical_bytes(tmp_path):
    frame = pd.DataFrame({"x": np.linspace(0, 1, 7)})
    first = write_csv(frame, tmp_path / "a.csv", "d")
    second = write_csv(frame.copy(), tmp_path / "b.csv", "d")
    assert sha256_file(first) == sha256_file(second)


def test_read_csv_needs_the_header(tmp_path):
    plain = tmp_path / "plain.csv"
    plain.write_text("x\n1\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_csv(plain)
    with pytest.raises(DataError):
        read_csv(tmp_path / "absent.csv")


def test_manifest_records_inputs_outputs_and_seeds(tmp_path, inputs):
    output = write_csv(pd.DataFrame({"x": [1]}), tmp_path / "out" / "x.csv", "d")
    path = write_manifest(
        tmp_path / "out", "flag-alpha0.10", {"mcmc": 3}, {"flag": {"alpha": 0.1}}, inputs, [output]
    )
    assert path.name == "manifest-flag-alpha0.10.json"
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["command"] == "flag-alpha0.10"
    assert document["version"] == __version__
    assert document["seeds"] == {"mcmc": 3}
    assert document["inputs"]["data"]["sha256"] == sha256_file(inputs["data"])
    assert document["outputs"] == {"x.csv": sha256_file(output)}
    assert "git_describe" in document
