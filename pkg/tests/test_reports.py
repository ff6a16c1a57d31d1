import json
import os

import numpy as np
import pandas as pd

from reports import summary_frame, write_csv, write_json


def test_write_json_is_sorted_and_handles_numpy(tmp_path):
    path = tmp_path / "doc.json"
    write_json({"b": np.float64(0.5), "a": np.arange(3), "flag": np.bool_(True), "z": 1 + 2j}, str(path))
    text = path.read_text()
    assert text.endswith("}\n")
    doc = json.loads(text)
    assert list(doc) == ["a", "b", "flag", "z"]
    assert doc["a"] == [0, 1, 2]
    assert doc["flag"] is True
    assert doc["z"] == {"re": 1.0, "im": 2.0}


def test_write_csv_keeps_full_precision(tmp_path):
    path = tmp_path / "table.csv"
    value = 0.1 + 0.2
    write_csv(pd.DataFrame({"h": [value], "mu1": [1e-20]}), str(path))
    again = pd.read_csv(path, float_precision="round_trip")
    assert again["h"].iloc[0] == value
    assert again["mu1"].iloc[0] == 1e-20
    assert "\r" not in path.read_text()


def test_atomic_write_leaves_no_temporaries(tmp_path):
    write_json({"a": 1}, str(tmp_path / "nested" / "doc.json"))
    assert os.listdir(tmp_path / "nested") == ["doc.json"]


def test_summary_frame():
    df = summary_frame({"S_min": 0.25, "status": "passed"})
    assert list(df.columns) == ["Metric", "Value"]
    assert df["Value"].tolist() == ["0.25", "passed"]
