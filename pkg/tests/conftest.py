import json
import sys

import numpy as np
import pytest


def header_line(**fields) -> bytes:
    return json.dumps(fields).encode() + b"\n"


def corrupted_fixtures() -> dict[str, bytes]:
    """Ten byte strings that a GCT1 reader must reject."""
    good = np.arange(2 * 2 * 3, dtype="<f4").tobytes()
    std = dict(magic="GCT1", dtype="f32", shape=[2, 2, 3], kind="features")
    return {
        "bad_magic": header_line(**{**std, "magic": "GCT2"}) + good,
        "no_newline": json.dumps(std).encode(),
        "not_json": b"{magic: GCT1\n" + good,
        "header_is_list": b"[1, 2, 3]\n" + good,
        "short_payload": header_line(**{**std, "shape": [4, 4, 8]}) + np.zeros(100, "<f4").tobytes(),
        "long_payload": header_line(**std) + good + b"\x00\x00\x00\x00",
        "unknown_dtype": header_line(**{**std, "dtype": "f64"}) + good,
        "negative_shape": header_line(**{**std, "shape": [2, -2, 3]}) + good,
        "rank_mismatch": header_line(**{**std, "shape": [12]}) + good,
        "nan_payload": header_line(**std) + np.array([np.nan] * 12, "<f4").tobytes(),
    }


@pytest.fixture
def corrupt_files(tmp_path):
    paths = {}
    for name, blob in corrupted_fixtures().items():
        p = tmp_path / f"{name}.gct"
        p.write_bytes(blob)
        paths[name] = p
    return paths


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
