import os
import pathlib

import pytest

import tensormorph as tm

DATA = pathlib.Path(os.environ.get("TENSORMORPH_TEST_DATA", pathlib.Path(__file__).parent.parent / "data"))


def sample():
    return tm.read_mtx(str(DATA / "sample.mtx"))


def test_formats():
    assert {"coo", "csr", "csc", "dia", "ell", "bcsr", "sky"} <= set(tm.formats())
    assert "compressed" in tm.format_text("csr")


def test_convert_csr_arrays():
    csr, trace = tm.convert(sample(), "csr")
    assert csr.format == "csr"
    assert csr.levels[1]["pos"] == [0, 2, 4, 7, 9]
    assert csr.levels[1]["crd"] == [0, 1, 1, 3, 0, 2, 5, 4, 5]
    assert trace["analysis"]["visits"] == 9


def test_round_trip_all_formats():
    src = sample()
    coords, values = src.entries()
    for name in tm.formats():
        out, _ = tm.convert(src, name)
        assert out.entries() == (coords, values)
        back, _ = tm.convert(out, "coo")
        assert back.entries() == (coords, values)


def test_via_matches_direct():
    src = sample()
    direct, _ = tm.convert(src, "dia")
    via, _ = tm.convert(src, "dia", via="csr")
    assert via == direct


def test_query():
    csr, _ = tm.convert(sample(), "csr")
    res = tm.query(csr, "select [i] -> count(j) as nnz, min(j) as lo")
    assert res["nnz"] == [2, 2, 3, 2]
    assert res["lo"] == [0, 1, 0, 4]
    empty = tm.from_entries([2, 2], [[0, 0]], [1.0])
    assert tm.query(empty, "select [i] -> max(j) as hi")["hi"] == [0, None]


def test_explain():
    text = tm.explain("csr", "dia")
    assert "edge-insertion: none" in text
    assert "param: M=2" in tm.explain("coo", "bcsr", params={"M": 2})


def test_dump_load(tmp_path):
    csr, _ = tm.convert(sample(), "csr")
    blob = tm.dump(csr)
    assert blob[:5] == b"TMRL1"
    assert tm.load(blob) == csr
    path = tmp_path / "x.mtx"
    tm.write_mtx(str(path), csr)
    assert tm.read_mtx(str(path)).entries() == csr.entries()


def test_errors():
    with pytest.raises(tm.TensorMorphError, match="UnknownFormat"):
        tm.convert(sample(), "hyb")
    with pytest.raises(tm.TensorMorphError, match="BadMagic"):
        tm.load(b"XXXXXXXX")


def test_define_format():
    text = "name: rows-only\nremap: (i,j) -> (i,j)\nlevels:\n  dense\n  compressed\nqueries:\n  1: select [i] -> count(j) as n\n"
    if "rows-only" not in tm.formats():
        assert tm.define_format(text) == "rows-only"
    out, _ = tm.convert(sample(), "rows-only")
    assert out.levels[1]["pos"] == [0, 2, 4, 7, 9]
