import pytest

from lerwlab.manifest import CELL_STRIDE, ManifestError, load_manifest, parse_manifest_text

BASE = """\
[experiment]
schema_version = 1
name = demo
estimator = one_point
seed = 42
trials = 1000
workers = 4

[grid]
m = 8, 2^4, 32
x = 0.5 0 0, 0 0.25 0
"""


def test_parse_and_cells():
    man = parse_manifest_text(BASE)
    assert man.name == "demo" and man.seed == 42 and man.trials == 1000 and man.workers == 4
    cells = man.cells()
    assert len(cells) == 6
    assert cells[0].params == {"m": 8, "x": (0.5, 0.0, 0.0)}
    assert cells[3].params == {"m": 16, "x": (0.0, 0.25, 0.0)}
    assert cells[5].offset == 5 * CELL_STRIDE
    assert cells[1].key == '{"m":8,"x":[0.0,0.25,0.0]}'


def test_hash_ignores_operational_keys():
    a = parse_manifest_text(BASE)
    b = parse_manifest_text(BASE.replace("workers = 4", "workers = 1\noutput = elsewhere"))
    assert a.hash == b.hash
    assert a.hash != parse_manifest_text(BASE.replace("seed = 42", "seed = 43")).hash
    assert a.with_seed(43).hash == parse_manifest_text(BASE.replace("seed = 42", "seed = 43")).hash


def test_fractional_scales():
    man = parse_manifest_text(BASE.replace("m = 8, 2^4, 32", "m = 2^4.5"))
    assert man.cells()[0].params["m"] == pytest.approx(2**4.5)


@pytest.mark.parametrize("edit,line,field", [
    (("schema_version = 1", "schema_version = 2"), 2, "schema_version"),
    (("estimator = one_point", "estimator = bogus"), 4, "estimator"),
    (("seed = 42", "seed = -1"), 5, "seed"),
    (("trials = 1000", "trials = many"), 6, "trials"),
    (("x = 0.5 0 0, 0 0.25 0", "x = 0.5 0, 0 0.25 0"), 11, "x"),
    (("m = 8, 2^4, 32", "m = 8, abc"), 10, "m"),
    (("workers = 4", "colour = red"), 7, "colour"),
    (("x = 0.5 0 0, 0 0.25 0", "r = 0.1"), 11, "r"),
])
def test_errors_carry_line_and_field(edit, line, field):
    with pytest.raises(ManifestError) as e:
        parse_manifest_text(BASE.replace(*edit))
    assert e.value.line == line and e.value.field == field
    assert f"line {line}" in str(e.value)


def test_structural_errors(tmp_path):
    with pytest.raises(ManifestError, match="experiment"):
        parse_manifest_text("[grid]\nm = 8\n")
    with pytest.raises(ManifestError, match="missing grid key 'x'"):
        parse_manifest_text(BASE.replace("x = 0.5 0 0, 0 0.25 0", ""))
    with pytest.raises(ManifestError, match="missing required key 'seed'"):
        parse_manifest_text(BASE.replace("seed = 42\n", ""))
    with pytest.raises(ManifestError, match="unknown section"):
        parse_manifest_text(BASE + "\n[extra]\na = 1\n")
    with pytest.raises(ManifestError):
        parse_manifest_text("not an ini file")
    with pytest.raises(ManifestError, match="cannot read"):
        load_manifest(tmp_path / "absent.ini")
    p = tmp_path / "m.ini"
    p.write_text(BASE)
    assert load_manifest(p).source == str(p)


def test_text_keys_and_report_section():
    text = BASE.replace("estimator = one_point", "estimator = decoupling").replace(
        "x = 0.5 0 0, 0 0.25 0", "shape = point, 0.0625") + "\n[report]\nkind = power_law\nscale = m\n"
    man = parse_manifest_text(text)
    assert [c.params["shape"] for c in man.cells()[:2]] == ["point", 0.0625]
    assert man.report == {"kind": "power_law", "scale": "m"}
