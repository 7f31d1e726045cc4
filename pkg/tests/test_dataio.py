import math

import numpy as np
import pytest

from hnpgof.dataio import (
    WALLEYE_ENV,
    ConfigError,
    DataError,
    load_csv,
    parse_scenario_config,
    parse_study_config,
    resolve_path,
    walleye_available,
)
from hnpgof.distributions import FamilyTag


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_spider_bundle(self, spider):
        with open(resolve_path("spider"), encoding="utf-8") as fh:
            rows = sum(1 for line in fh if line.strip()) - 1
        assert spider.n == rows == 28 and spider.k == 2
        assert spider.column_names == ["(Intercept)", "soil.dry"]
        assert spider.y.dtype.kind == "i" and spider.y.min() >= 0

    def test_columns_and_transform(self, tmp_path):
        path = write(tmp_path, "y,a,b\n1,0.0,5\n4,1.0,6\n0,3.0,7\n")
        d = load_csv(path, "y", ["a", "b"], {"a": "log1p"})
        np.testing.assert_array_equal(d.y, [1, 4, 0])
        np.testing.assert_allclose(d.X[:, 1], np.log1p([0.0, 1.0, 3.0]))
        np.testing.assert_allclose(d.X[:, 2], [5, 6, 7])
        assert d.column_names == ["(Intercept)", "log1p(a)", "b"]

    def test_intercept_only(self, tmp_path):
        d = load_csv(write(tmp_path, "y\n1\n2\n"), "y", [])
        assert d.k == 1

    def test_blank_lines_skipped(self, tmp_path):
        d = load_csv(write(tmp_path, "y,x\n1,2\n\n3,4\n"), "y", ["x"])
        assert d.n == 2

    @pytest.mark.parametrize("text,match", [
        ("", "no data rows"),
        ("y,x\n", "no data rows"),
        ("y,x\n1,2\n2.5,3\n", r"row 3, column 'y'.*2\.5"),
        ("y,x\n1,abc\n", r"row 2, column 'x'.*'abc'"),
        ("y,x\n-1,0\n", "negative count"),
        ("y,x\none,0\n", r"row 2, column 'y'"),
        ("y,x\n1,2,3\n", "expected 2 fields"),
        ("y,z\n1,2\n", "missing column 'x'"),
    ])
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(DataError, match=match):
            load_csv(write(tmp_path, text), "y", ["x"])

    def test_bad_transform(self, tmp_path):
        path = write(tmp_path, "y,x\n1,2\n")
        with pytest.raises(DataError, match="unknown transform"):
            load_csv(path, "y", ["x"], {"x": "sqrt"})
        with pytest.raises(DataError, match="not a covariate"):
            load_csv(path, "y", ["x"], {"w": "log1p"})
        with pytest.raises(DataError, match="log1p undefined"):
            load_csv(write(tmp_path, "y,x\n1,-1\n", "e.csv"), "y", ["x"], {"x": "log1p"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "absent.csv", "y")

    def test_walleye_requires_local_copy(self, monkeypatch):
        monkeypatch.delenv(WALLEYE_ENV, raising=False)
        assert not walleye_available()
        with pytest.raises(DataError, match=WALLEYE_ENV):
            load_csv("walleye")


SCENARIO = """\
# defaults shared by all sections
seed = 5
reps = 3

[scenario]
name = exp3
parent = nbquad
phi = 7
n = 30, 40

[scenario]
parent = zinb
phi = 0.5
nu = 0.6
beta = 0.5, 1.0
families = poisson, zinb
p = 2
"""


class TestScenarioConfig:
    def test_parse(self):
        a, b, c = parse_scenario_config(SCENARIO, "s.cfg")
        assert (a.label, b.label, a.n, b.n) == ("exp3 n=30", "exp3 n=40", 30, 40)
        assert a.parent is FamilyTag.NBQUAD and a.phi == 7.0 and a.reps == 3 and a.seed == 5
        assert c.parent is FamilyTag.ZINB and c.nu == 0.6 and c.beta == (0.5, 1.0)
        assert c.candidate_families == (FamilyTag.POISSON, FamilyTag.ZINB) and c.p_values == (2,)

    def test_overrides(self):
        cfgs = parse_scenario_config(SCENARIO, seed=9, reps=1000)
        assert all(c.seed == 9 and c.reps == 1000 for c in cfgs)

    def test_beta_pair_keys(self):
        (cfg,) = parse_scenario_config("parent = poisson\nbeta0 = 2\nbeta1 = -1\n")
        assert cfg.beta == (2.0, -1.0)

    @pytest.mark.parametrize("text,line", [
        ("parent = poisson\nreps = 0\n", 2),
        ("parent = poisson\ncolour = red\n", 2),
        ("[scenario]\nparent = binomial\n", 2),
        ("[other]\nparent = poisson\n", 1),
        ("parent = poisson\nn = ten\n", 2),
        ("parent poisson\n", 1),
        ("parent = poisson\nnu = 0.3\n", None),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(ConfigError) as info:
            parse_scenario_config(text, "bad.cfg")
        if line is not None:
            assert info.value.line == line
            assert f"bad.cfg:line {line}" in str(info.value)

    def test_empty(self):
        with pytest.raises(ConfigError):
            parse_scenario_config("# nothing\n")


class TestStudyConfig:
    def test_parse(self):
        cfg = parse_study_config(
            "[study]\nparents = poisson:1, nbquad:2\nn = 20, 50\nreps = 2\nseed = 3\n"
            "penalties = constant, tanh\nscalings = none\ngamma2 = 0.25\n")
        assert cfg.parents == ((FamilyTag.POISSON, 1.0), (FamilyTag.NBQUAD, 2.0))
        assert cfg.sample_sizes == (20, 50) and cfg.reps == 2 and cfg.seed == 3
        assert cfg.penalties == ("constant", "tanh") and cfg.scalings == ("none",)
        assert math.isclose(cfg.hyper.gamma2, 0.25) and cfg.hyper.gamma == 1.0

    @pytest.mark.parametrize("text", ["reps = 0\n", "parents = poisson:abc\n", "penalties = cubic\n",
                                      "[study]\n[study]\n", "bogus = 1\n"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_study_config(text)
