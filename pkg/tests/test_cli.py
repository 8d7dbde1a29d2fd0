import json
import math

import numpy as np
import pytest

from bmil.cli import validate_config, run_experiment
from bmil.cli.main import main


def _base(kind, **kw):
    doc = {"kind": kind, "d": 2, "master_seed": 5, "workers": 1}
    doc.update(kw)
    return doc


class TestValidation:
    def test_unknown_kind(self):
        cfg, issues = validate_config({"kind": "frobnicate"})
        assert cfg is None
        assert any("unknown kind" in i.message for i in issues)

    def test_bad_dimension_path(self):
        cfg, issues = validate_config(_base("predict", d=4))
        assert cfg is None
        assert any(i.path == "d" for i in issues)

    def test_infinite_R_rejected_in_d2(self):
        doc = _base("tail-lower", R="inf", params={"n": 1000})
        cfg, issues = validate_config(doc)
        assert cfg is None
        assert any("R finite whenever d = 2" in i.message for i in issues)

    def test_infinite_R_allowed_in_d3(self):
        doc = _base("tail-lower", d=3, R="inf", params={"n": 1000})
        cfg, issues = validate_config(doc)
        assert cfg is not None
        assert cfg.R is None

    def test_minimal_predict_valid(self):
        cfg, issues = validate_config(_base("predict"))
        assert cfg is not None and not issues

    def test_exponent_needs_enough_levels(self):
        doc = _base("exponent", params={"levels": [1]})
        cfg, issues = validate_config(doc)
        assert cfg is None
        assert any("levels" in i.path for i in issues)

    def test_issue_paths_are_fieldwise(self):
        doc = _base("hitting", params={"triples": [[1.0, 2.0, 0.5]], "n": 10})
        cfg, issues = validate_config(doc)
        assert cfg is None
        paths_seen = {i.path for i in issues}
        assert "params.triples[0]" in paths_seen
        assert "params.n" in paths_seen

    def test_unknown_param_flagged(self):
        doc = _base("percolation", params={"gamma": 1.0, "bogus": 1})
        cfg, issues = validate_config(doc)
        assert cfg is None
        assert any(i.path == "params.bogus" for i in issues)

    def test_json_text_input(self):
        cfg, issues = validate_config(json.dumps(_base("predict")))
        assert cfg is not None


class TestPredict:
    def test_exact_strings_in_json(self, tmp_path):
        doc = _base("predict", packet={"M": 2, "N": 2}, out=str(tmp_path / "p"))
        cfg, _ = validate_config(doc)
        _, payload, status = run_experiment(cfg)
        assert status == "ok"
        res = payload["results"]
        assert res["xi_exact"] == "35/12"
        assert res["a_max"] == "70/11"
        data = json.loads((tmp_path / "p" / "summary.json").read_text())
        assert data["results"]["xi_exact"] == "35/12"
        assert "spectrum_table" in res

    def test_d3_pair_interval(self, tmp_path):
        doc = _base("predict", d=3, packet={"M": 2, "N": 2}, out=str(tmp_path / "p3"))
        cfg, _ = validate_config(doc)
        run_experiment(cfg)
        data = json.loads((tmp_path / "p3" / "summary.json").read_text())
        assert data["results"]["xi"] == {"interval": [1.0, 2.0]}


class TestDeterminism:
    def test_identical_checksums_across_runs_and_workers(self, tmp_path):
        results = []
        for run, workers in ((1, 1), (2, 1), (3, 2)):
            out = tmp_path / f"r{run}"
            doc = _base(
                "percolation",
                workers=workers,
                out=str(out),
                params={
                    "gamma": 1.0,
                    "depth": 6,
                    "n_trees": 600,
                    "box_trees": 5,
                    "box_window": [2, 6],
                    "hit_cell_level": 3,
                    "hit_trees": 200,
                },
            )
            cfg, issues = validate_config(doc)
            assert cfg is not None, issues
            manifest, _, status = run_experiment(cfg)
            assert status == "ok"
            results.append(
                {k: v for k, v in manifest.files.items() if k.endswith(".csv")}
            )
        assert results[0] == results[1] == results[2]

    def test_config_hash_stable(self, tmp_path):
        doc = _base("predict", out=str(tmp_path / "h"))
        cfg, _ = validate_config(doc)
        m1, _, _ = run_experiment(cfg)
        m2, _, _ = run_experiment(cfg)
        assert m1.config_hash == m2.config_hash


class TestCsvSchemas:
    def test_survival_and_fits_headers(self, tmp_path):
        out = tmp_path / "exp"
        doc = _base(
            "exponent",
            out=str(out),
            params={"levels": [1, 2, 4, 8], "n_per_level": 64, "dt0": 4e-4, "fit_window": [2, None]},
        )
        cfg, issues = validate_config(doc)
        assert cfg is not None, issues
        _, payload, status = run_experiment(cfg)
        assert status == "ok"
        sur = (out / "survival.csv").read_text().splitlines()
        assert sur[0] == "level,R,attempted,survived,cond_prob,stderr,cum_log_prob"
        assert len(sur) == 5
        fits = (out / "fits.csv").read_text().splitlines()
        assert fits[0] == "target,slope,stderr,intercept,r2,window_lo,window_hi"

    def test_percolation_header(self, tmp_path):
        out = tmp_path / "perc"
        doc = _base(
            "percolation",
            out=str(out),
            params={
                "gamma": 1.0, "depth": 5, "n_trees": 100, "box_trees": 0,
                "box_window": [2, 5], "hit_cell_level": 3, "hit_trees": 50,
            },
        )
        cfg, _ = validate_config(doc)
        run_experiment(cfg)
        perc = (out / "percolation.csv").read_text().splitlines()
        assert perc[0] == "trial,survived,depth,count_at_depth"
        assert len(perc) == 101

    def test_seventeen_digit_roundtrip(self, tmp_path):
        out = tmp_path / "rt"
        doc = _base(
            "exponent",
            out=str(out),
            params={"levels": [1, 2, 4, 8], "n_per_level": 64, "dt0": 4e-4, "fit_window": [2, None]},
        )
        cfg, _ = validate_config(doc)
        run_experiment(cfg)
        rows = (out / "survival.csv").read_text().splitlines()[1:]
        for row in rows:
            cum = float(row.split(",")[-1])
            assert f"{cum:.17g}" == row.split(",")[-1]


class TestMainEntry:
    def test_exit_code_config_error(self, tmp_path, capsys):
        cfgfile = tmp_path / "bad.json"
        cfgfile.write_text(json.dumps({"kind": "exponent", "d": 4, "params": {"levels": [1]}}))
        rc = main(["exponent", "--config", str(cfgfile)])
        assert rc == 2

    def test_predict_shortcut(self, tmp_path, capsys):
        rc = main(["predict", "--d", "2", "--M", "2", "--N", "2", "--out", str(tmp_path / "o")])
        assert rc == 0
        data = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert data["results"]["xi_exact"] == "35/12"

    def test_missing_config_for_heavy_kind(self):
        assert main(["exponent"]) == 2

    def test_extinction_exit_code(self, tmp_path):
        cfgfile = tmp_path / "ext.json"
        cfgfile.write_text(
            json.dumps(
                {
                    "kind": "exponent", "d": 2, "master_seed": 3,
                    "out": str(tmp_path / "ext"),
                    "packet": {"M": 3, "N": 3},
                    "params": {"levels": [1, 2, 4, 8, 16, 32, 64], "n_per_level": 2, "dt0": 4e-4},
                }
            )
        )
        rc = main(["exponent", "--config", str(cfgfile)])
        assert rc == 3
        data = json.loads((tmp_path / "ext" / "summary.json").read_text())
        assert data["status"] == "extinct"

    def test_infeasible_exit_code(self, tmp_path):
        cfgfile = tmp_path / "inf.json"
        cfgfile.write_text(
            json.dumps(
                {
                    "kind": "conditioned", "d": 3, "master_seed": 3,
                    "out": str(tmp_path / "inf"),
                    "params": {"r": 0.01, "b": 3.0, "c": 0.9, "n": 5},
                }
            )
        )
        rc = main(["conditioned", "--config", str(cfgfile)])
        assert rc == 4
        data = json.loads((tmp_path / "inf" / "summary.json").read_text())
        assert data["results"]["error"]["type"] == "infeasible"
