import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from bmil_plots import FigureSpec, SchemaError, render
from bmil_plots.cli import main
from bmil_plots.figures import read_csv


SURVIVAL = """level,R,attempted,survived,cond_prob,stderr,cum_log_prob
0,1,512,512,1,0,0
1,2,512,199,0.38867187500000000,0.021543,-0.94497874046704798
2,4,512,209,0.40820312500000000,0.021721,-1.84097379324958066
"""

FITS = """target,slope,stderr,intercept,r2,window_lo,window_hi
cum_log_prob_vs_log_R,-1.2921,0.02,0.04,0.999,1.3862943611198906,4.8520302639196169
"""

TAILS = """delta,count_below,n,log_prob,stderr
0.25,4107,100000,-3.1926,0.0152
0.125,2611,100000,-3.6456,0.0193
0.0625,1610,100000,-4.1292,0.0247
"""

SPECTRUM = """a,k,N_k,zero_cells
2,3,14.5,0.25
2,4,49.75,1.5
2,5,166,6.25
3,3,4.25,0.25
3,4,9.5,1.5
3,5,21.75,6.25
"""

PREDICT = {
    "schema_version": "1",
    "kind": "predict",
    "status": "ok",
    "config": {},
    "results": {
        "xi": 35 / 12,
        "xi_exact": "35/12",
        "a_max": "70/11",
        "tail_slope": 35 / 24,
        "spectrum_table": {
            "a": [2.0, 3.0, 4.0, 5.0, 70 / 11],
            "f": [2.0, 1.0277777777777777, 0.5416666666666666, 0.25, 0.0],
        },
    },
}

TREE = """0 0 0
1 0 1
1 1 0
2 1 2
2 2 1
2 3 3
"""


@pytest.fixture
def files(tmp_path):
    (tmp_path / "survival.csv").write_text(SURVIVAL)
    (tmp_path / "fits.csv").write_text(FITS)
    (tmp_path / "tails.csv").write_text(TAILS)
    (tmp_path / "spectrum.csv").write_text(SPECTRUM)
    (tmp_path / "predict.json").write_text(json.dumps(PREDICT))
    (tmp_path / "tree.txt").write_text(TREE)
    return tmp_path


def _sha(values):
    return hashlib.sha256(np.asarray(values, dtype=np.float64).tobytes()).hexdigest()


class TestSchemas:
    def test_header_must_match(self, files):
        bad = files / "bad.csv"
        bad.write_text("level,R,attempted,survived,probability\n0,1,2,2,1\n")
        spec = FigureSpec(kind="survival", inputs=[str(bad)], out=str(files / "x.png"))
        with pytest.raises(SchemaError) as ei:
            render(spec)
        assert "schema" in str(ei.value)

    def test_unknown_column_named(self, files):
        bad = files / "tails_bad.csv"
        bad.write_text("delta,count_below,n,log_prob,sigma\n0.5,1,10,-1,0.1\n")
        spec = FigureSpec(kind="tail", inputs=[str(bad)], out=str(files / "x.png"))
        with pytest.raises(SchemaError) as ei:
            render(spec)
        assert "sigma" in str(ei.value) or "stderr" in str(ei.value)

    def test_missing_file(self, files):
        with pytest.raises(SchemaError):
            FigureSpec(kind="tail", inputs=[str(files / "nope.csv")], out="x.png")

    def test_predict_schema_version_checked(self, files):
        bad = files / "pred_bad.json"
        doc = dict(PREDICT)
        doc["schema_version"] = "999"
        bad.write_text(json.dumps(doc))
        spec = FigureSpec(
            kind="survival",
            inputs=[str(files / "survival.csv")],
            predict=str(bad),
            out=str(files / "x.png"),
        )
        with pytest.raises(SchemaError) as ei:
            render(spec)
        assert "schema_version" in str(ei.value)


class TestRender:
    def test_survival_with_reference(self, files):
        out = files / "survival.png"
        spec = FigureSpec(
            kind="survival",
            inputs=[str(files / "survival.csv"), str(files / "fits.csv")],
            predict=str(files / "predict.json"),
            out=str(out),
        )
        info = render(spec)
        assert out.exists() and out.stat().st_size > 1000
        key = str(files / "survival.csv") + ":cum_log_prob"
        cols = read_csv(files / "survival.csv", "survival")
        assert info["hashes"][key] == _sha(cols["cum_log_prob"])

    def test_tail_renders(self, files):
        out = files / "tail.png"
        spec = FigureSpec(
            kind="tail",
            inputs=[str(files / "tails.csv")],
            predict=str(files / "predict.json"),
            out=str(out),
        )
        info = render(spec)
        assert out.exists()
        key = str(files / "tails.csv") + ":log_prob"
        assert info["hashes"][key] == _sha([-3.1926, -3.6456, -4.1292])

    def test_spectrum_overlays_closed_form(self, files):
        out = files / "spec.png"
        spec = FigureSpec(
            kind="spectrum",
            inputs=[str(files / "spectrum.csv")],
            predict=str(files / "predict.json"),
            out=str(out),
        )
        info = render(spec)
        assert out.exists()
        # the overlay is exactly the predict table: (1/12)(70/a - 11)
        assert info["hashes"]["predict:spectrum_f"] == _sha(PREDICT["results"]["spectrum_table"]["f"])
        a = np.asarray(PREDICT["results"]["spectrum_table"]["a"])
        f = np.asarray(PREDICT["results"]["spectrum_table"]["f"])
        assert np.allclose(f, (70.0 / a - 11.0) / 12.0, atol=1e-12)

    def test_perc_overlay(self, files):
        out = files / "perc.png"
        spec = FigureSpec(
            kind="perc-overlay",
            inputs=[str(files / "tree.txt")],
            out=str(out),
        )
        info = render(spec)
        assert out.exists()
        assert any(k.endswith(":cells") for k in info["hashes"])

    def test_empty_csv_renders_axes_only(self, files):
        empty = files / "empty.csv"
        empty.write_text("delta,count_below,n,log_prob,stderr\n")
        out = files / "empty.png"
        spec = FigureSpec(kind="tail", inputs=[str(empty)], out=str(out))
        info = render(spec)
        assert out.exists()

    def test_deterministic_bytes(self, files):
        outs = []
        for i in range(2):
            out = files / f"det{i}.png"
            spec = FigureSpec(
                kind="survival",
                inputs=[str(files / "survival.csv")],
                predict=str(files / "predict.json"),
                out=str(out),
            )
            render(spec)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestCli:
    def test_cli_roundtrip(self, files, capsys):
        out = files / "cli.png"
        rc = main(
            [
                "--kind", "survival",
                "--in", str(files / "survival.csv"),
                "--predict", str(files / "predict.json"),
                "--out", str(out),
            ]
        )
        assert rc == 0
        assert out.exists()

    def test_cli_schema_error_exit(self, files, capsys):
        bad = files / "bad2.csv"
        bad.write_text("delta,count_below,n,log_prob,oops\n")
        rc = main(["--kind", "tail", "--in", str(bad), "--out", str(files / "x.png")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "oops" in err or "stderr" in err
