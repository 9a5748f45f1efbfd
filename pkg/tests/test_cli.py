import csv

import numpy as np
import pytest

from tquant.cli import EXIT_FORMAT, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, SWEEP_COLUMNS, main
from tquant.codec import load_model, load_tensor, network_to_records, tensor_record, write_nwt
from tquant.codec.tqz import read_tqz
from tquant.model import network_forward
from tquant.rdopt.inference import layer_k, overhead_elements
from tquant.toy import ToySpec, calibration_batch

FAST = ["--max-bits", "8", "--steps", "1", "--workers", "1"]


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    files = {}
    for kind in ("ar1", "white"):
        model, calib = d / f"{kind}.nwt", d / f"{kind}_calib.nwt"
        assert main(["gen-toy", "--kind", kind, "--seed", "3", "--out", str(model), "--calib-out", str(calib)]) == 0
        files[kind] = (str(model), str(calib))
    return files


@pytest.fixture(scope="module")
def small_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    net = ToySpec(arch=((8, 3), (6, 3), (4, 1)), input_shape=(4, 5, 5), seed=2).build()
    write_nwt(str(d / "m.nwt"), network_to_records(net))
    write_nwt(str(d / "c.nwt"), [tensor_record("calib", calibration_batch(net, 16, seed=5))])
    return str(d / "m.nwt"), str(d / "c.nwt"), d


def data_args(files):
    return ["--model", files[0], "--calib", files[1]]


def test_gen_toy_is_seeded(tmp_path, monkeypatch):
    def gen(name, *extra):
        main(["gen-toy", "--out", str(tmp_path / f"{name}.nwt"), "--calib-out", str(tmp_path / f"{name}_c.nwt"),
              *extra])
        return (tmp_path / f"{name}.nwt").read_bytes() + (tmp_path / f"{name}_c.nwt").read_bytes()

    a, b = gen("a", "--seed", "5"), gen("b", "--seed", "5")
    assert a == b and gen("c", "--seed", "6") != a
    monkeypatch.setenv("TQ_SEED", "5")
    assert gen("d") == a
    monkeypatch.setenv("TQ_SEED", "five")
    assert main(["gen-toy", "--out", str(tmp_path / "e.nwt"), "--calib-out", str(tmp_path / "f.nwt")]) == EXIT_USAGE


def test_stats_white_and_correlated(toy_files, tmp_path):
    for kind in ("white", "ar1"):
        out = tmp_path / f"{kind}.csv"
        assert main(["stats", *data_args(toy_files[kind]), "--csv", str(out), "--svg", str(tmp_path / "g.svg")]) == 0
        header, rows = read_csv(out)
        col = {name: i for i, name in enumerate(header)}
        assert len(rows) == 3 and header[:6] == ["layer", "n", "m", "a", "b", "axis"]
        for r in rows:
            klt_db, elt_db = float(r[col["klt_gain_db"]]), float(r[col["elt_gain_db"]])
            assert elt_db >= klt_db - 1e-9
            assert float(r[col["klt_weight_db"]]) + float(r[col["klt_gradient_db"]]) == pytest.approx(klt_db,
                                                                                                        abs=1e-6)
            shape = tuple(int(r[col[c]]) for c in "nmab")
            pct = 100 * overhead_elements(shape, "row") / np.prod(shape)
            assert float(r[col["overhead_pct"]]) == pytest.approx(pct, rel=1e-9)
            if kind == "white":
                # finite-sample covariance noise only
                assert abs(klt_db) < 1.0
            else:
                assert klt_db > 3.0
    assert (tmp_path / "g.svg").read_text().startswith("<svg")


@pytest.fixture(scope="module")
def compressed(toy_files, tmp_path_factory):
    d = tmp_path_factory.mktemp("tqz")
    out = {}
    for name, mode in (("lam0", ["--lambda", "0"]), ("rate2", ["--target-rate", "2.0"])):
        path = str(d / f"{name}.tqz")
        assert main(["compress", *data_args(toy_files["ar1"]), *FAST, *mode, "--out", path]) == 0
        out[name] = path
    return out


def _summary(capsys):
    lines = capsys.readouterr().out.splitlines()
    return {l[:19].strip(): l[19:].strip() for l in lines if len(l) > 19}


def test_compress_lambda_zero(compressed, toy_files):
    model = read_tqz(compressed["lam0"])
    assert model.transform == "elt" and model.axis == "row"
    stored = 0
    for lc in model.layers:
        stored += sum(int(np.prod(s.shape)) for s in lc.sections.values())
        assert all(1 <= c.bits <= 8 for s in lc.sections.values() for c in s.codes)
    assert model.rate <= 8 * stored / model.weight_count
    assert model.rate >= 0.9 * 8 * stored / model.weight_count


def test_compress_target_rate(compressed):
    assert 1.96 <= read_tqz(compressed["rate2"]).rate <= 2.04


def test_eval_reports(compressed, toy_files, tmp_path, capsys):
    for name in ("lam0", "rate2"):
        out = tmp_path / f"{name}.csv"
        capsys.readouterr()
        assert main(["eval", *data_args(toy_files["ar1"]), "--tqz", compressed[name], "--csv", str(out)]) == 0
        s = _summary(capsys)
        model = read_tqz(compressed[name])
        assert s["rate"] == f"{model.rate:.6f} bits/weight"
        header, rows = read_csv(out)
        assert [int(r[header.index("k")]) for r in rows] == [lc.k for lc in model.layers]
        assert [lc.k for lc in model.layers] == [layer_k(lc) for lc in model.layers]
        if name == "lam0":
            calib = load_tensor(toy_files["ar1"][1])
            y = network_forward(load_model(toy_files["ar1"][0], calib.shape[1:]), calib)
            signal = np.mean(np.sum(y.reshape(len(y), -1) ** 2, axis=1))
            assert float(s["distortion"]) < 1e-3 * signal


def test_compress_and_eval_agree_on_rate(toy_files, small_files, capsys):
    model_path, calib_path, d = small_files
    out = str(d / "x.tqz")
    assert main(["compress", "--model", model_path, "--calib", calib_path, *FAST, "--lambda", "1e-4",
                 "--out", out]) == 0
    rate = _summary(capsys)["rate"].split()[0]
    assert main(["eval", "--model", model_path, "--calib", calib_path, "--tqz", out]) == 0
    assert _summary(capsys)["rate"].split()[0] == rate


def test_klt_beats_none_at_equal_rate(small_files, tmp_path):
    model_path, calib_path, _ = small_files
    base = ["--model", model_path, "--calib", calib_path, *FAST]
    none_csv, klt_csv = tmp_path / "none.csv", tmp_path / "klt.csv"
    assert main(["sweep", *base, "--transform", "none", "--points", "9", "--csv", str(none_csv)]) == 0
    assert main(["sweep", *base, "--transform", "row-klt", "--points", "9", "--csv", str(klt_csv)]) == 0
    none = [(float(r[1]), float(r[2])) for r in read_csv(none_csv)[1]]
    klt = [(float(r[1]), float(r[2])) for r in read_csv(klt_csv)[1]]
    # at every KLT point inside the baseline's range, interpolate the baseline in log distortion
    rates, logd = np.array([p[0] for p in none]), np.log([p[1] for p in none])
    checked = 0
    for r, dk in klt:
        if rates[0] <= r <= min(rates[-1], 5.0):
            assert np.log(dk) < np.interp(r, rates, logd)
            checked += 1
    assert checked >= 2


def test_sweep_outputs(small_files, tmp_path):
    model_path, calib_path, _ = small_files
    out = tmp_path / "f.csv"
    lams = "1e-6,1e-5,1e-4,1e-3"
    assert main(["sweep", "--model", model_path, "--calib", calib_path, *FAST, "--transform", "row-klt",
                 "--lambdas", lams, "--baseline", "--csv", str(out), "--svg", str(tmp_path / "f.svg")]) == 0
    header, rows = read_csv(out)
    assert tuple(header) == SWEEP_COLUMNS and len(rows) == 4
    rates = [float(r[1]) for r in rows]
    assert rates == sorted(rates)
    assert sorted(float(r[0]) for r in rows) == sorted(float(v) for v in lams.split(","))
    base_header, base_rows = read_csv(tmp_path / "f_none.csv")
    assert tuple(base_header) == SWEEP_COLUMNS and len(base_rows) == 4
    assert "<polyline" in (tmp_path / "f.svg").read_text()


def test_default_sweep_frontier_is_monotone(toy_files, tmp_path):
    out = tmp_path / "d.csv"
    assert main(["sweep", *data_args(toy_files["ar1"]), *FAST, "--transform", "none", "--csv", str(out)]) == 0
    rows = read_csv(out)[1]
    assert len(rows) == 5
    dist = [float(r[2]) for r in rows]
    assert all(b <= a for a, b in zip(dist, dist[1:]))


def test_validate_theory(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["validate-theory", "--trials", "20000", "--csv", str(a)]) == EXIT_OK
    assert main(["validate-theory", "--trials", "20000", "--csv", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    header, rows = read_csv(a)
    assert header == ["case", "R", "predicted", "measured", "ratio"]
    assert {r[0] for r in rows} == {"white", "correlated-none", "correlated-elt"} and len(rows) == 15
    assert "fitted eps^2" in capsys.readouterr().out
    assert main(["validate-theory", "--rates", "8"]) == EXIT_USAGE
    assert main(["validate-theory", "--trials", "10"]) == EXIT_USAGE


def test_workers_do_not_change_output(small_files):
    model_path, calib_path, d = small_files
    outs = []
    for w in ("1", "3"):
        path = d / f"w{w}.tqz"
        assert main(["compress", "--model", model_path, "--calib", calib_path, "--max-bits", "6", "--steps", "1",
                     "--workers", w, "--transform", "2d", "--lambda", "1e-5", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_exit_codes(small_files, tmp_path):
    model_path, calib_path, d = small_files
    base = ["--model", model_path, "--calib", calib_path]
    out = ["--out", str(tmp_path / "o.tqz")]
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["compress", *base, "--lambda", "1", "--target-rate", "2", *out]) == EXIT_USAGE
    assert main(["compress", *base, "--max-bits", "17", "--lambda", "1", *out]) == EXIT_USAGE
    assert main(["compress", *base, "--transform", "dct", "--lambda", "1", *out]) == EXIT_USAGE
    assert main(["compress", *base, "--target-rate", "0", *out]) == EXIT_USAGE
    assert main(["eval", *base]) == EXIT_USAGE
    assert main(["stats", "--model", str(tmp_path / "missing.nwt"), "--calib", calib_path]) == EXIT_FORMAT
    junk = tmp_path / "junk.nwt"
    junk.write_bytes(b"JUNKJUNK")
    assert main(["stats", "--model", str(junk), "--calib", calib_path]) == EXIT_FORMAT
    assert main(["eval", *base, "--tqz", model_path]) == EXIT_FORMAT
    assert main(["compress", *base, "--max-bits", "4", "--steps", "1", "--target-rate", "40", *out]) == \
        EXIT_VALIDATION
    assert main(["--help"]) == EXIT_OK


def test_help_hides_gen_toy(capsys):
    main(["--help"])
    text = capsys.readouterr().out
    assert "validate-theory" in text and "gen-toy" not in text
