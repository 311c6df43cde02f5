import csv
import json

import numpy as np
import pytest
from PIL import Image

from immap import cli
from immap.cli import main
from immap.container import read_imrd, write_imrd
from immap.core import NumericalError
from immap.operators import EncodingOperator, SamplingMask


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "data.imrd"
    assert main(["simulate", "--size", "32", "--coils", "4", "--accel", "2", "--noise-sigma", "0.02", "--seed", "3", "-o", str(path)]) == 0
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_simulate_metadata(tmp_path):
    out = tmp_path / "a.imrd"
    assert run("simulate", "--phantom", "shepp-logan", "--size", 128, "--coils", 8, "--accel", 8, "--noise-sigma", 0.05, "--seed", 42, "-o", out) == 0
    data = read_imrd(out)
    assert data.metadata["R"] == 8.0 and data.metadata["sigma"] == 0.05
    assert set(data.arrays) == {"ground_truth", "maps", "mask", "kspace", "noise_var"}
    assert data["mask"].dtype == np.uint8 and data["kspace"].dtype == np.complex64
    assert np.allclose(data["noise_var"], 0.05**2)
    assert set(data.metadata["seeds"]) == {"maps", "mask", "noise"}


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--size", 64, "--accel", 4, "--seed", 9]
    run(*args, "-o", tmp_path / "a.imrd")
    run(*args, "-o", tmp_path / "b.imrd")
    assert (tmp_path / "a.imrd").read_bytes() == (tmp_path / "b.imrd").read_bytes()


def test_simulate_full_sampling_noiseless_chain(tmp_path):
    out = tmp_path / "a.imrd"
    run("simulate", "--accel", 1, "--noise-sigma", 0, "-o", out)
    run("recon", "zerofill", "-i", out, "-o", tmp_path / "zf.imrd")
    truth = read_imrd(out)["ground_truth"]
    assert np.max(np.abs(read_imrd(tmp_path / "zf.imrd")["reconstruction"] - truth)) < 1e-6


def test_simulate_invalid_spec(tmp_path):
    assert run("simulate", "--accel", 0.5, "-o", tmp_path / "a.imrd") == 1
    assert run("simulate", "-o", tmp_path / "missing_dir" / "a.imrd") == 2


def test_zerofill_is_adjoint_and_fast(tmp_path):
    import time

    data_path = tmp_path / "d.imrd"
    run("simulate", "--size", 128, "-o", data_path)
    t0 = time.perf_counter()
    assert run("recon", "zerofill", "-i", data_path, "-o", tmp_path / "zf.imrd") == 0
    assert time.perf_counter() - t0 < 1.0
    data = read_imrd(data_path)
    enc = EncodingOperator(data["maps"].astype(complex), SamplingMask(data["mask"].astype(bool)))
    ref = enc.adjoint(data["kspace"].astype(complex)).astype(np.complex64)
    assert np.allclose(read_imrd(tmp_path / "zf.imrd")["reconstruction"], ref, atol=1e-6)


def test_immap_repeatable_with_full_config_echo(tmp_path, small):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[solver]\nbeta = 1.0\nseed = 11\n")
    for name in ("a", "b"):
        assert run("recon", "immap", "-i", small, "-c", cfg, "-o", tmp_path / f"{name}.imrd") == 0
    assert (tmp_path / "a.imrd").read_bytes() == (tmp_path / "b.imrd").read_bytes()
    assert (tmp_path / "a.trace.csv").read_bytes() == (tmp_path / "b.trace.csv").read_bytes()
    meta = read_imrd(tmp_path / "a.imrd").metadata
    assert meta["config"]["solver"] == {
        "beta": 1.0, "sigma_min": 0.01, "h0": 0.01, "cg_tol": 1e-6, "cg_max_iter": 100,
        "max_outer_iter": 1000, "seed": 11, "jacobi": False,
    }  # fmt: skip
    assert meta["config"]["prior"]["name"] == "wavelet" and "lam" in meta["config"]["prior"]
    assert meta["config"]["data"]["input"] == str(small)
    assert meta["normalization_scale"] > 0 and meta["n_iter"] > 0
    with open(tmp_path / "a.trace.csv") as fh:
        assert len(list(csv.DictReader(fh))) == meta["n_iter"]


def test_replay_from_echoed_config(tmp_path, small):
    run("recon", "immap", "-i", small, "--seed", 5, "-o", tmp_path / "a.imrd")
    echoed = read_imrd(tmp_path / "a.imrd").metadata["config"]
    assert cli.resolve_config(echoed) == echoed
    image, _, _ = cli.run_recon("immap", cli.resolve_config(echoed), read_imrd(small))
    assert np.array_equal(image.astype(np.complex64), read_imrd(tmp_path / "a.imrd")["reconstruction"])


def test_sense_and_prior_sample(tmp_path, small):
    assert run("recon", "sense", "-i", small, "-o", tmp_path / "s.imrd") == 0
    assert read_imrd(tmp_path / "s.imrd")["reconstruction"].shape == (32, 32)
    cfg = tmp_path / "p.toml"
    cfg.write_text('[prior]\nname = "gaussian"\nvariance = 0.01\n[data]\nshape = [8, 8]\n')
    assert run("recon", "prior-sample", "-c", cfg, "-o", tmp_path / "p.imrd") == 0
    assert read_imrd(tmp_path / "p.imrd")["reconstruction"].shape == (8, 8)


def test_estimated_noise_option(tmp_path, small):
    cfg = tmp_path / "n.toml"
    cfg.write_text('[data]\nnoise = "estimate"\n[solver]\nmax_outer_iter = 2\n')
    with pytest.warns(RuntimeWarning, match="max_outer_iter"):
        assert run("recon", "immap", "-i", small, "-c", cfg, "-o", tmp_path / "e.imrd") == 0


def test_recon_exit_codes(tmp_path, small, monkeypatch):
    partial = tmp_path / "partial.imrd"
    data = read_imrd(small)
    write_imrd(partial, {"kspace": data["kspace"], "mask": data["mask"]})
    assert run("recon", "sense", "-i", partial, "-o", tmp_path / "x.imrd") == 1
    bad_cfg = tmp_path / "bad.toml"
    bad_cfg.write_text("[solver]\nbetta = 0.1\n")
    assert run("recon", "immap", "-i", small, "-c", bad_cfg, "-o", tmp_path / "x.imrd") == 1
    assert run("recon", "immap", "-i", tmp_path / "nope.imrd", "-o", tmp_path / "x.imrd") == 2
    (tmp_path / "junk.imrd").write_bytes(b"not a container")
    assert run("recon", "zerofill", "-i", tmp_path / "junk.imrd", "-o", tmp_path / "x.imrd") == 2
    assert run("recon", "immap", "-o", tmp_path / "x.imrd") == 1

    def boom(*a, **k):
        raise NumericalError("non-finite denoiser output at iteration 3")

    monkeypatch.setattr(cli, "immap_reconstruct", boom)
    assert run("recon", "immap", "-i", small, "-o", tmp_path / "x.imrd") == 3


def test_unknown_method_is_usage_error(tmp_path, small):
    with pytest.raises(SystemExit) as exc:
        run("recon", "magic", "-i", small, "-o", tmp_path / "x.imrd")
    assert exc.value.code == 1


def _eval(tmp_path, *extra):
    out = tmp_path / "report.out"
    code = run("eval", *extra, "-o", out)
    return code, out.read_text() if code == 0 else None


def test_eval_identity_and_zero(tmp_path, small):
    truth = read_imrd(small)["ground_truth"]
    write_imrd(tmp_path / "same.imrd", {"reconstruction": truth})
    write_imrd(tmp_path / "zero.imrd", {"reconstruction": np.zeros_like(truth)})
    code, text = _eval(tmp_path, small, tmp_path / "same.imrd")
    report = json.loads(text)
    assert code == 0 and report["nrmse"] == 0.0 and report["ssim100"] == 100.0 and report["psnr"] is None
    report = json.loads(_eval(tmp_path, small, tmp_path / "zero.imrd")[1])
    assert report["nrmse"] == 1.0
    code, text = _eval(tmp_path, small, tmp_path / "zero.imrd", "--format", "csv", "--metrics", "nrmse")
    rows = list(csv.DictReader(text.splitlines()))
    assert rows == [{"nrmse": "1.0"}]


def test_eval_errors(tmp_path, small):
    write_imrd(tmp_path / "wrong.imrd", {"reconstruction": np.zeros((4, 4), np.float32)})
    assert run("eval", small, tmp_path / "wrong.imrd") == 1
    assert run("eval", small, small) == 1  # no reconstruction field
    assert run("eval", small, tmp_path / "missing.imrd") == 2


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_one_cell_matches_recon_and_eval(tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", "--accel", 2, "--noise-sigma", 0.02, "--methods", "immap", "sense", "--size", 32, "--coils", 4, "--seed", 7, "--out-dir", out) == 0
    rows = _rows(out / "results.csv")
    assert [r["method"] for r in rows] == ["immap", "sense"] and all(r["status"] == "ok" for r in rows)
    data = out / "data_R2_s0.02.imrd"
    for row in rows:
        rec = tmp_path / f"{row['method']}.imrd"
        assert run("recon", row["method"], "-i", data, "--seed", row["solver_seed"], "-o", rec) == 0
        assert rec.read_bytes().split(b"\n", 1)[1] == (out / f"recon_R2_s0.02_{row['method']}.imrd").read_bytes().split(b"\n", 1)[1]
        report = json.loads(_eval(tmp_path, data, rec)[1])
        for key in ("nrmse", "psnr", "ssim", "ssim100"):
            assert float(row[key]) == report[key]


def test_sweep_records_failures_and_continues(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("diverged")

    monkeypatch.setattr(cli, "immap_reconstruct", boom)
    out = tmp_path / "sw"
    assert run("sweep", "--accel", 2, "--noise-sigma", 0.02, "--size", 32, "--coils", 2, "--out-dir", out) == 0
    status = {r["method"]: r["status"] for r in _rows(out / "results.csv")}
    assert status == {"zerofill": "ok", "sense": "ok", "immap": "numerical-error"}


def test_sweep_rejects_prior_sample(tmp_path):
    assert run("sweep", "--methods", "prior-sample", "--out-dir", tmp_path) == 1


def test_sweep_worker_independent_small(tmp_path):
    args = ["sweep", "--accel", 2, 4, "--noise-sigma", 0.0, 0.05, "--methods", "zerofill", "sense", "--size", 32, "--coils", 2]
    run(*args, "--workers", 1, "--out-dir", tmp_path / "a")
    run(*args, "--workers", 2, "--out-dir", tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


@pytest.mark.slow
def test_sweep_full_grid_all_ok(tmp_path):
    assert run("sweep", "--accel", 4, 8, "--noise-sigma", 0, 0.05, "--size", 64, "--out-dir", tmp_path) == 0
    rows = _rows(tmp_path / "results.csv")
    assert len(rows) == 12 and all(r["status"] == "ok" for r in rows), rows


def _png(path):
    with Image.open(path) as im:
        assert im.mode.startswith("I;16") or im.mode == "I"
        return np.array(im).astype(np.int64)


def test_export_png_monotone_and_deterministic(tmp_path, small):
    for name in ("a", "b"):
        assert run("export-png", small, "--field", "ground_truth", "-o", tmp_path / f"{name}.png") == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    mag = np.abs(read_imrd(small)["ground_truth"]).ravel()
    px = _png(tmp_path / "a.png").ravel()
    order = np.argsort(mag, kind="stable")
    assert np.all(np.diff(px[order]) >= 0)
    assert px.max() == 65535 and px[mag == 0].max(initial=0) == 0


def test_export_png_zero_and_window(tmp_path):
    write_imrd(tmp_path / "z.imrd", {"reconstruction": np.zeros((5, 6), np.complex64)})
    run("export-png", tmp_path / "z.imrd", "-o", tmp_path / "z.png")
    assert not _png(tmp_path / "z.png").any()
    write_imrd(tmp_path / "r.imrd", {"reconstruction": np.array([[0.0, 0.5, 1.0, 2.0]], np.float32)})
    run("export-png", tmp_path / "r.imrd", "--window", 0.5, 1.0, "-o", tmp_path / "w.png")
    assert _png(tmp_path / "w.png").tolist() == [[0, 0, 65535, 65535]]


def test_export_png_error_map(tmp_path):
    ref = np.array([[1.0, 2.0], [4.0, 0.0]], np.float32)
    write_imrd(tmp_path / "ref.imrd", {"ground_truth": ref})
    write_imrd(tmp_path / "est.imrd", {"reconstruction": ref + np.array([[0, 1], [2, 4]], np.float32)})
    run("export-png", tmp_path / "est.imrd", "--error-ref", tmp_path / "ref.imrd", "-o", tmp_path / "e.png")
    assert _png(tmp_path / "e.png").tolist() == [[0, 16384], [32768, 65535]]


def test_export_png_unknown_field(tmp_path, small):
    assert run("export-png", small, "--field", "nope", "-o", tmp_path / "x.png") == 1
    assert run("export-png", small, "--field", "maps", "-o", tmp_path / "x.png") == 1


@pytest.mark.parametrize("sub", ["simulate", "recon", "eval", "sweep", "export-png"])
def test_help(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        main([sub, "--help"])
    assert exc.value.code == 0 and "usage: immap" in capsys.readouterr().out
