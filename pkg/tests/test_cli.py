"""Command line behavior: exit codes, chaining, structured errors."""

import json

import numpy as np
import pytest

from sinoquad.cli import main
from sinoquad.geometry import Image, Sinogram
from sinoquad.io_formats import read_manifest, read_tomo, write_tomo
from sinoquad.simulate import PhantomRecipe, make_dataset
from sinoquad.trainer import TrainConfig, train


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A dataset and a small trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    make_dataset(
        PhantomRecipe(seed=21, size=64), count=4, noise="low",
        out_dir=root / "data", in_views=16, out_views=64,
    )
    ckpt = root / "model.sptc"
    train(
        TrainConfig(
            manifest=str(root / "data" / "manifest.jsonl"), epochs=1,
            batch_size=2, base_channels=2, seed=0, checkpoint_path=str(ckpt),
        ),
        verbose=False,
    )
    return root


class TestExitCodes:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 1
        assert capsys.readouterr().err.startswith("error: usage:")

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "error: usage:" in capsys.readouterr().err

    def test_missing_required_flag(self, capsys):
        assert main(["project"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: usage:") and "--angles" in err

    def test_bad_choice(self, capsys):
        assert main(["phantom", "cube"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "phantom" in capsys.readouterr().out

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        code = main(["project", "--in", str(tmp_path / "nope.sptb"),
                     "--angles", "8", "--out", str(tmp_path / "s.sptb")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error: data:")
        assert "\n" not in err.strip()

    def test_wrong_container_kind_is_data_error(self, tmp_path, capsys):
        img = tmp_path / "img.sptb"
        write_tomo(img, Image(np.ones((16, 16), dtype=np.float32)))
        code = main(["noise", "--in", str(img), "--level", "low",
                     "--out", str(tmp_path / "n.sptb")])
        assert code == 2
        assert "expected a sinogram" in capsys.readouterr().err


class TestPipelineChain:
    def test_phantom_then_project_shapes(self, tmp_path, capsys):
        img = tmp_path / "head.sptb"
        sino = tmp_path / "head_sino.sptb"
        assert main(["phantom", "shepp-logan", "--size", "128", "--out", str(img)]) == 0
        assert main(["project", "--in", str(img), "--angles", "128",
                     "--out", str(sino)]) == 0
        out = read_tomo(sino)
        assert isinstance(out, Sinogram)
        assert out.data.shape == (128, 128)

    def test_random_phantom_seeded(self, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.sptb", "b.sptb", "c.sptb"))
        assert main(["phantom", "random", "--size", "64", "--seed", "5", "--out", str(a)]) == 0
        assert main(["phantom", "random", "--size", "64", "--seed", "5", "--out", str(b)]) == 0
        assert main(["phantom", "random", "--size", "64", "--seed", "6", "--out", str(c)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_noise_seeded(self, tmp_path):
        img = tmp_path / "p.sptb"
        sino = tmp_path / "s.sptb"
        main(["phantom", "shepp-logan", "--size", "64", "--out", str(img)])
        main(["project", "--in", str(img), "--angles", "16", "--out", str(sino)])
        n1, n2, n3 = (tmp_path / n for n in ("n1.sptb", "n2.sptb", "n3.sptb"))
        for out, seed in [(n1, "3"), (n2, "3"), (n3, "4")]:
            assert main(["noise", "--in", str(sino), "--level", "medium",
                         "--seed", seed, "--out", str(out)]) == 0
        assert n1.read_bytes() == n2.read_bytes()
        assert n1.read_bytes() != n3.read_bytes()

    def test_dataset_writes_manifest(self, tmp_path):
        out = tmp_path / "ds"
        assert main(["dataset", "--count", "2", "--noise", "low", "--seed", "1",
                     "--size", "64", "--in-views", "16", "--out-views", "64",
                     "--out", str(out)]) == 0
        rows = read_manifest(out / "manifest.jsonl")
        assert len(rows) == 2
        assert (out / rows[0]["input"]).exists()

    def test_recon_produces_image(self, workspace, tmp_path):
        rows = read_manifest(workspace / "data" / "manifest.jsonl")
        noisy = workspace / "data" / rows[0]["input"]
        out = tmp_path / "rec.sptb"
        assert main(["recon", "--in", str(noisy), "--subsets", "4", "--iters", "2",
                     "--size", "64", "--out", str(out)]) == 0
        img = read_tomo(out)
        assert isinstance(img, Image)
        assert img.data.shape == (64, 64)

    def test_infer_quadruples_views(self, workspace, tmp_path):
        rows = read_manifest(workspace / "data" / "manifest.jsonl")
        noisy = workspace / "data" / rows[0]["input"]
        out = tmp_path / "denoised.sptb"
        assert main(["infer", "--model", str(workspace / "model.sptc"),
                     "--in", str(noisy), "--out", str(out)]) == 0
        sino = read_tomo(out)
        assert sino.data.shape == (64, 64)
        assert sino.data.min() >= 0


class TestTrainCommand:
    def test_train_writes_checkpoint_and_history(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(
            f"manifest = {workspace / 'data' / 'manifest.jsonl'}\n"
            "epochs = 1\n"
            "batch_size = 2\n"
            "base_channels = 2\n"
            f"checkpoint_path = {tmp_path / 'm.sptc'}\n"
            f"history_path = {tmp_path / 'h.json'}\n"
        )
        assert main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "m.sptc").exists()
        history = json.loads((tmp_path / "h.json").read_text())
        assert len(history["train_loss"]) == 1
        out = capsys.readouterr().out
        assert "epoch 0" in out and "best epoch" in out

    def test_bad_config_is_data_error(self, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("manifest=m\nwarp_speed=9\n")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "unknown config key" in capsys.readouterr().err


class TestEvalCommand:
    def test_identical_pair_json(self, tmp_path, capsys):
        path = tmp_path / "x.sptb"
        write_tomo(path, Image(np.random.default_rng(0).random((32, 32)).astype(np.float32)))
        assert main(["eval", "--ref", str(path), "--est", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mse"] == 0.0
        assert report["ssim"] == pytest.approx(1.0, abs=1e-12)
        assert report["psnr"] == float("inf")

    def test_table_output(self, tmp_path, capsys):
        a = tmp_path / "a.sptb"
        b = tmp_path / "b.sptb"
        rng = np.random.default_rng(1)
        ref = rng.random((32, 32)).astype(np.float32) + 0.5
        write_tomo(a, Image(ref))
        write_tomo(b, Image(ref + 0.01))
        assert main(["eval", "--ref", str(a), "--est", str(b), "--table"]) == 0
        out = capsys.readouterr().out
        assert "MAPE (%)" in out and "PSNR (dB)" in out

    def test_shape_mismatch_is_data_error(self, tmp_path, capsys):
        a = tmp_path / "a.sptb"
        b = tmp_path / "b.sptb"
        write_tomo(a, Image(np.ones((16, 16), dtype=np.float32)))
        write_tomo(b, Image(np.ones((16, 32), dtype=np.float32)))
        assert main(["eval", "--ref", str(a), "--est", str(b)]) == 2
        assert "shape" in capsys.readouterr().err


class TestImportCommand:
    def test_round_trip(self, tmp_path):
        raw = tmp_path / "dump.raw"
        data = np.abs(np.random.default_rng(2).standard_normal((8, 16))).astype("<f4")
        raw.write_bytes(data.tobytes())
        out = tmp_path / "imported.sptb"
        assert main(["import", "--in", str(raw), "--angles", "8", "--bins", "16",
                     "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_tomo(out).data, data)

    def test_length_mismatch_is_data_error(self, tmp_path, capsys):
        raw = tmp_path / "dump.raw"
        raw.write_bytes(b"\x00" * 10)
        assert main(["import", "--in", str(raw), "--angles", "8", "--bins", "16",
                     "--out", str(tmp_path / "x.sptb")]) == 2
        assert "expected" in capsys.readouterr().err


class TestDataDirEnv:
    def test_default_output_lands_in_data_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SINOQUAD_DATA_DIR", str(tmp_path))
        assert main(["phantom", "shepp-logan", "--size", "32"]) == 0
        assert (tmp_path / "phantom.sptb").exists()


class TestReproduce:
    def test_end_to_end_with_model(self, workspace, tmp_path, capsys):
        out = tmp_path / "rep"
        code = main(["reproduce", "--noise", "low", "--seed", "3",
                     "--model", str(workspace / "model.sptc"),
                     "--iters", "4", "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "Sinogram denoising (noise=low)" in stdout
        assert "OSEM reconstruction (noise=low)" in stdout
        assert "proposed" in stdout and "standard" in stdout
        payload = json.loads((out / "metrics.json").read_text())
        assert set(payload["denoising"]) == {"replicated", "proposed"}
        assert set(payload["reconstruction"]) == {"standard", "proposed"}
        for name in ("phantom", "noisy_32", "denoised_128", "recon_standard",
                     "recon_proposed", "reference_128"):
            assert (out / f"{name}.sptb").exists()
            assert (out / f"{name}.pgm").exists()

    def test_bit_reproducible(self, workspace, tmp_path):
        outs = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            assert main(["reproduce", "--noise", "medium", "--seed", "9",
                         "--model", str(workspace / "model.sptc"),
                         "--iters", "2", "--out", str(out)]) == 0
            outs.append(out)
        for name in ("metrics.json", "noisy_32.sptb", "denoised_128.sptb",
                     "recon_proposed.sptb", "recon_standard.pgm"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
