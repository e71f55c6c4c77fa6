import json

import numpy as np
import pytest
from PIL import Image

from foi.cli import cli_main, load_config
from foi.imgio import load_rgb, save_png


@pytest.fixture()
def image_file(tmp_path, test_image):
    path = tmp_path / "input.png"
    save_png(str(path), test_image)
    return str(path)


def edit_args(image_file, out, *extra):
    return [
        "edit",
        "--image", image_file,
        "--instruction", "add a hat. make it sunset.",
        "--sub", "add a hat.::hat",
        "--sub", "make it sunset.::sunset",
        "--out", out,
        "--seed", "7",
        "--backend", "toy",
        "--steps", "10",
        *extra,
    ]


class TestEditCommand:
    def test_basic_edit(self, image_file, tmp_path, capsys):
        out = str(tmp_path / "out.png")
        assert cli_main(edit_args(image_file, out)) == 0
        assert load_rgb(out).shape == (128, 128, 3)
        assert out in capsys.readouterr().out

    def test_missing_image_is_usage_error(self, tmp_path, capsys):
        code = cli_main(["edit", "--out", str(tmp_path / "o.png")])
        assert code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_out_is_usage_error(self, image_file, capsys):
        assert cli_main(["edit", "--image", image_file]) == 2

    def test_malformed_sub_is_usage_error(self, image_file, tmp_path, capsys):
        code = cli_main(
            ["edit", "--image", image_file, "--out", str(tmp_path / "o.png"),
             "--sub", "no-separator"]
        )
        assert code == 2

    def test_unknown_flag_exits_two(self, capsys):
        assert cli_main(["edit", "--bogus", "x"]) == 2

    def test_missing_input_file_is_runtime_error(self, tmp_path, capsys):
        code = cli_main(edit_args(str(tmp_path / "absent.png"), str(tmp_path / "o.png")))
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_dump_writes_masks_and_heatmaps(self, image_file, tmp_path):
        out = str(tmp_path / "out.png")
        dump = tmp_path / "dump"
        assert cli_main(edit_args(image_file, out, "--dump", str(dump))) == 0
        names = {p.name for p in dump.iterdir()}
        assert "union_mask.png" in names
        assert any(n.startswith("mask_0_") for n in names)
        assert any(n.startswith("attn_full_") for n in names)
        for name in names:
            if name.startswith(("mask_", "union_")):
                values = np.asarray(Image.open(dump / name))
                assert set(np.unique(values)) <= {0, 255}

    def test_help_exits_zero(self, capsys):
        assert cli_main(["edit", "--help"]) == 0
        assert "--image" in capsys.readouterr().out

    def test_no_command_exits_two(self, capsys):
        assert cli_main([]) == 2

    def test_version(self, capsys):
        assert cli_main(["--version"]) == 0


class TestConfigFiles:
    def test_config_round_trip(self, image_file, tmp_path, capsys):
        out = str(tmp_path / "out.png")
        config = tmp_path / "edit.cfg"
        config.write_text(
            "\n".join(
                [
                    "# one edit job",
                    f"image = {image_file}",
                    "instruction = add a hat. make it sunset.",
                    "sub = add a hat.::hat",
                    "sub = make it sunset.::sunset::1.5",
                    f"out = {out}",
                    "steps = 10",
                    "seed = 3",
                ]
            )
        )
        assert cli_main(["edit", "--config", str(config)]) == 0
        assert load_rgb(out).shape == (128, 128, 3)

    def test_flags_override_config(self, image_file, tmp_path):
        out_config = str(tmp_path / "from_config.png")
        out_flag = str(tmp_path / "from_flag.png")
        config = tmp_path / "edit.cfg"
        config.write_text(f"image = {image_file}\nout = {out_config}\nsteps = 10\n")
        assert cli_main(["edit", "--config", str(config), "--out", out_flag]) == 0
        assert not (tmp_path / "from_config.png").exists()
        assert (tmp_path / "from_flag.png").exists()

    def test_bad_config_line(self, tmp_path):
        config = tmp_path / "edit.cfg"
        config.write_text("image input.png\n")
        assert cli_main(["edit", "--config", str(config)]) == 1

    def test_parse_values(self, tmp_path):
        config = tmp_path / "edit.cfg"
        config.write_text("steps = 25\nnoise-start = 0.5\nsub = a::b\nsub = c::d\n")
        parsed = load_config(str(config))
        assert parsed["steps"] == "25"
        assert parsed["noise_start"] == "0.5"
        assert parsed["sub"] == ["a::b", "c::d"]

    def test_batch_with_jobs(self, image_file, tmp_path):
        outs = [str(tmp_path / f"out{i}.png") for i in range(2)]
        configs = []
        for i, out in enumerate(outs):
            cfg = tmp_path / f"job{i}.cfg"
            cfg.write_text(
                f"image = {image_file}\nout = {out}\nsteps = 10\nseed = {i}\n"
                "instruction = add a hat.\nsub = add a hat.::hat\n"
            )
            configs.append(str(cfg))
        code = cli_main(
            ["edit", "--config", configs[0], "--config", configs[1], "--jobs", "2"]
        )
        assert code == 0
        assert all(load_rgb(o).shape == (128, 128, 3) for o in outs)


class TestEvalCommand:
    @pytest.fixture()
    def manifest(self, tmp_path, test_image):
        save_png(str(tmp_path / "src.png"), test_image)
        save_png(str(tmp_path / "edit.png"), 255 - test_image)
        path = tmp_path / "pairs.json"
        path.write_text(
            json.dumps(
                [
                    {
                        "source_image": "src.png",
                        "edited_image": "edit.png",
                        "source_text": "a dog",
                        "edited_text": "a dog with a hat",
                    }
                ]
            )
        )
        return str(path)

    def test_csv_to_stdout(self, manifest, capsys):
        assert cli_main(["eval", "--pairs", manifest, "--provider", "toy"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("source_image,edited_image,")
        assert len(lines) == 2

    def test_csv_to_file(self, manifest, tmp_path):
        out = tmp_path / "scores.csv"
        assert cli_main(["eval", "--pairs", manifest, "--out", str(out)]) == 0
        assert out.read_text().count("\n") >= 2

    def test_unavailable_provider(self, manifest, capsys):
        assert cli_main(["eval", "--pairs", manifest, "--provider", "clip"]) == 1

    def test_missing_manifest(self, tmp_path):
        assert cli_main(["eval", "--pairs", str(tmp_path / "absent.json")]) == 1


class TestRemoteClient:
    def test_remote_edit_posts_and_writes(self, image_file, tmp_path, monkeypatch, capsys):
        import base64

        import httpx

        from foi.imgio import encode_png

        sent = {}

        def fake_post(url, json=None, timeout=None):
            sent["url"] = url
            sent["payload"] = json
            image_b64 = base64.b64encode(
                encode_png(np.zeros((128, 128, 3), dtype=np.uint8))
            ).decode("ascii")
            return httpx.Response(200, json={"image_b64": image_b64})

        monkeypatch.setattr(httpx, "post", fake_post)
        out = str(tmp_path / "remote.png")
        code = cli_main(edit_args(image_file, out, "--server", "http://edit.example"))
        assert code == 0
        assert sent["url"] == "http://edit.example/v1/edit"
        assert sent["payload"]["instruction"] == "add a hat. make it sunset."
        assert len(sent["payload"]["subs"]) == 2
        assert load_rgb(out).shape == (128, 128, 3)

    def test_remote_dump_rejected(self, image_file, tmp_path, capsys):
        code = cli_main(
            edit_args(
                image_file, str(tmp_path / "o.png"),
                "--server", "http://edit.example", "--dump", str(tmp_path / "d"),
            )
        )
        assert code == 2

    def test_remote_error_surfaces(self, image_file, tmp_path, monkeypatch, capsys):
        import httpx

        monkeypatch.setattr(
            httpx, "post",
            lambda url, json=None, timeout=None: httpx.Response(503, json={"detail": "no"}),
        )
        code = cli_main(
            edit_args(image_file, str(tmp_path / "o.png"), "--server", "http://x")
        )
        assert code == 1
