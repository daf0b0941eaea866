import json
import os
import stat
import sys
import textwrap

import numpy as np
import pytest

from layerlens.gcode import parse_gcode

from bridge_helpers import calibration_dict, overhead_camera, serpentine_gcode
from renderbridge import cli
from renderbridge.manifest import export_manifest, save_manifest
from renderbridge.render import (RendererMissingError, SCRIPT_PATH,
                                 build_and_render, find_renderer,
                                 parse_frame_lines, render_command)
from renderbridge.scene_build import parse_args

HAVE_RENDERER = find_renderer() is not None

FAKE_RENDERER = textwrap.dedent("""\
    #!{python}
    import os, sys
    from pathlib import Path

    mode = os.environ.get("RB_FAKE_MODE", "ok")
    args = sys.argv[sys.argv.index("--") + 1:]
    out = Path(args[1])
    frames = [int(a) for a in args[2:]]
    if mode == "crash":
        sys.stderr.write("kaboom\\n")
        sys.exit(3)
    for f in frames:
        if mode == "fail_odd" and f % 2 == 1:
            print(f"RB FRAME {{f}} FAIL synthetic shader error")
            continue
        path = out / f"ref_{{f}}.png"
        if mode != "liar":
            path.write_bytes(b"not a real png")
        print(f"RB FRAME {{f}} OK {{path}}")
    """)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    prog = parse_gcode(serpentine_gcode(n_layers=2))
    m = export_manifest(prog, calibration_dict(overhead_camera()),
                        {"samples": 8, "resolution_px": (160, 120)})
    path = tmp_path_factory.mktemp("scene") / "scene.json"
    save_manifest(m, path)
    return path


@pytest.fixture()
def fake_renderer(tmp_path):
    path = tmp_path / "fake_blender"
    path.write_text(FAKE_RENDERER.format(python=sys.executable))
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


class TestPlumbing:
    def test_render_command_shape(self):
        cmd = render_command("/opt/blender", "m.json", "out", [0, 2])
        assert cmd == ["/opt/blender", "--background", "--factory-startup",
                       "-noaudio", "--python", str(SCRIPT_PATH), "--",
                       "m.json", "out", "0", "2"]

    def test_parse_frame_lines(self):
        stdout = "\n".join([
            "Blender quit",
            "RB FRAME 0 OK /x/ref_0.png",
            "RB FRAME 1 FAIL out of memory",
            "RB FRAME mangled nonsense",
            "unrelated noise",
        ])
        got = parse_frame_lines(stdout, [0, 1, 2])
        assert got[0] == {"ok": True, "path": "/x/ref_0.png"}
        assert got[1] == {"ok": False, "error": "out of memory"}
        assert not got[2]["ok"] and "no result" in got[2]["error"]

    def test_scene_script_arg_split(self):
        manifest, out, frames = parse_args(
            ["blender", "-b", "--python", "x.py", "--", "m.json", "o", "0",
             "3"])
        assert str(manifest) == "m.json"
        assert str(out) == "o"
        assert frames == [0, 3]

    def test_scene_script_usage_error(self):
        with pytest.raises(SystemExit):
            parse_args(["--", "m.json"])


class TestDriver:
    def test_missing_renderer(self, manifest, tmp_path, monkeypatch):
        monkeypatch.setenv("PATH", str(tmp_path))
        monkeypatch.delenv("BLENDER_PATH", raising=False)
        with pytest.raises(RendererMissingError, match="renderer"):
            build_and_render(manifest, tmp_path / "out")

    def test_empty_frames_rejected(self, manifest, tmp_path):
        with pytest.raises(ValueError, match="no frames"):
            build_and_render(manifest, tmp_path / "out", frames=[])

    def test_out_of_range_frame_rejected(self, manifest, tmp_path):
        with pytest.raises(ValueError, match="outside"):
            build_and_render(manifest, tmp_path / "out", frames=[0, 5])

    def test_partial_failure_continues(self, manifest, tmp_path,
                                       fake_renderer, monkeypatch):
        monkeypatch.setenv("RB_FAKE_MODE", "fail_odd")
        results = build_and_render(manifest, tmp_path / "out",
                                   renderer=fake_renderer)
        assert results[0]["ok"]
        assert os.path.exists(results[0]["path"])
        assert not results[1]["ok"]
        assert "shader" in results[1]["error"]

    def test_reported_but_missing_file_flagged(self, manifest, tmp_path,
                                               fake_renderer, monkeypatch):
        monkeypatch.setenv("RB_FAKE_MODE", "liar")
        results = build_and_render(manifest, tmp_path / "out",
                                   renderer=fake_renderer)
        assert all(not r["ok"] for r in results.values())
        assert "missing" in results[0]["error"]

    def test_renderer_crash_raises(self, manifest, tmp_path, fake_renderer,
                                   monkeypatch):
        monkeypatch.setenv("RB_FAKE_MODE", "crash")
        with pytest.raises(RuntimeError, match="kaboom"):
            build_and_render(manifest, tmp_path / "out",
                             renderer=fake_renderer)

    def test_manifest_dict_written_alongside(self, tmp_path, fake_renderer,
                                             monkeypatch):
        monkeypatch.setenv("RB_FAKE_MODE", "ok")
        prog = parse_gcode(serpentine_gcode(n_layers=2))
        m = export_manifest(prog, calibration_dict(overhead_camera()))
        out = tmp_path / "out"
        results = build_and_render(m, out, frames=[1],
                                   renderer=fake_renderer)
        assert results[1]["ok"]
        assert (out / "scene_manifest.json").exists()


class TestCli:
    @pytest.fixture()
    def job_files(self, tmp_path):
        gcode = tmp_path / "job.gcode"
        gcode.write_text(serpentine_gcode(n_layers=2))
        calib = tmp_path / "calibration.json"
        calib.write_text(json.dumps(calibration_dict(overhead_camera())))
        return gcode, calib

    def test_export_ok(self, job_files, tmp_path, capsys):
        gcode, calib = job_files
        out = tmp_path / "scene.json"
        rc = cli.main(["export", "--gcode", str(gcode),
                       "--calibration", str(calib), "--out", str(out),
                       "--samples", "8", "--resolution", "320x240"])
        assert rc == 0
        data = json.loads(out.read_text())
        assert data["render"]["samples"] == 8
        assert data["render"]["resolution_px"] == [320, 240]
        assert "2 layers" in capsys.readouterr().out

    def test_export_calibration_without_camera(self, job_files, tmp_path,
                                               capsys):
        gcode, _ = job_files
        calib = tmp_path / "bare.json"
        calib.write_text(json.dumps({"half_extent_mm": 45.0}))
        rc = cli.main(["export", "--gcode", str(gcode),
                       "--calibration", str(calib),
                       "--out", str(tmp_path / "scene.json")])
        assert rc == 2
        assert "camera" in capsys.readouterr().err

    def test_export_missing_gcode(self, job_files, tmp_path):
        _, calib = job_files
        rc = cli.main(["export", "--gcode", str(tmp_path / "nope.gcode"),
                       "--calibration", str(calib),
                       "--out", str(tmp_path / "scene.json")])
        assert rc == 2

    def test_render_partial_failure_exit(self, manifest, tmp_path,
                                         fake_renderer, monkeypatch, capsys):
        monkeypatch.setenv("RB_FAKE_MODE", "fail_odd")
        rc = cli.main(["render", "--manifest", str(manifest),
                       "--out-dir", str(tmp_path / "out"),
                       "--renderer", fake_renderer])
        assert rc == 1
        captured = capsys.readouterr()
        assert "frame 0" in captured.out
        assert "FAILED" in captured.err

    def test_render_all_ok_exit(self, manifest, tmp_path, fake_renderer,
                                monkeypatch):
        monkeypatch.setenv("RB_FAKE_MODE", "ok")
        rc = cli.main(["render", "--manifest", str(manifest),
                       "--out-dir", str(tmp_path / "out"),
                       "--frames", "0", "1",
                       "--renderer", fake_renderer])
        assert rc == 0

    def test_render_missing_renderer_exit(self, manifest, tmp_path,
                                          monkeypatch, capsys):
        monkeypatch.setenv("PATH", str(tmp_path))
        monkeypatch.delenv("BLENDER_PATH", raising=False)
        rc = cli.main(["render", "--manifest", str(manifest),
                       "--out-dir", str(tmp_path / "out")])
        assert rc == 2
        assert "renderer" in capsys.readouterr().err


@pytest.mark.skipif(not HAVE_RENDERER, reason="no renderer installed")
class TestRenderedFrames:
    """End-to-end checks that need the actual renderer."""

    @pytest.fixture(scope="class")
    def frame_setup(self, tmp_path_factory):
        from layerlens.geometry import (ActivePlane, CameraModel,
                                        active_plane_homography, warp_image)
        from layerlens.rasterref import LayerImage, load_image_png, stack_mask

        scale, half = 6.67, 45.0
        cam = overhead_camera(f=800.0, dims=(960, 720), height=400.0)
        prog = parse_gcode(serpentine_gcode(n_layers=1, half=12.0,
                                            spacing=0.6))
        m = export_manifest(prog, calibration_dict(cam, half_extent=half),
                            {"samples": 64, "resolution_px": (960, 720)})
        out = tmp_path_factory.mktemp("frames")
        results = build_and_render(m, out, frames=[0])
        assert results[0]["ok"], results[0]
        raw = load_image_png(results[0]["path"], scale=1.0)
        gray = raw.pixels
        side = round(2 * half * scale)
        plane = ActivePlane(z=prog.layers[0].z, half_extent=half)
        H = active_plane_homography(cam, plane, scale)
        src = LayerImage(pixels=gray, scale=scale, origin=(-half, -half))
        warped = warp_image(src, H, (side, side), out_scale=scale,
                            out_origin=(-half, -half))
        mask = stack_mask(prog.layers[:1], scale=scale,
                          origin=(-half, -half), dims=(side, side))
        return m, out, results, warped, mask

    def test_self_comparison_is_clean(self, frame_setup):
        from layerlens.detect import analyze_layer
        from layerlens.hog import HogConfig
        from layerlens.similarity import Metric

        _, _, _, warped, mask = frame_setup
        report = analyze_layer(warped, warped, mask, HogConfig(),
                               Metric("cosine"))
        assert report.anomaly_ratio_pct == 0.0

    def test_mask_blocks_carry_gradient_energy(self, frame_setup):
        from layerlens.hog import HogConfig, compute_hog
        from layerlens.rasterref import apply_mask

        _, _, _, warped, mask = frame_setup
        field = compute_hog(apply_mask(warped, mask), HogConfig())
        valid = field.block_valid
        energetic = (np.linalg.norm(field.blocks, axis=-1) > 0) & valid
        assert energetic.sum() >= 0.9 * valid.sum()

    def test_seed_pinned_rerun_matches(self, frame_setup, tmp_path):
        from PIL import Image

        m, _, results, _, _ = frame_setup
        again = build_and_render(m, tmp_path / "again", frames=[0])
        assert again[0]["ok"], again[0]
        a = np.asarray(Image.open(results[0]["path"]).convert("L"), float)
        b = np.asarray(Image.open(again[0]["path"]).convert("L"), float)
        assert np.abs(a - b).mean() < 2.0
