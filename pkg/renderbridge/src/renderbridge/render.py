"""Batch rendering driver around the external renderer's background mode.

The renderer is found via the BLENDER_PATH environment variable or the
`blender` executable on PATH.  One subprocess renders all requested
frames sequentially; per-frame status lines printed by scene_build.py
are parsed back into a result dict, so a single failed frame does not
abort the batch.
"""

import os
import shutil
import subprocess
from pathlib import Path

from .manifest import load_manifest, save_manifest, validate_manifest

SCRIPT_PATH = Path(__file__).with_name("scene_build.py")
FRAME_PREFIX = "RB FRAME "


class RendererMissingError(RuntimeError):
    """No path-tracing renderer is installed in this environment."""


def find_renderer():
    """Return the renderer executable path, or None when absent."""
    override = os.environ.get("BLENDER_PATH")
    if override:
        return override if os.path.exists(override) else None
    return shutil.which("blender")


def render_command(renderer, manifest_path, out_dir, frames):
    return [str(renderer), "--background", "--factory-startup", "-noaudio",
            "--python", str(SCRIPT_PATH), "--",
            str(manifest_path), str(out_dir)] + [str(f) for f in frames]


def parse_frame_lines(stdout, frames):
    """Map each requested frame to its OK/FAIL status line."""
    results = {f: {"ok": False, "error": "no result reported by renderer"}
               for f in frames}
    for line in stdout.splitlines():
        line = line.strip()
        if not line.startswith(FRAME_PREFIX):
            continue
        rest = line[len(FRAME_PREFIX):].split(None, 2)
        if len(rest) < 2:
            continue
        try:
            frame = int(rest[0])
        except ValueError:
            continue
        detail = rest[2] if len(rest) > 2 else ""
        if rest[1] == "OK":
            results[frame] = {"ok": True, "path": detail}
        else:
            results[frame] = {"ok": False, "error": detail or "render failed"}
    return results


def build_and_render(manifest, out_dir, frames=None, *, renderer=None,
                     timeout_s=3600.0):
    """Render the requested layer frames; returns {frame: status dict}.

    `manifest` is a dict or a path to a manifest file.  Frames default to
    every layer.  Raises RendererMissingError when no renderer is
    installed; individual frame failures are reported in the result.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(manifest, (str, os.PathLike)):
        manifest_path = Path(manifest)
        data = load_manifest(manifest_path)
    else:
        data = validate_manifest(manifest)
        manifest_path = out_dir / "scene_manifest.json"
        save_manifest(data, manifest_path)

    n_layers = len(data["layers"])
    if frames is None:
        frames = list(range(n_layers))
    frames = [int(f) for f in frames]
    if not frames:
        raise ValueError("no frames requested")
    bad = [f for f in frames if not 0 <= f < n_layers]
    if bad:
        raise ValueError(f"frame indices {bad} outside 0..{n_layers - 1}")

    if renderer is None:
        renderer = find_renderer()
    if renderer is None:
        raise RendererMissingError(
            "no renderer found: install blender or set BLENDER_PATH")

    proc = subprocess.run(
        render_command(renderer, manifest_path, out_dir, frames),
        capture_output=True, text=True, timeout=timeout_s)
    results = parse_frame_lines(proc.stdout, frames)
    if proc.returncode != 0 and not any(r["ok"] for r in results.values()):
        tail = proc.stderr.strip().splitlines()[-5:]
        raise RuntimeError("renderer exited with status "
                           f"{proc.returncode}: {' | '.join(tail)}")
    for frame, status in results.items():
        if status["ok"] and not os.path.exists(status["path"]):
            results[frame] = {"ok": False,
                              "error": f"frame file missing: {status['path']}"}
    return results
