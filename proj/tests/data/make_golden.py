#!/usr/bin/env python3
"""Writes golden .flo, .mvs and checkpoint files from the documented layouts.

Kept independent of the C++ codecs so the round-trip tests compare against a
second implementation. Run from this directory; outputs are committed.
"""
import json
import struct

import numpy as np

# .flo: float32 magic, int32 width, int32 height, then (u, v) float32 pairs row-major.
w, h = 5, 3
ys, xs = np.mgrid[0:h, 0:w]
u = (xs - 2) * 0.75 + ys * 0.125
v = -(ys * 1.5) + xs * 0.0625
flow = np.stack([u, v], axis=-1).astype("<f4")
with open("golden.flo", "wb") as f:
    f.write(struct.pack("<fii", 202021.25, w, h))
    f.write(flow.tobytes())

# mvsidecar/1: version line, then one compact JSON object per frame, keys sorted.
frames = [
    {"frame_index": 0, "frame_w": 16, "frame_h": 8, "codec": "h264", "qp": 27, "records": []},
    {
        "frame_index": 1, "frame_w": 16, "frame_h": 8, "codec": "h264", "qp": 27,
        "records": [
            {"block_x": 0, "block_y": 0, "block_w": 8, "block_h": 8, "mv_dx": 6, "mv_dy": -3, "mv_scale": 4},
            {"block_x": 8, "block_y": 0, "block_w": 8, "block_h": 4, "mv_dx": -2, "mv_dy": 1, "mv_scale": 2},
            {"block_x": 12, "block_y": 4, "block_w": 8, "block_h": 8, "mv_dx": 5, "mv_dy": 0, "mv_scale": 1},
        ],
    },
]
with open("golden.mvs", "w", newline="\n") as f:
    f.write("mvsidecar/1\n")
    for fr in frames:
        f.write(json.dumps(fr, sort_keys=True, separators=(",", ":")) + "\n")

# Checkpoint: magic, u32 version, u64 step, u32 config length + text, u32 count,
# name table {u32 len, name, u32 rank, u32 dims...}, then float32 data in table order.
config = "seed = 3\ntotal_steps = 12\n"
tensors = [
    ("param/a.bias", np.array([0.5, -0.25], "<f4")),
    ("param/a.weight", np.arange(6, dtype="<f4").reshape(2, 3, 1, 1) / 8),
    ("adam_m/a.bias", np.array([0.125, 0.0], "<f4")),
    ("adam_v/a.bias", np.array([1.0 / 1024, 2.0], "<f4")),
]
with open("golden.ckpt", "wb") as f:
    f.write(b"MVFLOWCK")
    f.write(struct.pack("<IQI", 1, 12, len(config)))
    f.write(config.encode())
    f.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        f.write(struct.pack("<I", len(name)) + name.encode())
        f.write(struct.pack("<I", t.ndim) + struct.pack("<%dI" % t.ndim, *t.shape))
    for _, t in tensors:
        f.write(t.tobytes())

# Rasterized frame 1 of golden.mvs: block fill in record order, clipped to the frame.
fr = frames[1]
raster = np.zeros((fr["frame_h"], fr["frame_w"], 2), "<f4")
for r in fr["records"]:
    x0, y0 = r["block_x"], r["block_y"]
    x1, y1 = min(x0 + r["block_w"], fr["frame_w"]), min(y0 + r["block_h"], fr["frame_h"])
    raster[y0:y1, x0:x1] = (np.float32(r["mv_dx"]) / np.float32(r["mv_scale"]),
                            np.float32(r["mv_dy"]) / np.float32(r["mv_scale"]))
with open("golden_raster.flo", "wb") as f:
    f.write(struct.pack("<fii", 202021.25, fr["frame_w"], fr["frame_h"]))
    f.write(raster.tobytes())
