import json
import os
import socket

import numpy as np
import pytest
from PIL import Image


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def solid_png(path, rgb, side=4):
    Image.fromarray(np.full((side, side, 3), rgb, dtype=np.uint8)).save(path)


def make_manifest(root, counts, colors=None, blocks=None, extra_images=(), users_extra=None, seed=0):
    """Hand-built manifest: ``counts[u]`` posted solid-color PNGs per user."""
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(root, "img"), exist_ok=True)
    users, images = [], []
    for u, n in enumerate(counts):
        uid = "user%02d" % u
        users.append({"user_id": uid, "age": float(20 + u), "gender": u % 2,
                      "depression": float(rng.normal()), "anxiety": float(rng.normal()),
                      **((users_extra or {}).get(uid, {}))})
        for j in range(n):
            iid = "%s_%03d" % (uid, j)
            rgb = colors(u, j) if colors else tuple(int(c) for c in rng.integers(0, 256, 3))
            solid_png(os.path.join(root, "img", iid + ".png"), rgb)
            images.append({"image_id": iid, "user_id": uid, "kind": "posted", "path": "img/%s.png" % iid})
    images.extend(extra_images)
    write_jsonl(os.path.join(root, "users.jsonl"), users)
    write_jsonl(os.path.join(root, "images.jsonl"), images)
    man = {"name": "t", "users": "users.jsonl", "images": "images.jsonl"}
    if blocks:
        man["blocks"] = {}
        for name, frame in blocks.items():
            frame.to_csv(os.path.join(root, name + ".csv"), index=False)
            man["blocks"][name] = name + ".csv"
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as fh:
        json.dump(man, fh)
    return path


def write_config(root, **kw):
    cfg = {"manifest": "manifest.json", "out_dir": "out", **kw}
    path = os.path.join(root, "config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test on any attempt to open a network connection."""
    calls = []

    def guard(*args, **kwargs):
        calls.append(args)
        raise AssertionError("network access attempted: %r" % (args,))

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket.socket, "connect_ex", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
    monkeypatch.setattr(socket, "getaddrinfo", guard)
    return calls
