#!/usr/bin/env python3
"""Generate the bundled desk-scale CNN fixture.

Builds a synthetic 10-class 16x16 grayscale pattern dataset, trains a
small CNN in float, quantizes it post-training to a4w4 (uniform
symmetric, per-tensor scales), and exports:

  fixtures/desk_cnn/manifest.json       network manifest
  fixtures/desk_cnn/weights.bin         concatenated GVT1 weight records
  fixtures/desk_cnn/float_weights.json  original float weights (provenance)
  fixtures/desk_cnn/dataset/calib/      calibration images  (GVT1 + labels.csv)
  fixtures/desk_cnn/dataset/test/       test images         (GVT1 + labels.csv)

The quantized-inference semantics mirrored here (requantization with
round-half-away-from-zero, symmetric clamp) must match the Rust
executor; the script prints float and quantized accuracies as a sanity
check before export.

Usage: gen_desk_fixtures.py [out_dir]
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

ROOT = Path(__file__).resolve().parent.parent
OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "fixtures" / "desk_cnn"
SEED = 20240811
IMG = 16
N_CLASSES = 10
TRAIN_PER_CLASS = 400
TEST_PER_CLASS = 24
CALIB_COUNT = 32
ACT_BITS = 4
W_BITS = 4
QMAX = 2 ** (ACT_BITS - 1) - 1  # 7

# architecture: conv(name, in, out) / relu / pool / flatten / fc(name, in, out)
ARCH = [
    ("conv", "conv1", 1, 8),
    ("relu",),
    ("pool",),
    ("conv", "conv2", 8, 12),
    ("relu",),
    ("pool",),
    ("conv", "conv3", 12, 16),
    ("relu",),
    ("conv", "conv4", 16, 16),
    ("relu",),
    ("pool",),
    ("flatten",),
    ("fc", "fc", 16 * 2 * 2, N_CLASSES),
]


# ---------------------------------------------------------------- dataset

def make_image(cls: int, rng: np.random.Generator) -> np.ndarray:
    bg = rng.uniform(0, 50)
    fg = rng.uniform(190, 255)
    img = np.full((IMG, IMG), bg, dtype=np.float64)
    yy, xx = np.mgrid[0:IMG, 0:IMG]
    if cls == 0:  # horizontal stripes
        p = rng.integers(3, 6)
        ph = rng.integers(0, p)
        img[(yy + ph) % p < p // 2] = fg
    elif cls == 1:  # vertical stripes
        p = rng.integers(3, 6)
        ph = rng.integers(0, p)
        img[(xx + ph) % p < p // 2] = fg
    elif cls == 2:  # diagonal stripes
        p = rng.integers(4, 7)
        ph = rng.integers(0, p)
        img[(xx + yy + ph) % p < p // 2] = fg
    elif cls == 3:  # checkerboard
        b = rng.integers(2, 5)
        ph = rng.integers(0, 2 * b)
        img[(((yy + ph) // b) + ((xx + ph) // b)) % 2 == 0] = fg
    elif cls == 4:  # filled disk
        cy, cx = 7.5 + rng.uniform(-2, 2), 7.5 + rng.uniform(-2, 2)
        r = rng.uniform(3.5, 5.5)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = fg
    elif cls == 5:  # ring
        cy, cx = 7.5 + rng.uniform(-1, 1), 7.5 + rng.uniform(-1, 1)
        r = rng.uniform(4.5, 6.0)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        img[(d2 <= r * r) & (d2 >= (r - 2.2) ** 2)] = fg
    elif cls == 6:  # plus
        t = rng.integers(1, 3)
        c = 7 + rng.integers(-1, 2)
        img[np.abs(yy - c) <= t] = fg
        img[np.abs(xx - c) <= t] = fg
    elif cls == 7:  # X cross
        t = rng.integers(1, 3)
        img[np.abs(yy - xx) <= t] = fg
        img[np.abs(yy + xx - (IMG - 1)) <= t] = fg
    elif cls == 8:  # hollow frame
        m = rng.integers(1, 4)
        t = rng.integers(1, 3)
        on_frame = (
            ((np.abs(yy - m) <= t) | (np.abs(yy - (IMG - 1 - m)) <= t))
            & (xx >= m - t) & (xx <= IMG - 1 - m + t)
        ) | (
            ((np.abs(xx - m) <= t) | (np.abs(xx - (IMG - 1 - m)) <= t))
            & (yy >= m - t) & (yy <= IMG - 1 - m + t)
        )
        img[on_frame] = fg
    elif cls == 9:  # coarse patchwork
        blocks = rng.random((4, 4)) < 0.5
        img[np.kron(blocks, np.ones((4, 4), dtype=bool))] = fg
    img += rng.normal(0, rng.uniform(4, 14), img.shape)
    return np.clip(img, 0, 255)


def build_split(rng, per_class):
    xs, ys = [], []
    for cls in range(N_CLASSES):
        for _ in range(per_class):
            xs.append(make_image(cls, rng))
            ys.append(cls)
    order = rng.permutation(len(xs))
    return np.stack(xs)[order], np.array(ys)[order]


# ---------------------------------------------------------------- model

class DeskCnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.mods = nn.ModuleDict()
        for step in ARCH:
            if step[0] == "conv":
                _, name, cin, cout = step
                self.mods[name] = nn.Conv2d(cin, cout, 3, padding=1)
            elif step[0] == "fc":
                _, name, fin, fout = step
                self.mods[name] = nn.Linear(fin, fout)

    def forward(self, x):
        for step in ARCH:
            kind = step[0]
            if kind in ("conv", "fc"):
                x = self.mods[step[1]](x)
            elif kind == "relu":
                x = F.relu(x)
            elif kind == "pool":
                x = F.max_pool2d(x, 2)
            elif kind == "flatten":
                x = torch.flatten(x, 1)
        return x

    def conv_activations(self, x):
        """Pre-ReLU outputs of every conv/fc layer, keyed by name."""
        acts = {}
        for step in ARCH:
            kind = step[0]
            if kind in ("conv", "fc"):
                x = self.mods[step[1]](x)
                acts[step[1]] = x.detach()
            elif kind == "relu":
                x = F.relu(x)
            elif kind == "pool":
                x = F.max_pool2d(x, 2)
            elif kind == "flatten":
                x = torch.flatten(x, 1)
        return acts


def to_float_input(px):
    return px / 127.5 - 1.0


def train(model, x_train, y_train, epochs=14):
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    xt = torch.tensor(to_float_input(x_train), dtype=torch.float32).unsqueeze(1)
    yt = torch.tensor(y_train, dtype=torch.long)
    n = len(xt)
    for epoch in range(epochs):
        perm = torch.randperm(n)
        total = 0.0
        for i in range(0, n, 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            loss = F.cross_entropy(model(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        print(f"epoch {epoch}: loss {total / n:.4f}")


def accuracy(model, x, y):
    with torch.no_grad():
        xt = torch.tensor(to_float_input(x), dtype=torch.float32).unsqueeze(1)
        pred = model(xt).argmax(1).numpy()
    return float((pred == y).mean())


# ------------------------------------------------------- quantized mirror

def round_haz(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def q_sym(x, scale):
    return np.clip(round_haz(x / scale), -QMAX, QMAX).astype(np.int64)


def conv2d_int(x, w, b, pad=1):
    cin, h, wdt = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((cout, h, wdt), dtype=np.int64)
    for oc in range(cout):
        acc = np.zeros((h, wdt), dtype=np.int64)
        for ic in range(cin):
            for ky in range(3):
                for kx in range(3):
                    acc += w[oc, ic, ky, kx] * xp[ic, ky : ky + h, kx : kx + wdt]
        out[oc] = acc + b[oc]
    return out


def maxpool2_int(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def quantized_forward(px, qw, scales):
    x = q_sym(to_float_input(px), scales["in"])[None, :, :]
    s_act = scales["in"]
    for step in ARCH:
        kind = step[0]
        if kind == "conv":
            name = step[1]
            acc = conv2d_int(x, qw[f"{name}_w"], qw[f"{name}_b"])
            x = q_sym(acc * s_act * scales[f"{name}_w"], scales[f"{name}_out"])
            s_act = scales[f"{name}_out"]
        elif kind == "relu":
            x = np.maximum(x, 0)
        elif kind == "pool":
            x = maxpool2_int(x)
        elif kind == "flatten":
            x = x.reshape(-1)
        elif kind == "fc":
            name = step[1]
            logits = (qw[f"{name}_w"] @ x + qw[f"{name}_b"]) * s_act * scales[f"{name}_w"]
            return logits
    raise RuntimeError("ARCH must end with fc")


# ---------------------------------------------------------------- export

def gvt_bytes(dims, data, bits, signed):
    out = bytearray()
    out += b"GVT1"
    out += struct.pack("<6I", 1, 0, 0 if signed else 1, bits, len(dims), dims[0])
    for d in dims[1:]:
        out += struct.pack("<I", d)
    out += np.asarray(data, dtype="<i4").tobytes()
    return bytes(out)


def needed_bits(values):
    m = int(np.max(np.abs(values))) if len(values) else 0
    return max(2, m.bit_length() + 1)


def spec_json(bits, scale):
    return {"bits": bits, "scale": float(scale), "signedness": "signed"}


def export_dataset(dirpath, x, y, tag):
    dirpath.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img, label) in enumerate(zip(x, y)):
        name = f"{tag}_{i:04d}.gvt"
        px = np.rint(img).astype(np.int64)
        (dirpath / name).write_bytes(gvt_bytes([1, IMG, IMG], px.reshape(-1), 8, signed=False))
        rows.append(f"{name},{label}")
    (dirpath / "labels.csv").write_text("\n".join(rows) + "\n")


def main():
    torch.manual_seed(SEED)
    rng = np.random.default_rng(SEED)
    x_train, y_train = build_split(rng, TRAIN_PER_CLASS)
    x_test, y_test = build_split(np.random.default_rng(SEED + 1), TEST_PER_CLASS)
    x_calib, y_calib = build_split(np.random.default_rng(SEED + 2), 4)
    x_calib, y_calib = x_calib[:CALIB_COUNT], y_calib[:CALIB_COUNT]

    model = DeskCnn()
    train(model, x_train, y_train)
    acc_f = accuracy(model, x_test, y_test)
    print(f"float test accuracy: {acc_f:.4f}")

    gemm_names = [s[1] for s in ARCH if s[0] in ("conv", "fc")]
    w = {k: v.detach().numpy().astype(np.float64) for k, v in model.state_dict().items()}

    def weight(name):
        return w[f"mods.{name}.weight"]

    def bias(name):
        return w[f"mods.{name}.bias"]

    scales = {"in": 1.0 / QMAX}
    for name in gemm_names:
        scales[f"{name}_w"] = float(np.max(np.abs(weight(name)))) / QMAX

    # activation scales from the calibration batch (pre-ReLU maxima);
    # the last layer stays dequantized
    with torch.no_grad():
        xc = torch.tensor(to_float_input(x_calib), dtype=torch.float32).unsqueeze(1)
        acts = model.conv_activations(xc)
    for name in gemm_names[:-1]:
        scales[f"{name}_out"] = float(acts[name].abs().max()) / QMAX

    # quantize weights and biases (bias in accumulator units)
    qw = {}
    s_in = scales["in"]
    for step in ARCH:
        if step[0] in ("conv", "fc"):
            name = step[1]
            qw[f"{name}_w"] = q_sym(weight(name), scales[f"{name}_w"])
            qw[f"{name}_b"] = round_haz(bias(name) / (s_in * scales[f"{name}_w"])).astype(np.int64)
            if f"{name}_out" in scales:
                s_in = scales[f"{name}_out"]

    correct = sum(
        int(np.argmax(quantized_forward(px, qw, scales)) == label)
        for px, label in zip(x_test, y_test)
    )
    acc_q = correct / len(x_test)
    print(f"a{ACT_BITS}w{W_BITS} quantized test accuracy: {acc_q:.4f}")

    # ---- weight blob + manifest
    OUT.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    offsets = {}

    def push(key, dims, data, bits):
        offsets[key] = len(blob)
        blob.extend(gvt_bytes(dims, data, bits, signed=True))

    for step in ARCH:
        if step[0] == "conv":
            _, name, cin, cout = step
            push(f"{name}_w", [cout, cin, 3, 3], qw[f"{name}_w"].reshape(-1), W_BITS)
            push(f"{name}_b", [cout], qw[f"{name}_b"], needed_bits(qw[f"{name}_b"]))
        elif step[0] == "fc":
            _, name, fin, fout = step
            push(f"{name}_w", [fout, fin], qw[f"{name}_w"].reshape(-1), W_BITS)
            push(f"{name}_b", [fout], qw[f"{name}_b"], needed_bits(qw[f"{name}_b"]))
    (OUT / "weights.bin").write_bytes(bytes(blob))

    layers_json = []
    for step in ARCH:
        kind = step[0]
        if kind == "conv":
            _, name, cin, cout = step
            layers_json.append({
                "kind": "conv2d", "name": name,
                "in_channels": cin, "out_channels": cout,
                "kernel": 3, "stride": 1, "padding": 1,
                "w_spec": spec_json(W_BITS, scales[f"{name}_w"]),
                "out_spec": spec_json(ACT_BITS, scales[f"{name}_out"]),
                "weight_offset": offsets[f"{name}_w"],
                "bias_offset": offsets[f"{name}_b"],
            })
        elif kind == "relu":
            layers_json.append({"kind": "relu"})
        elif kind == "pool":
            layers_json.append({"kind": "maxpool", "kernel": 2, "stride": 2})
        elif kind == "flatten":
            layers_json.append({"kind": "flatten"})
        elif kind == "fc":
            _, name, fin, fout = step
            layers_json.append({
                "kind": "linear", "name": name,
                "in_features": fin, "out_features": fout,
                "w_spec": spec_json(W_BITS, scales[f"{name}_w"]),
                "out_spec": None,
                "weight_offset": offsets[f"{name}_w"],
                "bias_offset": offsets[f"{name}_b"],
            })
    manifest = {
        "version": 1,
        "input": {"shape": [1, IMG, IMG], "spec": spec_json(ACT_BITS, scales["in"])},
        "classes": N_CLASSES,
        "weights_file": "weights.bin",
        "layers": layers_json,
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    float_layers = {}
    for step in ARCH:
        if step[0] == "conv":
            _, name, cin, cout = step
            float_layers[name] = {
                "shape": [cout, cin, 3, 3],
                "data": weight(name).reshape(-1).tolist(),
                "bias": bias(name).tolist(),
            }
        elif step[0] == "fc":
            _, name, fin, fout = step
            float_layers[name] = {
                "shape": [fout, fin],
                "data": weight(name).reshape(-1).tolist(),
                "bias": bias(name).tolist(),
            }
    (OUT / "float_weights.json").write_text(json.dumps({"layers": float_layers}) + "\n")

    export_dataset(OUT / "dataset" / "test", x_test, y_test, "test")
    export_dataset(OUT / "dataset" / "calib", x_calib, y_calib, "calib")
    print(f"exported fixture to {OUT}")
    print(f"summary: float={acc_f:.4f} quantized={acc_q:.4f}")


if __name__ == "__main__":
    main()
