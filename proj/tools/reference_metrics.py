#!/usr/bin/env python3
"""Independent reference values for the evaluation fixtures.

SSIM and PSNR come from scikit-image.  The feature metrics re-run the frozen
backbone in PyTorch from weights exported by `maskedit export-backbone`.

    maskedit export-backbone --out /tmp/backbone.json
    python3 tools/reference_metrics.py --weights /tmp/backbone.json \
        --fixtures tests/fixtures/metrics [--make-fixtures]
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

SIZE = 64
BINS = 32


def texture(rng):
    y, x = np.mgrid[0:SIZE, 0:SIZE] / SIZE
    img = np.zeros((SIZE, SIZE, 3))
    for c in range(3):
        for _ in range(4):
            fx, fy = rng.uniform(1, 9, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
        img[..., c] += rng.uniform(0.3, 0.7) + 0.2 * (x - 0.5) * rng.choice([-1, 1])
    return np.clip(img, 0, 1)


def make_fixtures(out):
    rng = np.random.default_rng(20241018)
    base = [texture(rng) for _ in range(6)]
    other = texture(rng)
    pairs = [
        (base[0], np.clip(base[0] + rng.normal(0, 0.05, base[0].shape), 0, 1)),
        (base[1], gaussian_filter(base[1], sigma=(1.2, 1.2, 0))),
        (base[2], np.roll(base[2], shift=(2, -1), axis=(0, 1))),
        (base[3], np.clip(base[3] * np.array([1.1, 0.9, 0.8]), 0, 1)),
        (base[4], np.round(base[4] * 7) / 7),
        (base[5], other),
    ]
    out.mkdir(parents=True, exist_ok=True)
    for i, (a, b) in enumerate(pairs):
        for tag, img in (("a", a), ("b", b)):
            Image.fromarray(np.round(img * 255).astype(np.uint8), "RGB").save(out / f"pair{i}_{tag}.png")


def load(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


class Backbone:
    def __init__(self, path):
        blob = json.loads(Path(path).read_text())
        self.layers = blob["layers"]
        self.params = {
            name: torch.tensor(t["data"], dtype=torch.float64).reshape(t["shape"])
            for name, t in blob["tensors"].items()
        }

    def __call__(self, img):
        h = torch.from_numpy(img).permute(2, 0, 1)[None] * 2 - 1
        feats = {}
        for i, name in enumerate(self.layers):
            if i:
                h = F.avg_pool2d(h, 2)
            w, b = self.params[name + ".weight"], self.params[name + ".bias"]
            h = F.relu(F.conv2d(h, w, b, padding=w.shape[-1] // 2))
            feats[name] = h[0]
        return feats


def lpips(fa, fb):
    total = 0.0
    for name in fa:
        na = fa[name] / (fa[name].pow(2).sum(0, keepdim=True).sqrt() + 1e-10)
        nb = fb[name] / (fb[name].pow(2).sum(0, keepdim=True).sqrt() + 1e-10)
        total += (na - nb).pow(2).sum(0).mean().item()
    return total


def style(fa, fb):
    def gram(f):
        c = f.shape[0]
        m = f.reshape(c, -1)
        return m @ m.T / m.numel()

    return float(np.mean([(gram(fa[n]) - gram(fb[n])).pow(2).mean().item() for n in fa]))


def cosine(u, v):
    return float(np.dot(u, v) / np.sqrt(np.dot(u, u) * np.dot(v, v)))


def color(a, b):
    def hist(img):
        bins = np.minimum((img * BINS).astype(int), BINS - 1)
        return np.concatenate([np.bincount(bins[..., c].ravel(), minlength=BINS) for c in range(3)]).astype(float)

    return cosine(hist(a), hist(b))


def texture_relevance(fa, fb):
    def stats(f):
        flat = f.reshape(f.shape[0], -1)
        return torch.stack([flat.mean(1), flat.std(1, unbiased=False)], 1).reshape(-1).numpy()

    return cosine(stats(fa["relu1"]), stats(fb["relu1"]))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights", required=True)
    ap.add_argument("--fixtures", type=Path, required=True)
    ap.add_argument("--make-fixtures", action="store_true")
    args = ap.parse_args()
    if args.make_fixtures:
        make_fixtures(args.fixtures)
    phi = Backbone(args.weights)
    rows = []
    for i in range(6):
        a = load(args.fixtures / f"pair{i}_a.png")
        b = load(args.fixtures / f"pair{i}_b.png")
        fa, fb = phi(a), phi(b)
        rows.append({
            "a": f"pair{i}_a.png",
            "b": f"pair{i}_b.png",
            "ssim": structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                          data_range=1.0, channel_axis=-1),
            "psnr": peak_signal_noise_ratio(a, b, data_range=1.0),
            "lpips": lpips(fa, fb),
            "style": style(fa, fb),
            "color": color(a, b),
            "texture": texture_relevance(fa, fb),
        })
    (args.fixtures / "reference.json").write_text(json.dumps({"pairs": rows}, indent=2) + "\n")
    for r in rows:
        print(r)


if __name__ == "__main__":
    main()
