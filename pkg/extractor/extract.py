#!/usr/bin/env python3
"""Convert raw images into DRHF feature-map files with a VGG16 backbone.

For every image the final conv activations of the chosen layer are written
as one DRHF file (the search engine's interchange format), plus a
manifest.json mapping image id to its original pixel dimensions.

Images run at native resolution; a max-side cap bounds memory. Inputs are
zero-padded (after normalization) to a multiple of the layer stride so the
output grid is exactly ceil(pixels / stride) per axis.

Usage:
    extract.py --images DIR --layer conv5 --out DIR --max-side 1024
               [--weights vgg16.pth]

Without --weights the backbone is seeded randomly (deterministic across
runs); shapes, format and determinism are unaffected, retrieval quality of
course requires pretrained weights.
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision.models import vgg16

DRHF_MAGIC = b"DRHF"
DRHF_VERSION = 1

# layer name -> (features slice end, cumulative stride, channels)
LAYERS = {
    "conv3": (16, 4, 256),
    "conv4": (23, 8, 512),
    "conv5": (30, 16, 512),
}

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

RANDOM_INIT_SEED = 0


class UndecodableImage(Exception):
    pass


class LayerNotFound(Exception):
    pass


def build_backbone(layer: str, weights_path: str | None) -> torch.nn.Module:
    if layer not in LAYERS:
        raise LayerNotFound(f"unknown layer {layer!r}; choose from {sorted(LAYERS)}")
    end, _, _ = LAYERS[layer]
    torch.manual_seed(RANDOM_INIT_SEED)
    model = vgg16(weights=None)
    if weights_path:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    backbone = model.features[:end]
    backbone.eval()
    for p in backbone.parameters():
        p.requires_grad_(False)
    return backbone


def load_image(path: Path, max_side: int):
    """Decode to RGB, cap the longer side, return (array, original w, h)."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            orig_w, orig_h = img.size
            if max(img.size) > max_side:
                ratio = max_side / max(img.size)
                new = (max(1, round(img.width * ratio)), max(1, round(img.height * ratio)))
                img = img.resize(new, Image.BILINEAR)
            return np.asarray(img, dtype=np.float32) / 255.0, orig_w, orig_h
    except UndecodableImage:
        raise
    except Exception as exc:
        raise UndecodableImage(f"{path}: {exc}") from exc


def compute_feature_map(backbone: torch.nn.Module, pixels: np.ndarray, stride: int) -> np.ndarray:
    """Normalize, pad to a stride multiple, run the backbone; (H', W', C) output."""
    x = (pixels - IMAGENET_MEAN) / IMAGENET_STD
    tensor = torch.from_numpy(x.transpose(2, 0, 1)[None])
    h, w = tensor.shape[2], tensor.shape[3]
    pad_h = (-h) % stride
    pad_w = (-w) % stride
    if pad_h or pad_w:
        tensor = torch.nn.functional.pad(tensor, (0, pad_w, 0, pad_h))
    with torch.no_grad():
        out = backbone(tensor)
    return out[0].permute(1, 2, 0).contiguous().numpy().astype(np.float32)


def write_drhf(path: Path, image_id: str, fmap: np.ndarray, stride: int) -> None:
    height_c, width_c, channels = fmap.shape
    id_bytes = image_id.encode("utf-8")
    header = struct.pack(
        "<4sIIIIII", DRHF_MAGIC, DRHF_VERSION, width_c, height_c, channels, stride, len(id_bytes)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(id_bytes)
        fh.write(fmap.astype("<f4", copy=False).tobytes())


def extract(image_paths, layer: str, out_dir, max_side: int = 1024, weights: str | None = None):
    """Write one DRHF file per image plus manifest.json; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, stride, _ = LAYERS[layer] if layer in LAYERS else (None, None, None)
    backbone = build_backbone(layer, weights)
    torch.set_num_threads(1)  # keeps conv reductions bit-reproducible

    manifest = {}
    for path in sorted(Path(p) for p in image_paths):
        pixels, orig_w, orig_h = load_image(path, max_side)
        fmap = compute_feature_map(backbone, pixels, stride)
        image_id = path.stem
        write_drhf(out_dir / f"{image_id}.drhf", image_id, fmap, stride)
        manifest[image_id] = {
            "width": orig_w,
            "height": orig_h,
            "input_width": pixels.shape[1],
            "input_height": pixels.shape[0],
        }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument("--layer", default="conv5", help="conv3 | conv4 | conv5")
    parser.add_argument("--out", required=True, help="output directory for .drhf files")
    parser.add_argument("--max-side", type=int, default=1024)
    parser.add_argument("--weights", default=None, help="VGG16 state-dict file (pretrained)")
    args = parser.parse_args(argv)

    images = sorted(
        p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        print(f"error: no images under {args.images}", file=sys.stderr)
        return 3
    try:
        manifest = extract(images, args.layer, args.out, args.max_side, args.weights)
    except (UndecodableImage, LayerNotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(manifest)} feature maps to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
