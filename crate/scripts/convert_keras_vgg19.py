#!/usr/bin/env python3
"""Convert Keras VGG19 ImageNet weights (HDF5) into a vggfer weight bundle.

    python3 scripts/convert_keras_vgg19.py vgg19_weights_tf_dim_ordering_tf_kernels.h5 vgg19.bundle

The input is either a weights-only file or a full saved model; both must
include the top (fc1, fc2, predictions). With --download the weights are
fetched through tf.keras.applications instead of read from disk.

Layout changes:
  conv kernels  (3, 3, Cin, Cout) -> (Cout, Cin, 3, 3)
  dense kernels (in, out)         -> (out, in)
  fc1 inputs    flattened (7, 7, 512) HWC order -> (512, 7, 7) CHW order
"""

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile

import numpy as np

BLOCKS = [2, 2, 4, 4, 4]
WIDTHS = [64, 128, 256, 512, 512]
FC1_GRID = (7, 7, 512)


def layer_names():
    for b, convs in enumerate(BLOCKS, start=1):
        for k in range(1, convs + 1):
            yield f"block{b}_conv{k}"
    yield from ("fc1", "fc2", "predictions")


def read_h5(path):
    import h5py

    out = {}
    with h5py.File(path, "r") as f:
        root = f["model_weights"] if "model_weights" in f else f
        for name in layer_names():
            if name not in root:
                sys.exit(f"{path}: no layer {name}; a file with the classifier top is required")
            group = root[name]
            weight_names = [n.decode() if isinstance(n, bytes) else n for n in group.attrs["weight_names"]]
            kernel = next(n for n in weight_names if "kernel" in n)
            bias = next(n for n in weight_names if "bias" in n)
            out[name] = (np.asarray(group[kernel]), np.asarray(group[bias]))
    return out


def download():
    import tensorflow as tf

    model = tf.keras.applications.VGG19(weights="imagenet", include_top=True)
    return {name: tuple(np.asarray(w) for w in model.get_layer(name).get_weights()) for name in layer_names()}


def to_bundle_layout(name, kernel, bias):
    if name.startswith("block"):
        w = kernel.transpose(3, 2, 0, 1)
    elif name == "fc1":
        h, w_, c = FC1_GRID
        w = kernel.reshape(h, w_, c, -1).transpose(3, 2, 0, 1).reshape(kernel.shape[1], -1)
    else:
        w = kernel.T
    return np.ascontiguousarray(w, dtype="<f4"), np.ascontiguousarray(bias, dtype="<f4")


def check_shapes(tensors):
    cin = 3
    names = iter(layer_names())
    for width, convs in zip(WIDTHS, BLOCKS):
        for _ in range(convs):
            name = next(names)
            want = (width, cin, 3, 3)
            if tensors[name][0].shape != want:
                sys.exit(f"{name}: kernel shape {tensors[name][0].shape}, expected {want}")
            cin = width
    for name, want in [("fc1", (4096, 25088)), ("fc2", (4096, 4096)), ("predictions", (1000, 4096))]:
        if tensors[name][0].shape != want:
            sys.exit(f"{name}: kernel shape {tensors[name][0].shape}, expected {want}")


def write_bundle(tensors, out_dir, source):
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".bundle-", dir=parent)
    entries = []
    offset = 0
    with open(os.path.join(tmp, "data.bin"), "wb") as blob:
        for name in layer_names():
            for suffix, array in zip(("weight", "bias"), tensors[name]):
                blob.write(array.tobytes())
                entries.append(
                    {"name": f"{name}.{suffix}", "shape": list(array.shape), "file": "data.bin", "offset_bytes": offset}
                )
                offset += array.nbytes
    manifest = {"version": 1, "source": source, "tensors": entries}
    with open(os.path.join(tmp, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    if os.path.exists(out_dir):
        shutil.rmtree(out_dir)
    os.rename(tmp, out_dir)
    return offset


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("weights", nargs="?", help="Keras VGG19 .h5 file (with top)")
    p.add_argument("out", help="bundle directory to write")
    p.add_argument("--download", action="store_true", help="fetch ImageNet weights with tf.keras instead")
    args = p.parse_args()
    if args.download == bool(args.weights):
        p.error("give either a weights file or --download")

    if args.download:
        raw, source = download(), "keras.applications.VGG19 imagenet"
    else:
        raw, source = read_h5(args.weights), f"keras h5 {os.path.basename(args.weights)} sha256 {sha256(args.weights)}"
    tensors = {name: to_bundle_layout(name, *raw[name]) for name in layer_names()}
    check_shapes(tensors)
    size = write_bundle(tensors, args.out, source)
    params = sum(w.size + b.size for w, b in tensors.values())
    print(f"wrote {params} parameters ({size} bytes) to {args.out}")


if __name__ == "__main__":
    main()
