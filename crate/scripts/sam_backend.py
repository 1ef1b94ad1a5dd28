#!/usr/bin/env python3
"""SAM image-encoder backend for the `remove` CLI.

Reads one JSON request per stdin line and answers with one JSON line:

    {"task": "encode", "variant": "sam-vit-h", "weights": PATH, "device": "cpu",
     "input": IN.npy, "output": OUT.npy}  ->  {"shape": [1, d, r, c]}

IN.npy holds a normalized 1x3xSxS float32 tensor. The final image-encoder
feature map is written to OUT.npy. Any failure is reported as {"error": msg}.

`weights` may be a Hugging Face model directory (loaded with transformers)
or an original `.pth` checkpoint (needs the `segment_anything` package).
"""

import json
import sys
import traceback

import numpy as np

_models = {}


def load_model(variant, weights, device):
    key = (variant, weights, device)
    if key in _models:
        return _models[key]
    import torch

    if str(weights).endswith((".pth", ".pt")):
        from segment_anything import sam_model_registry

        kind = variant.rsplit("-", 1)[-1]  # sam-vit-h -> h
        sam = sam_model_registry[f"vit_{kind}"](checkpoint=weights)
        encoder = sam.image_encoder.to(device).eval()

        def run(x):
            return encoder(x)

    else:
        from transformers import SamModel

        model = SamModel.from_pretrained(weights).to(device).eval()

        def run(x):
            return model.get_image_embeddings(pixel_values=x)

    torch.set_grad_enabled(False)
    _models[key] = run
    return run


def encode(req):
    import torch

    device = req.get("device") or "cpu"
    run = load_model(req.get("variant", "sam-vit-h"), req["weights"], device)
    x = torch.from_numpy(np.load(req["input"]).astype(np.float32)).to(device)
    with torch.no_grad():
        feats = run(x)
    if isinstance(feats, (tuple, list)):
        feats = feats[0]
    out = feats.detach().float().cpu().numpy()
    np.save(req["output"], out)
    return {"shape": list(out.shape)}


def main():
    while True:
        line = sys.stdin.readline()
        if not line:
            break
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            task = req.get("task")
            if task != "encode":
                raise ValueError(f"unknown task {task!r}")
            resp = encode(req)
        except Exception as exc:  # reported to the caller, which decides
            traceback.print_exc(file=sys.stderr)
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(resp), flush=True)


if __name__ == "__main__":
    main()
