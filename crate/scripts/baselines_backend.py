#!/usr/bin/env python3
"""Reference-metric backend for `remove evaluate --baselines ...`.

One JSON request per stdin line, one JSON answer per stdout line:

    {"task": "lpips", "image_a": PNG, "image_b": PNG, "net": "alex"} -> {"value": d}
    {"task": "caption", "image": PNG}                                 -> {"caption": text}
    {"task": "clip_score", "image": PNG, "prompt": text}             -> {"value": s}

LPIPS uses the `lpips` package. Captions come from BLIP and CLIPScore from
CLIP ViT-B/32 via transformers; CLIPScore follows the published convention
100 * max(cos, 0). Model ids can be overridden with REMOVE_CAPTION_MODEL and
REMOVE_CLIP_MODEL, the device with REMOVE_DEVICE. An optional "weights" key
names a directory that holds local copies of those models.
"""

import json
import os
import sys
import traceback

_cache = {}


def device():
    return os.environ.get("REMOVE_DEVICE", "cpu")


def model_path(req, name, default):
    root = req.get("weights")
    if root and os.path.isdir(os.path.join(root, name)):
        return os.path.join(root, name)
    return default


def load_rgb(path):
    from PIL import Image

    return Image.open(path).convert("RGB")


def lpips_model(net):
    key = ("lpips", net)
    if key not in _cache:
        import lpips

        _cache[key] = lpips.LPIPS(net=net, verbose=False).to(device()).eval()
    return _cache[key]


def to_tensor(img):
    import numpy as np
    import torch

    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(device())


def task_lpips(req):
    import torch

    model = lpips_model(req.get("net", "alex"))
    with torch.no_grad():
        d = model(to_tensor(load_rgb(req["image_a"])), to_tensor(load_rgb(req["image_b"])))
    return {"value": float(d.item())}


def caption_model(req):
    name = model_path(req, "caption", os.environ.get("REMOVE_CAPTION_MODEL", "Salesforce/blip-image-captioning-base"))
    if ("caption", name) not in _cache:
        from transformers import BlipForConditionalGeneration, BlipProcessor

        _cache[("caption", name)] = (
            BlipProcessor.from_pretrained(name),
            BlipForConditionalGeneration.from_pretrained(name).to(device()).eval(),
        )
    return _cache[("caption", name)]


def task_caption(req):
    import torch

    processor, model = caption_model(req)
    inputs = processor(images=load_rgb(req["image"]), return_tensors="pt").to(device())
    with torch.no_grad():
        out = model.generate(**inputs, max_new_tokens=30)
    return {"caption": processor.decode(out[0], skip_special_tokens=True).strip()}


def clip_model(req):
    name = model_path(req, "clip", os.environ.get("REMOVE_CLIP_MODEL", "openai/clip-vit-base-patch32"))
    if ("clip", name) not in _cache:
        from transformers import CLIPModel, CLIPProcessor

        _cache[("clip", name)] = (
            CLIPProcessor.from_pretrained(name),
            CLIPModel.from_pretrained(name).to(device()).eval(),
        )
    return _cache[("clip", name)]


def task_clip_score(req):
    import torch

    processor, model = clip_model(req)
    inputs = processor(
        text=[req["prompt"]], images=load_rgb(req["image"]), return_tensors="pt", padding=True, truncation=True
    ).to(device())
    with torch.no_grad():
        img = model.get_image_features(pixel_values=inputs["pixel_values"])
        txt = model.get_text_features(input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"])
    img = img / img.norm(dim=-1, keepdim=True)
    txt = txt / txt.norm(dim=-1, keepdim=True)
    cos = float((img * txt).sum().item())
    return {"value": 100.0 * max(cos, 0.0)}


TASKS = {"lpips": task_lpips, "caption": task_caption, "clip_score": task_clip_score}


def main():
    while True:
        line = sys.stdin.readline()
        if not line:
            break
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            handler = TASKS.get(req.get("task"))
            if handler is None:
                raise ValueError(f"unknown task {req.get('task')!r}")
            resp = handler(req)
        except Exception as exc:
            traceback.print_exc(file=sys.stderr)
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(resp), flush=True)


if __name__ == "__main__":
    main()
