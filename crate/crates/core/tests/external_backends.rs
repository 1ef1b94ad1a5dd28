//! Drives the subprocess adapters against small Python servers. Skipped when
//! `python3` with numpy is unavailable.

use std::path::{Path, PathBuf};
use std::process::Command;

use remove_core::baselines::{clip_score, lpips_score, ClipMode, ExternalBaselines};
use remove_core::encoders::ExternalVitEncoder;
use remove_core::preprocess::{Normalization, PreprocessedImage};
use remove_core::{remove_score, EditedImage, EncoderOptions, EraseMask, MetricConfig, PatchEncoder, RgbRaster};

const PATCH_MEANS: &str = r#"
import json, sys
import numpy as np
p = int(sys.argv[1])
for line in sys.stdin:
    req = json.loads(line)
    if req.get("task") != "encode":
        print(json.dumps({"error": "bad task"}), flush=True)
        continue
    x = np.load(req["input"])[0]
    c, s, _ = x.shape
    g = s // p
    out = x.reshape(c, g, p, g, p).mean(axis=(2, 4))
    out = np.concatenate([out, out ** 2])[None].astype(np.float32)
    np.save(req["output"], out)
    print("loading weights from " + req["weights"])
    print(json.dumps({"shape": list(out.shape)}), flush=True)
"#;

const BASELINES: &str = r#"
import json, sys
import numpy as np
from PIL import Image
def load(p):
    return np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0
for line in sys.stdin:
    req = json.loads(line)
    t = req["task"]
    if t == "lpips":
        d = np.abs(load(req["image_a"]) - load(req["image_b"])).mean()
        print(json.dumps({"value": float(d)}), flush=True)
    elif t == "caption":
        r, g, b = load(req["image"]).mean(axis=(0, 1))
        print(json.dumps({"caption": "red" if r >= max(g, b) else "other"}), flush=True)
    elif t == "clip_score":
        r = load(req["image"])[..., 0].mean()
        print(json.dumps({"value": 100.0 * r if req["prompt"] == "red" else 0.0}), flush=True)
    else:
        print(json.dumps({"error": "unknown task " + t}), flush=True)
"#;

fn python_with(modules: &str) -> bool {
    Command::new("python3")
        .args(["-c", &format!("import {modules}")])
        .output()
        .is_ok_and(|o| o.status.success())
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn textured(w: usize, h: usize) -> RgbRaster {
    RgbRaster::from_fn(w, h, |x, y| {
        [((x * 7 + y * 3) % 23) as f32 / 22.0, ((x * y) % 17) as f32 / 16.0, (y % 11) as f32 / 10.0]
    })
}

#[test]
fn external_encoder_returns_patch_means() {
    if !python_with("numpy") {
        eprintln!("python3 with numpy not available, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let server = script(dir.path(), "encoder.py", PATCH_MEANS);
    let weights = dir.path().join("weights.bin");
    std::fs::write(&weights, b"stub").unwrap();
    let opts = EncoderOptions {
        input_side: 32,
        patch_size: 8,
        weights: Some(weights),
        command: Some(format!("python3 {} 8", server.display())),
        device: "cpu".into(),
    };
    let encoder = ExternalVitEncoder::load("toy-vit", &opts).unwrap();

    let side = 32;
    let data: Vec<f64> = (0..side * side * 3).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
    let input = PreprocessedImage::new(side, data.clone(), Normalization::ImageNet).unwrap();
    for _ in 0..3 {
        let grid = encoder.extract(&input).unwrap();
        assert_eq!((grid.rows(), grid.cols(), grid.dim()), (4, 4, 6));
        for row in 0..4 {
            for col in 0..4 {
                let cell = grid.cell(row, col);
                for c in 0..3 {
                    let mut sum = 0.0;
                    for y in row * 8..row * 8 + 8 {
                        for x in col * 8..col * 8 + 8 {
                            sum += data[(y * side + x) * 3 + c] as f32 as f64;
                        }
                    }
                    let mean = sum / 64.0;
                    assert!((cell[c] - mean).abs() < 1e-5, "patch ({row},{col}) channel {c}");
                }
            }
        }
    }
    assert_eq!(encoder.embedding_dim(), Some(6));

    let cfg = MetricConfig {
        input_side: 32,
        patch_size: 8,
        ..MetricConfig::default()
    };
    let flat = EditedImage::new("flat", RgbRaster::filled(40, 40, [0.3, 0.6, 0.2]));
    let mask = EraseMask::rect(40, 40, 15, 15, 10, 10);
    let result = remove_score(&flat, &mask, &encoder, &cfg).unwrap();
    assert!((result.score - 1.0).abs() < 1e-6, "{}", result.score);
}

#[test]
fn external_encoder_rejects_wrong_grid() {
    if !python_with("numpy") {
        eprintln!("python3 with numpy not available, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let server = script(dir.path(), "encoder.py", PATCH_MEANS);
    let weights = dir.path().join("weights.bin");
    std::fs::write(&weights, b"stub").unwrap();
    // Server pools 4px patches while the adapter expects 8px.
    let opts = EncoderOptions {
        input_side: 32,
        patch_size: 8,
        weights: Some(weights),
        command: Some(format!("python3 {} 4", server.display())),
        device: "cpu".into(),
    };
    let encoder = ExternalVitEncoder::load("toy-vit", &opts).unwrap();
    let input = PreprocessedImage::new(32, vec![0.0; 32 * 32 * 3], Normalization::ImageNet).unwrap();
    let err = encoder.extract(&input).unwrap_err();
    assert!(err.to_string().contains("8x8"), "{err}");
}

#[test]
fn external_baselines_round_trip() {
    if !python_with("numpy, PIL") {
        eprintln!("python3 with numpy and Pillow not available, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let server = script(dir.path(), "baselines.py", BASELINES);
    let backend = ExternalBaselines::load(&format!("python3 {}", server.display()), None, "alex").unwrap();

    let reference = textured(24, 24);
    let edited = EditedImage::new("e", reference.clone()).with_ground_truth(reference.clone()).unwrap();
    let same = lpips_score(&backend, &edited, None).unwrap();
    assert_eq!(same.metric_id, "LPIPS-alex");
    assert!(same.value.abs() < 1e-12);

    let red = EditedImage::new("r", RgbRaster::filled(24, 24, [1.0, 0.0, 0.0]))
        .with_ground_truth(reference)
        .unwrap();
    let far = lpips_score(&backend, &red, None).unwrap();
    assert!(far.value > 0.1);

    let nr = clip_score(&backend, &backend, &red, ClipMode::NoReference).unwrap();
    assert_eq!(nr.prompt.as_deref(), Some("red"));
    assert!((nr.value - 100.0).abs() < 1e-9);
}
