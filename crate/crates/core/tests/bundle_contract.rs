//! On-disk bundle contract: manifest keys, tensor encoding, and bundles written by an
//! independent producer (the way the extractor writes them).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::tempdir;
use zeroreg::bundle::MANIFEST_FILE;
use zeroreg::projection::{build_masked_cloud, ProjectionConfig};
use zeroreg::synthgen::{generate_pair, SceneSpec};
use zeroreg::{read_bundle, write_bundle, ZeroRegError};

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        object_count: 3,
        duplicates_per_category: 1,
        points_per_object: 200,
        view_count: 2,
        seed,
        ..SceneSpec::default()
    }
}

fn le_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn manifest_uses_contract_keys() {
    let (bundle, _, _) = generate_pair(&small_spec(1)).unwrap();
    let dir = tempdir().unwrap();
    write_bundle(&bundle, dir.path()).unwrap();
    let m = manifest(dir.path());
    let keys: BTreeSet<&str> = m.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "bundle_id",
        "semantic_dim",
        "geometric_dim",
        "frames",
        "masks",
        "semantic_features",
        "geometric_sets",
    ]
    .into();
    assert_eq!(keys, expected);
    assert_eq!(m["semantic_dim"], json!(16));
    assert_eq!(m["geometric_dim"], json!(32));

    let tensor_keys: BTreeSet<&str> = ["name", "file", "dtype", "shape"].into();
    let depth = &m["frames"][0]["depth"];
    let mask = &m["masks"][0]["mask"];
    for t in [depth, mask, &m["geometric_sets"][0]["descriptors"]] {
        let k: BTreeSet<&str> = t.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(k, tensor_keys);
        assert!(dir.path().join(t["file"].as_str().unwrap()).is_file());
    }
    assert_eq!(depth["dtype"], "f32");
    assert_eq!(mask["dtype"], "u8");
}

#[test]
fn tensors_are_raw_little_endian_row_major() {
    let (bundle, _, _) = generate_pair(&small_spec(2)).unwrap();
    let dir = tempdir().unwrap();
    write_bundle(&bundle, dir.path()).unwrap();
    let m = manifest(dir.path());

    let depth = &m["frames"][0]["depth"];
    let bytes = fs::read(dir.path().join(depth["file"].as_str().unwrap())).unwrap();
    let shape: Vec<usize> = serde_json::from_value(depth["shape"].clone()).unwrap();
    assert_eq!(bytes.len(), 4 * shape[0] * shape[1]);
    let frame = &bundle.frames[0];
    assert_eq!(shape, vec![frame.intrinsics.height, frame.intrinsics.width]);
    let decoded = le_f32(&bytes);
    for (a, b) in decoded.iter().zip(&frame.depth) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // Row-major: element (row, col) sits at row * width + col.
    let (row, col) = (shape[0] / 2, shape[1] / 2);
    assert_eq!(
        decoded[row * shape[1] + col].to_bits(),
        frame.depth_at(col, row).to_bits()
    );

    let mask = &m["masks"][0]["mask"];
    let bytes = fs::read(dir.path().join(mask["file"].as_str().unwrap())).unwrap();
    assert!(bytes.iter().all(|b| *b <= 1));
    let set: Vec<bool> = bytes.iter().map(|b| *b == 1).collect();
    assert_eq!(set, bundle.masks[0].mask);
}

#[test]
fn generated_bundles_round_trip_exactly() {
    for seed in 0..4 {
        let (source, target, _) = generate_pair(&small_spec(seed)).unwrap();
        for bundle in [source, target] {
            let dir = tempdir().unwrap();
            write_bundle(&bundle, dir.path()).unwrap();
            assert_eq!(read_bundle(dir.path()).unwrap(), bundle);
        }
    }
}

fn tree_hash(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, Sha256::digest(fs::read(p).unwrap()).to_vec())
        })
        .collect()
}

#[test]
fn writing_is_byte_deterministic() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    write_bundle(&generate_pair(&small_spec(5)).unwrap().0, a.path()).unwrap();
    write_bundle(&generate_pair(&small_spec(5)).unwrap().0, b.path()).unwrap();
    assert_eq!(tree_hash(a.path()), tree_hash(b.path()));
}

// ---------------------------------------------------------------------------
// A bundle produced without this crate's writer, as the extractor does it.

const W: usize = 32;
const H: usize = 24;
const SEMANTIC_DIM: usize = 512;
const GEOMETRIC_DIM: usize = 8;

fn f32_file(dir: &Path, name: &str, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(name), bytes).unwrap();
}

fn tensor(name: &str, dtype: &str, shape: &[usize]) -> Value {
    json!({ "name": name, "file": format!("{name}.{dtype}"), "dtype": dtype, "shape": shape })
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Two views of a flat wall two metres away holding two objects; the second camera is
/// shifted 0.1 m along x.
fn write_external_bundle(dir: &Path, depth_len: usize) {
    fs::create_dir_all(dir).unwrap();
    let mut frames = Vec::new();
    let mut masks = Vec::new();
    let mut refs = Vec::new();
    let mut semantic = Vec::new();
    let mut sets = Vec::new();
    for view in 0..2u32 {
        let depth = vec![2.0f32; depth_len];
        f32_file(dir, &format!("depth_v{view}.f32"), &depth);
        frames.push(json!({
            "view_id": view,
            "intrinsics": { "fx": 30.0, "fy": 30.0, "cx": 15.5, "cy": 11.5, "width": W, "height": H },
            "pose": {
                "rotation": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                "translation": [0.1 * f64::from(view), 0.0, 0.0],
            },
            "depth": tensor(&format!("depth_v{view}"), "f32", &[H, W]),
        }));
        // Pixel shift of 0.1 m at 2 m with fx 30 is 1.5 px; masks move with the view.
        let offset = if view == 0 { 0 } else { 1 };
        for (mask_id, (label, col0)) in [("chair", 4usize), ("table", 18usize)].into_iter().enumerate() {
            let mut bytes = vec![0u8; W * H];
            for row in 6..18 {
                for col in col0 - offset..col0 - offset + 8 {
                    bytes[row * W + col] = 1;
                }
            }
            let name = format!("mask_v{view}_m{mask_id}");
            fs::write(dir.join(format!("{name}.u8")), bytes).unwrap();
            masks.push(json!({
                "view_id": view,
                "mask_id": mask_id,
                "category_label": label,
                "mask": tensor(&name, "u8", &[H, W]),
            }));
            refs.push(json!([view, mask_id]));
            let axis = if label == "chair" { 0 } else { 1 };
            semantic.extend(unit(
                (0..SEMANTIC_DIM).map(|i| if i == axis { 1.0 } else { 0.01 }).collect(),
            ));
        }
        let mut pixels = Vec::new();
        let mut descriptors = Vec::new();
        for row in (2..H).step_by(4) {
            for col in (2..W).step_by(4) {
                pixels.extend([col as f32, row as f32]);
                descriptors.extend(unit(
                    (0..GEOMETRIC_DIM)
                        .map(|i| 1.0 + ((row * W + col + i) % 5) as f32)
                        .collect(),
                ));
            }
        }
        let count = pixels.len() / 2;
        f32_file(dir, &format!("keypoints_v{view}.f32"), &pixels);
        f32_file(dir, &format!("descriptors_v{view}.f32"), &descriptors);
        sets.push(json!({
            "view_id": view,
            "pixels": tensor(&format!("keypoints_v{view}"), "f32", &[count, 2]),
            "descriptors": tensor(&format!("descriptors_v{view}"), "f32", &[count, GEOMETRIC_DIM]),
        }));
    }
    f32_file(dir, "semantic.f32", &semantic);
    let manifest = json!({
        "bundle_id": "external-0",
        "semantic_dim": SEMANTIC_DIM,
        "geometric_dim": GEOMETRIC_DIM,
        "frames": frames,
        "masks": masks,
        "semantic_features": {
            "mask_refs": refs,
            "vectors": tensor("semantic", "f32", &[4, SEMANTIC_DIM]),
        },
        "geometric_sets": sets,
        "provenance": { "backend": "mock", "prompt_template": "a photo of a {label}" },
    });
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
}

#[test]
fn externally_written_bundle_validates() {
    let dir = tempdir().unwrap();
    write_external_bundle(dir.path(), W * H);
    let bundle = read_bundle(dir.path()).unwrap();
    bundle.validate().unwrap();
    assert_eq!(bundle.semantic_dim(), SEMANTIC_DIM);
    assert_eq!(bundle.geometric_dim(), GEOMETRIC_DIM);
    assert_eq!(bundle.masks.len(), 4);
    assert_eq!(bundle.provenance["prompt_template"], "a photo of a {label}");

    // Both views of each object merge into one object.
    let (cloud, descriptors, _) = build_masked_cloud(&bundle, &ProjectionConfig::default()).unwrap();
    assert_eq!(cloud.objects.len(), 2);
    assert!(!descriptors.is_empty());

    // Provenance survives a rewrite.
    let again = tempdir().unwrap();
    write_bundle(&bundle, again.path()).unwrap();
    assert_eq!(manifest(again.path())["provenance"]["backend"], "mock");
    assert_eq!(read_bundle(again.path()).unwrap(), bundle);
}

#[test]
fn declared_shape_must_match_payload() {
    let dir = tempdir().unwrap();
    write_external_bundle(dir.path(), 100);
    match read_bundle(dir.path()) {
        Err(ZeroRegError::Format { path, .. }) => assert!(path.ends_with("depth_v0.f32"), "{path:?}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn unknown_manifest_keys_are_rejected() {
    let dir = tempdir().unwrap();
    write_external_bundle(dir.path(), W * H);
    let mut m = manifest(dir.path());
    m["semantic_dims"] = json!(512);
    fs::write(dir.path().join(MANIFEST_FILE), m.to_string()).unwrap();
    assert!(matches!(read_bundle(dir.path()), Err(ZeroRegError::Format { .. })));
}

#[test]
fn non_unit_descriptors_fail_validation() {
    let dir = tempdir().unwrap();
    write_external_bundle(dir.path(), W * H);
    let count = (H - 2).div_ceil(4) * (W - 2).div_ceil(4);
    f32_file(dir.path(), "descriptors_v1.f32", &vec![1.0; count * GEOMETRIC_DIM]);
    match read_bundle(dir.path()) {
        Err(ZeroRegError::Validation { field, .. }) => assert!(field.contains("descriptors"), "{field}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}
