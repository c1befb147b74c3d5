use wflow::io::*;
use wflow::synthdata::{make_puppet, Garment, PuppetSpec};
use wflow::{Error, FlowField, Image};

#[test]
fn flo_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.flo");
    let flow = FlowField::<f32>::from_fn(7, 5, |x, y| ((x + y) % 4 != 0).then(|| (x as f32 * 0.37 - 1.0, -(y as f32) / 3.0)));
    save_flo(&path, &flow).unwrap();
    assert!(validity_sidecar(&path).exists());
    assert_eq!(load_flo::<f32>(&path).unwrap(), flow);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PIEH");
    assert_eq!(bytes.len(), 12 + 8 * 35);
    assert_eq!(encode_flo(&flow), bytes);
}

#[test]
fn flo_without_sidecar_uses_unknown_markers() {
    let flow = FlowField::<f64>::from_fn(3, 2, |x, _| (x != 1).then_some((0.5, -0.25)));
    let back: FlowField<f64> = decode_flo(&encode_flo(&flow), "mem.flo".as_ref()).unwrap();
    assert_eq!(back, flow);
}

#[test]
fn malformed_flo_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.flo");
    std::fs::write(&path, [0u8; 20]).unwrap();
    let err = load_flo::<f64>(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("bad.flo"));
    let mut truncated = encode_flo(&FlowField::<f64>::zeros(4, 4));
    truncated.pop();
    assert!(decode_flo::<f64>(&truncated, "t.flo".as_ref()).is_err());
}

#[test]
fn bundle_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_puppet::<f64>(&PuppetSpec {
        garment: Garment::LooseSkirt,
        ..Default::default()
    })
    .unwrap();
    save_bundle(dir.path(), &p.bundle, &p.mesh).unwrap();
    let (b, mesh) = load_bundle::<f64>(dir.path()).unwrap();
    assert_eq!(b.part_map, p.bundle.part_map);
    assert_eq!(b.segmentation, p.bundle.segmentation);
    assert_eq!(b.foreground, p.bundle.foreground);
    assert_eq!(b.skeleton, p.bundle.skeleton);
    assert_eq!(mesh, p.mesh);
    for (x, y) in b.image.as_slice().iter().zip(p.bundle.image.as_slice()) {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
    }
    // a second save of the loaded bundle is byte-identical
    let again = tempfile::tempdir().unwrap();
    save_bundle(again.path(), &b, &mesh).unwrap();
    for name in [BUNDLE_IMAGE, BUNDLE_PARTS, BUNDLE_SEGMENTATION, BUNDLE_FOREGROUND, BUNDLE_SKELETON, BUNDLE_MESH] {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(again.path().join(name)).unwrap());
    }
}

#[test]
fn missing_mesh_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_puppet::<f64>(&PuppetSpec::default()).unwrap();
    save_bundle(dir.path(), &p.bundle, &p.mesh).unwrap();
    std::fs::remove_file(dir.path().join(BUNDLE_MESH)).unwrap();
    let err = load_bundle::<f64>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("mesh.json"), "{err}");
}

#[test]
fn images_quantize_to_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::<f64>::from_fn(5, 3, 3, |x, y, c| ((x * 40 + y * 7 + c * 3) % 256) as f64 / 255.0);
    let path = dir.path().join("i.png");
    save_image(&path, &img).unwrap();
    assert_eq!(load_image::<f64>(&path).unwrap(), img);
    let gray = dir.path().join("g.pgm");
    let one = Image::<f64>::from_fn(4, 4, 1, |x, y, _| (x * 4 + y) as f64 / 255.0);
    save_image(&gray, &one).unwrap();
    assert!(std::fs::read(&gray).unwrap().starts_with(b"P5"));
    assert_eq!(load_image::<f64>(&gray).unwrap().get(3, 2, 1), 14.0 / 255.0);
}

#[test]
fn color_wheel_marks_invalid_pixels_black() {
    let flow = FlowField::<f64>::from_fn(3, 1, |x, _| (x > 0).then_some((x as f64, 0.0)));
    let img = flow_to_color(&flow);
    assert_eq!(img.pixel(0, 0), &[0.0, 0.0, 0.0]);
    assert!(img.pixel(2, 0).iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(img.pixel(1, 0), img.pixel(2, 0));
}
