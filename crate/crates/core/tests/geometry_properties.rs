use proptest::prelude::*;

use wflow::geometry::{rasterize, vertex_flow};
use wflow::synthdata::{make_puppet, PuppetSpec};
use wflow::Mesh2D;

fn puppet_mesh() -> Mesh2D<f64> {
    make_puppet::<f64>(&PuppetSpec::default()).unwrap().mesh
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn vertex_flow_is_exact_for_affine_motion(
        a in 0.8f64..1.2, b in -0.2f64..0.2, c in -0.2f64..0.2, d in 0.8f64..1.2,
        tx in -10.0f64..10.0, ty in -10.0f64..10.0,
    ) {
        let target = puppet_mesh();
        let source = target.map_vertices(|[x, y]| [a * x + b * y + tx, c * x + d * y + ty]);
        let corr = rasterize(&target, 128, 128).unwrap();
        let (flow, mv) = vertex_flow(&source, &target, &corr).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                let (px, py) = (x as f64, y as f64);
                match flow.lookup(x, y) {
                    Some((u, v)) => {
                        prop_assert_eq!(mv.get(x, y), 1.0);
                        prop_assert!((u - (a * px + b * py + tx - px)).abs() < 1e-6);
                        prop_assert!((v - (c * px + d * py + ty - py)).abs() < 1e-6);
                    }
                    None => prop_assert_eq!(mv.get(x, y), 0.0),
                }
            }
        }
    }
}

#[test]
fn barycentrics_reconstruct_pixel_points() {
    let mesh = puppet_mesh();
    let corr = rasterize(&mesh, 128, 128).unwrap();
    assert!(corr.covered_count() > 1000);
    for y in 0..128 {
        for x in 0..128 {
            if let Some(hit) = corr.get(x, y) {
                let b = hit.bary;
                assert!(b.iter().all(|&v| v >= 0.0));
                assert!((b[0] + b[1] + b[2] - 1.0).abs() < 1e-6);
                let [qx, qy] = mesh.interpolate(hit.face, b);
                assert!((qx - x as f64).abs() < 1e-6 && (qy - y as f64).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn vertex_mask_equals_coverage() {
    let target = puppet_mesh();
    let source = target.map_vertices(|[x, y]| [x + 2.0, y - 1.0]);
    let corr = rasterize(&target, 128, 128).unwrap();
    let (_, mv) = vertex_flow(&source, &target, &corr).unwrap();
    assert_eq!(mv, corr.coverage());
}

#[test]
fn rotation_about_canvas_center() {
    let target = puppet_mesh();
    let (s, c) = 10f64.to_radians().sin_cos();
    let center = 63.5;
    let rot = |x: f64, y: f64| {
        let (dx, dy) = (x - center, y - center);
        [center + c * dx - s * dy, center + s * dx + c * dy]
    };
    let source = target.map_vertices(|[x, y]| rot(x, y));
    let corr = rasterize(&target, 128, 128).unwrap();
    let (flow, _) = vertex_flow(&source, &target, &corr).unwrap();
    for y in 0..128 {
        for x in 0..128 {
            if let Some((u, v)) = flow.lookup(x, y) {
                let [rx, ry] = rot(x as f64, y as f64);
                assert!((u - (rx - x as f64)).abs() < 1e-6);
                assert!((v - (ry - y as f64)).abs() < 1e-6);
            }
        }
    }
}
