use wflow::flowfield::warp_bilinear;
use wflow::geometry::rasterize;
use wflow::labels::{part, seg};
use wflow::synthdata::{make_pair, make_puppet, Background, BoneLengths, Garment, Pose, PuppetSpec, Texture};
use wflow::Error;

fn spec() -> PuppetSpec {
    PuppetSpec {
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn same_spec_renders_identically() {
    let s = PuppetSpec {
        garment: Garment::LooseSkirt,
        background: Background::Textured,
        texture: Texture::Checker { period: 7.0 },
        ..spec()
    };
    assert_eq!(make_puppet::<f64>(&s).unwrap(), make_puppet::<f64>(&s).unwrap());
}

#[test]
fn body_mesh_has_two_hundred_vertices() {
    let p = make_puppet::<f64>(&spec()).unwrap();
    assert_eq!(p.mesh.vertices.len(), 200);
    assert!(p.mesh.validate().is_ok());
    assert_eq!(p.extended.body(), p.mesh);
}

#[test]
fn t_pose_is_mirror_symmetric() {
    for size in [128usize, 97] {
        let p = make_puppet::<f64>(&PuppetSpec {
            canvas: (size, size),
            ..spec()
        })
        .unwrap();
        let fg = &p.bundle.foreground;
        let mut mismatched = 0;
        for y in 0..size {
            for x in 0..size {
                if fg.get(x, y) != fg.get(size - 1 - x, y) {
                    mismatched += 1;
                }
            }
        }
        let area = fg.count_above(0.5);
        assert!(mismatched * 100 < area, "{mismatched} asymmetric pixels of {area}");
        for y in 0..size {
            let row: Vec<usize> = (0..size).filter(|&x| fg.get(x, y) > 0.5).collect();
            if let (Some(&l), Some(&r)) = (row.first(), row.last()) {
                assert!(((l + r) as f64 - (size - 1) as f64).abs() <= 1.0, "row {y}: {l}..{r}");
            }
        }
    }
}

#[test]
fn skirt_lies_outside_body_coverage() {
    let p = make_puppet::<f64>(&PuppetSpec {
        garment: Garment::LooseSkirt,
        ..spec()
    })
    .unwrap();
    let (w, h) = p.bundle.image.dims();
    let body = rasterize(&p.mesh, w, h).unwrap().coverage();
    let mut outside = 0;
    for y in 0..h {
        for x in 0..w {
            if p.bundle.segmentation.get(x, y) == seg::SKIRT {
                assert_eq!(p.bundle.foreground.get(x, y), 1.0);
                if body.get(x, y) == 0.0 {
                    outside += 1;
                }
            }
        }
    }
    assert!(outside > 300, "only {outside} skirt pixels escape the body mesh");
    assert!(p.extended.mesh.part_labels.contains(&part::SKIRT));
    assert!(!p.mesh.part_labels.contains(&part::SKIRT));
}

#[test]
fn bundle_layers_agree() {
    let p = make_puppet::<f64>(&PuppetSpec {
        garment: Garment::LooseSkirt,
        ..spec()
    })
    .unwrap();
    p.bundle.validate().unwrap();
    assert_eq!(p.bundle.skeleton.len(), 15);
    assert_eq!(p.bundle.visible_joints(), 15);
}

#[test]
fn equal_poses_give_zero_flow() {
    let pair = make_pair::<f64>(&spec(), &Pose::default(), &Pose::default()).unwrap();
    for y in 0..128 {
        for x in 0..128 {
            if let Some((u, v)) = pair.gt_flow.lookup(x, y) {
                assert!(u.abs() < 1e-9 && v.abs() < 1e-9);
            }
        }
    }
}

#[test]
fn translated_pose_gives_constant_flow() {
    let s = PuppetSpec {
        garment: Garment::LooseSkirt,
        ..spec()
    };
    let pair = make_pair::<f64>(&s, &Pose::default(), &Pose::default().translated(7.0, 3.0)).unwrap();
    let mut n = 0;
    for y in 0..128 {
        for x in 0..128 {
            if let Some((u, v)) = pair.gt_flow.lookup(x, y) {
                assert!((u + 7.0).abs() < 1e-9 && (v + 3.0).abs() < 1e-9);
                n += 1;
            }
        }
    }
    assert!(n > 1000);
}

#[test]
fn ground_truth_flow_is_valid_exactly_on_the_target() {
    let s = PuppetSpec {
        garment: Garment::LooseSkirt,
        ..spec()
    };
    let b = Pose {
        left_knee: 0.5,
        skirt_phase: 1.0,
        ..Pose::default()
    };
    let pair = make_pair::<f64>(&s, &Pose::default(), &b).unwrap();
    assert_eq!(pair.gt_flow.validity_mask(), pair.target.bundle.foreground);
    assert_eq!(pair.gt_composite, pair.target.bundle.image);
}

fn figure_l1(spec: &PuppetSpec, a: &Pose, b: &Pose) -> f64 {
    let pair = make_pair::<f64>(spec, a, b).unwrap();
    let warped = warp_bilinear(&pair.source.bundle.image, &pair.gt_flow, 0.0).unwrap();
    let fg = &pair.target.bundle.foreground;
    let (w, h) = fg.dims();
    let (mut sum, mut n) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if fg.get(x, y) > 0.5 {
                for c in 0..3 {
                    sum += (warped.get(x, y, c) - pair.target.bundle.image.get(x, y, c)).abs();
                    n += 1.0;
                }
            }
        }
    }
    sum / n
}

#[test]
fn warping_by_ground_truth_reproduces_the_target() {
    let elbow = Pose {
        left_elbow: 20f64.to_radians(),
        ..Pose::default()
    };
    assert!(figure_l1(&spec(), &Pose::default(), &elbow) < 0.03);
    let loose = PuppetSpec {
        garment: Garment::LooseSkirt,
        texture: Texture::Stripes { period: 9.0 },
        ..spec()
    };
    let busy = Pose {
        right_shoulder: 0.4,
        left_hip: 0.2,
        right_knee: 0.3,
        rotation: 0.1,
        skirt_phase: 0.8,
        ..Pose::default().translated(3.0, -2.0)
    };
    assert!(figure_l1(&loose, &Pose::default(), &busy) < 0.03);
}

#[test]
fn extreme_angles_are_clamped_with_warnings() {
    let p = make_puppet::<f64>(&PuppetSpec {
        pose: Pose {
            left_elbow: 3.0,
            right_hip: -2.0,
            ..Pose::default()
        },
        ..spec()
    })
    .unwrap();
    assert_eq!(p.warnings.len(), 2);
    assert!(p.warnings[0].contains("left_elbow"));
}

#[test]
fn invalid_specs_are_rejected() {
    let small = PuppetSpec {
        canvas: (63, 128),
        ..spec()
    };
    assert!(matches!(make_puppet::<f64>(&small), Err(Error::InvalidParameter(_))));
    let bones = PuppetSpec {
        bones: BoneLengths {
            thigh: 0.0,
            ..Default::default()
        },
        ..spec()
    };
    assert!(make_puppet::<f64>(&bones).is_err());
    let nan = PuppetSpec {
        pose: Pose {
            neck: f64::NAN,
            ..Pose::default()
        },
        ..spec()
    };
    assert!(make_puppet::<f64>(&nan).is_err());
}

#[test]
fn single_precision_matches_double() {
    let a = make_puppet::<f64>(&spec()).unwrap();
    let b = make_puppet::<f32>(&spec()).unwrap();
    assert_eq!(a.bundle.part_map, b.bundle.part_map);
    for (x, y) in a.bundle.image.as_slice().iter().zip(b.bundle.image.as_slice()) {
        assert!((x - *y as f64).abs() < 1e-6);
    }
}
