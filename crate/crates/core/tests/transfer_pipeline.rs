use proptest::prelude::*;

use wflow::cycleopt::CycleConfig;
use wflow::labels::seg;
use wflow::metrics::iou;
use wflow::pipeline::{fuse_composite, sample_pairs, transfer, warp_label_mask, FlowMode, TransferConfig};
use wflow::synthdata::{make_pair, make_puppet, Background, Garment, Pose, PuppetSpec, Texture};
use wflow::{Error, Image, Mask, PartMap};

fn spec(size: usize) -> PuppetSpec {
    PuppetSpec {
        canvas: (size, size),
        texture: Texture::Noise { period: 6.0 },
        seed: 11,
        ..Default::default()
    }
}

fn articulated() -> Pose {
    Pose {
        left_shoulder: 0.5,
        right_elbow: 0.6,
        left_hip: 0.25,
        right_knee: 0.4,
        rotation: 0.05,
        ..Pose::default().translated(4.0, -3.0)
    }
}

fn mean_abs(a: &Image<f64>, b: &Image<f64>, region: Option<&Mask<f64>>) -> f64 {
    let c = a.channels();
    let (mut sum, mut n) = (0.0, 0.0);
    for (i, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if region.map_or(true, |m| m.as_slice()[i / c] > 0.5) {
            sum += (x - y).abs();
            n += 1.0;
        }
    }
    sum / n
}

#[test]
fn identity_transfer_returns_the_input() {
    let p = make_puppet::<f64>(&PuppetSpec {
        background: Background::Gradient,
        ..spec(128)
    })
    .unwrap();
    let r = transfer(&p.bundle, &p.bundle, &p.mesh, &p.mesh, &TransferConfig::default()).unwrap();
    assert!(mean_abs(&r.composite, &p.bundle.image, None) < 0.02);
    let garment = p.bundle.segmentation.mask_of::<f64>(&seg::GARMENT);
    assert!(iou(&r.garment, &garment, 0.5).unwrap() >= 0.98);
    assert_eq!(r.composite, fuse_composite(&r.coarse, &r.fusion_mask, &r.inpainted_background).unwrap());
}

#[test]
fn rigid_reposing_matches_the_rendered_target() {
    let pair = make_pair::<f64>(&spec(128), &Pose::default(), &articulated()).unwrap();
    let r = transfer(
        &pair.source.bundle,
        &pair.target.bundle,
        &pair.source.mesh,
        &pair.target.mesh,
        &TransferConfig::default(),
    )
    .unwrap();
    assert!(mean_abs(&r.composite, &pair.gt_composite, None) < 0.05);
    let garment = pair.target.bundle.segmentation.mask_of::<f64>(&seg::GARMENT);
    assert!(iou(&r.garment, &garment, 0.5).unwrap() > 0.9);
}

#[test]
fn vertex_flow_alone_loses_the_loose_skirt() {
    let loose = PuppetSpec {
        garment: Garment::LooseSkirt,
        ..spec(128)
    };
    let b = Pose {
        skirt_phase: 1.3,
        ..articulated()
    };
    let pair = make_pair::<f64>(&loose, &Pose::default(), &b).unwrap();
    let truth = pair.target.bundle.segmentation.mask_of::<f64>(&seg::LOOSE);
    let skirt_iou = |mode| {
        let cfg = TransferConfig {
            mode,
            ..Default::default()
        };
        let r = transfer(&pair.source.bundle, &pair.target.bundle, &pair.source.mesh, &pair.target.mesh, &cfg).unwrap();
        let skirt = warp_label_mask(&pair.source.bundle.segmentation, &seg::LOOSE, &r.wflow).unwrap();
        iou(&skirt, &truth, 0.5).unwrap()
    };
    let full = skirt_iou(FlowMode::Wflow);
    let vertex = skirt_iou(FlowMode::VertexOnly);
    assert!(full - vertex >= 0.15, "wflow {full} vs vertex-only {vertex}");
}

#[test]
fn pixels_outside_the_edit_region_are_untouched() {
    let s = PuppetSpec {
        background: Background::Textured,
        ..spec(128)
    };
    let pair = make_pair::<f64>(&s, &Pose::default(), &articulated()).unwrap();
    let cfg = TransferConfig::default();
    let r = transfer(&pair.source.bundle, &pair.target.bundle, &pair.source.mesh, &pair.target.mesh, &cfg).unwrap();
    let hole = pair.target.bundle.foreground.dilate(cfg.dilation);
    let (w, h) = hole.dims();
    for y in 0..h {
        for x in 0..w {
            if hole.get(x, y) < 0.5 && r.fusion_mask.get(x, y) == 0.0 {
                assert_eq!(r.composite.pixel(x, y), pair.target.bundle.image.pixel(x, y));
            }
        }
    }
}

#[test]
fn refinement_keeps_the_composite_consistent() {
    let pair = make_pair::<f64>(&spec(96), &Pose::default(), &Pose::default().translated(2.0, 1.0)).unwrap();
    let cfg = TransferConfig {
        refine: Some(CycleConfig { k: 4, ..Default::default() }),
        ..Default::default()
    };
    let r = transfer(&pair.source.bundle, &pair.target.bundle, &pair.source.mesh, &pair.target.mesh, &cfg).unwrap();
    let state = r.refinement.as_ref().unwrap();
    assert_eq!(state.loss_trace.len(), 4);
    assert_eq!(r.composite, fuse_composite(&r.coarse, &r.fusion_mask, &r.inpainted_background).unwrap());
    assert!(mean_abs(&r.composite, &pair.gt_composite, None) < 0.05);
}

#[test]
fn transfer_checks_its_inputs() {
    let p = make_puppet::<f64>(&spec(96)).unwrap();
    let mut no_garment = p.bundle.clone();
    no_garment.segmentation = PartMap::zeros(96, 96);
    assert!(matches!(
        transfer(&no_garment, &p.bundle, &p.mesh, &p.mesh, &TransferConfig::default()),
        Err(Error::EmptyGarment)
    ));
    let mut other = p.mesh.clone();
    other.faces.pop();
    other.part_labels.pop();
    assert!(matches!(
        transfer(&p.bundle, &p.bundle, &p.mesh, &other, &TransferConfig::default()),
        Err(Error::Topology(_))
    ));
}

#[test]
fn ten_puppet_frames_give_forty_five_candidates() {
    let frames: Vec<_> = (0..10)
        .map(|i| {
            let pose = Pose::default().translated(if i % 3 == 0 { 70.0 } else { 0.0 }, 0.0);
            make_puppet::<f64>(&PuppetSpec { pose, ..spec(96) }).unwrap().bundle
        })
        .collect();
    let s = sample_pairs(&frames, 10).unwrap();
    assert_eq!(s.candidates, 45);
    for &(a, b) in &s.pairs {
        assert!(frames[a].visible_joints() >= frames[b].visible_joints());
    }
    assert!(s.pairs.len() > 45);
    assert!(sample_pairs(&frames[..1], 1).is_err());
}

proptest! {
    #[test]
    fn fusion_stays_between_its_inputs(a in proptest::collection::vec(0.0f64..1.0, 12), b in proptest::collection::vec(0.0f64..1.0, 12), m in proptest::collection::vec(0.0f64..1.0, 4)) {
        let coarse = Image::from_vec(2, 2, 3, a).unwrap();
        let bg = Image::from_vec(2, 2, 3, b).unwrap();
        let mask = Mask::from_fn(2, 2, |x, y| m[y * 2 + x]);
        let out = fuse_composite(&coarse, &mask, &bg).unwrap();
        for i in 0..12 {
            let (lo, hi) = (coarse.as_slice()[i].min(bg.as_slice()[i]), coarse.as_slice()[i].max(bg.as_slice()[i]));
            prop_assert!(out.as_slice()[i] >= lo - 1e-15 && out.as_slice()[i] <= hi + 1e-15);
        }
    }
}
