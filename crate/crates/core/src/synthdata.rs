//! Deterministic articulated puppets with exact meshes, labels and
//! ground-truth correspondences.
//!
//! A puppet is a 2D figure (torso, head, two two-segment arms, two
//! two-segment legs) skinned per bone with a linear blend across elbows and
//! knees. Texture lives in the rest pose and is carried by the mesh, so two
//! renders of the same puppet are related exactly by the mesh
//! correspondence. In loose-skirt mode a skirt is added to an extended mesh
//! that the body mesh does not contain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::FlowField;
use crate::geometry::{rasterize, render_part_map, vertex_flow, Mesh2D};
use crate::labels::{part, segment_of};
use crate::pipeline::{Joint, PersonBundle};
use crate::raster::{Image, PartMap};
use crate::scalar::Real;

/// Canvas size the bone lengths are expressed at.
pub const NOMINAL_CANVAS: f64 = 128.0;
pub const MIN_CANVAS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Garment {
    Tight,
    LooseSkirt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Texture {
    Checker { period: f64 },
    Stripes { period: f64 },
    Noise { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Flat,
    Gradient,
    Textured,
}

/// Bone lengths in pixels at a 128px canvas; scaled with the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneLengths {
    pub torso_width: f64,
    pub torso_height: f64,
    pub head_radius: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub arm_width: f64,
    pub thigh: f64,
    pub shin: f64,
    pub leg_width: f64,
}

impl Default for BoneLengths {
    fn default() -> Self {
        Self {
            torso_width: 26.0,
            torso_height: 36.0,
            head_radius: 9.0,
            upper_arm: 20.0,
            forearm: 18.0,
            arm_width: 9.0,
            thigh: 22.0,
            shin: 22.0,
            leg_width: 11.0,
        }
    }
}

impl BoneLengths {
    fn scaled(&self, s: f64) -> Self {
        Self {
            torso_width: self.torso_width * s,
            torso_height: self.torso_height * s,
            head_radius: self.head_radius * s,
            upper_arm: self.upper_arm * s,
            forearm: self.forearm * s,
            arm_width: self.arm_width * s,
            thigh: self.thigh * s,
            shin: self.shin * s,
            leg_width: self.leg_width * s,
        }
    }

    fn as_array(&self) -> [f64; 9] {
        [
            self.torso_width,
            self.torso_height,
            self.head_radius,
            self.upper_arm,
            self.forearm,
            self.arm_width,
            self.thigh,
            self.shin,
            self.leg_width,
        ]
    }
}

/// Joint angles in radians. Zero everywhere is the T-pose; positive limb
/// angles swing arms down and legs outward, mirrored left to right.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pose {
    /// Offset of the figure from the canvas-centered layout, in pixels.
    pub translation: [f64; 2],
    /// Whole-body rotation about the pelvis.
    pub rotation: f64,
    pub neck: f64,
    pub left_shoulder: f64,
    pub left_elbow: f64,
    pub right_shoulder: f64,
    pub right_elbow: f64,
    pub left_hip: f64,
    pub left_knee: f64,
    pub right_hip: f64,
    pub right_knee: f64,
    /// Phase of the skirt sway.
    pub skirt_phase: f64,
}

impl Pose {
    pub fn t_pose() -> Self {
        Self::default()
    }

    pub fn translated(mut self, dx: f64, dy: f64) -> Self {
        self.translation[0] += dx;
        self.translation[1] += dy;
        self
    }

    fn angles_mut(&mut self) -> [(&'static str, &mut f64, f64); 9] {
        [
            ("neck", &mut self.neck, 0.6),
            ("left_shoulder", &mut self.left_shoulder, 1.5),
            ("left_elbow", &mut self.left_elbow, 2.2),
            ("right_shoulder", &mut self.right_shoulder, 1.5),
            ("right_elbow", &mut self.right_elbow, 2.2),
            ("left_hip", &mut self.left_hip, 1.0),
            ("left_knee", &mut self.left_knee, 2.0),
            ("right_hip", &mut self.right_hip, 1.0),
            ("right_knee", &mut self.right_knee, 2.0),
        ]
    }

    fn is_finite(&self) -> bool {
        let mut p = *self;
        p.angles_mut().iter().all(|(_, a, _)| a.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.skirt_phase.is_finite()
    }

    /// Clamps every joint to its limit, returning one warning per clamp.
    fn clamped(mut self) -> (Self, Vec<String>) {
        let mut warnings = Vec::new();
        for (name, angle, limit) in self.angles_mut() {
            if angle.abs() > limit {
                warnings.push(format!("{name} angle {angle:.3} clamped to ±{limit}"));
                *angle = angle.clamp(-limit, limit);
            }
        }
        (self, warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuppetSpec {
    pub seed: u64,
    pub canvas: (usize, usize),
    pub bones: BoneLengths,
    pub pose: Pose,
    pub garment: Garment,
    pub texture: Texture,
    pub background: Background,
}

impl Default for PuppetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            canvas: (128, 128),
            bones: BoneLengths::default(),
            pose: Pose::default(),
            garment: Garment::Tight,
            texture: Texture::Noise { period: 6.0 },
            background: Background::Flat,
        }
    }
}

impl PuppetSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.canvas;
        if w < MIN_CANVAS || h < MIN_CANVAS {
            return Err(Error::InvalidParameter(format!(
                "canvas {w}x{h} is smaller than {MIN_CANVAS}x{MIN_CANVAS}"
            )));
        }
        if self.bones.as_array().iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter("bone lengths must be positive".into()));
        }
        if !self.pose.is_finite() {
            return Err(Error::InvalidParameter("pose contains non-finite values".into()));
        }
        let period = match self.texture {
            Texture::Checker { period } | Texture::Stripes { period } | Texture::Noise { period } => period,
        };
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidParameter("texture period must be positive".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.canvas.0.min(self.canvas.1) as f64 / NOMINAL_CANVAS
    }
}

/// Mesh with extra garment faces appended after the body faces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMesh2D<T> {
    pub mesh: Mesh2D<T>,
    pub body_vertices: usize,
    pub body_faces: usize,
}

impl<T: Real> ExtendedMesh2D<T> {
    /// The body-only prefix of the mesh.
    pub fn body(&self) -> Mesh2D<T> {
        Mesh2D {
            vertices: self.mesh.vertices[..self.body_vertices].to_vec(),
            faces: self.mesh.faces[..self.body_faces].to_vec(),
            part_labels: self.mesh.part_labels[..self.body_faces].to_vec(),
        }
    }
}

/// One rendered puppet frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Puppet<T> {
    pub bundle: PersonBundle<T>,
    /// Body mesh: what a body-model fit would recover.
    pub mesh: Mesh2D<T>,
    /// Body mesh plus loose garment faces.
    pub extended: ExtendedMesh2D<T>,
    /// Joint clamps applied while posing.
    pub warnings: Vec<String>,
}

/// Two frames of the same puppet with their exact correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair<T> {
    pub source: Puppet<T>,
    pub target: Puppet<T>,
    /// Target-indexed flow into the source, valid on the target figure.
    pub gt_flow: FlowField<T>,
    /// Pose-transfer ground truth: the target frame itself.
    pub gt_composite: Image<T>,
}

pub fn make_puppet<T: Real>(spec: &PuppetSpec) -> Result<Puppet<T>> {
    spec.validate()?;
    let (pose, warnings) = spec.pose.clamped();
    for w in &warnings {
        log::warn!("make_puppet: {w}");
    }
    let rig = Rig::new(spec);
    let posed = rig.pose(&pose);
    render(spec, &rig, &pose, posed, warnings)
}

/// Renders `spec` in `pose_a` (source) and `pose_b` (target).
pub fn make_pair<T: Real>(spec: &PuppetSpec, pose_a: &Pose, pose_b: &Pose) -> Result<FramePair<T>> {
    let source = make_puppet::<T>(&PuppetSpec {
        pose: *pose_a,
        ..spec.clone()
    })?;
    let target = make_puppet::<T>(&PuppetSpec {
        pose: *pose_b,
        ..spec.clone()
    })?;
    let (w, h) = spec.canvas;
    let corr = rasterize(&target.extended.mesh, w, h)?;
    let (gt_flow, _) = vertex_flow(&source.extended.mesh, &target.extended.mesh, &corr)?;
    let gt_composite = target.bundle.image.clone();
    Ok(FramePair {
        source,
        target,
        gt_flow,
        gt_composite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rigid {
    c: f64,
    s: f64,
    t: [f64; 2],
}

impl Rigid {
    const IDENTITY: Rigid = Rigid {
        c: 1.0,
        s: 0.0,
        t: [0.0, 0.0],
    };

    fn rotation_about(center: [f64; 2], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            c,
            s,
            t: [
                center[0] - (c * center[0] - s * center[1]),
                center[1] - (s * center[0] + c * center[1]),
            ],
        }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.c * p[0] - self.s * p[1] + self.t[0],
            self.s * p[0] + self.c * p[1] + self.t[1],
        ]
    }

    /// `self` after `inner`.
    fn then(&self, inner: &Rigid) -> Rigid {
        Rigid {
            c: self.c * inner.c - self.s * inner.s,
            s: self.s * inner.c + self.c * inner.s,
            t: self.apply(inner.t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bone {
    Root,
    Head,
    LeftUpperArm,
    LeftForearm,
    RightUpperArm,
    RightForearm,
    LeftThigh,
    LeftShin,
    RightThigh,
    RightShin,
    Skirt,
}

const BONES: usize = 11;

/// Rest-pose geometry and skinning of a puppet, relative to the pelvis.
struct Rig {
    dims: BoneLengths,
    root: [f64; 2],
    rest: Vec<[f64; 2]>,
    /// Up to two `(bone, weight)` influences per vertex.
    skin: Vec<[(Bone, f64); 2]>,
    /// Grid position of skirt vertices as `(row fraction, column fraction)`.
    skirt_uv: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
    parts: Vec<u32>,
    body_vertices: usize,
    body_faces: usize,
    joints: Joints,
    sway_phase: f64,
    sway_amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Joints {
    neck: [f64; 2],
    head: [f64; 2],
    shoulder: [[f64; 2]; 2],
    elbow: [[f64; 2]; 2],
    wrist: [[f64; 2]; 2],
    hip: [[f64; 2]; 2],
    knee: [[f64; 2]; 2],
    ankle: [[f64; 2]; 2],
}

impl Rig {
    fn new(spec: &PuppetSpec) -> Self {
        let s = spec.scale();
        let d = spec.bones.scaled(s);
        let (w, h) = spec.canvas;
        let head_center_y = -d.torso_height - 0.85 * d.head_radius;
        let top = head_center_y - d.head_radius;
        let bottom = d.thigh + d.shin;
        let root = [
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0 - (bottom - top)) / 2.0 - top,
        ];

        let mut rig = Rig {
            dims: d,
            root,
            rest: Vec::new(),
            skin: Vec::new(),
            skirt_uv: Vec::new(),
            faces: Vec::new(),
            parts: Vec::new(),
            body_vertices: 0,
            body_faces: 0,
            joints: Joints {
                neck: [0.0, -d.torso_height],
                head: [0.0, head_center_y],
                shoulder: [[0.0; 2]; 2],
                elbow: [[0.0; 2]; 2],
                wrist: [[0.0; 2]; 2],
                hip: [[0.0; 2]; 2],
                knee: [[0.0; 2]; 2],
                ankle: [[0.0; 2]; 2],
            },
            sway_phase: (splitmix(spec.seed ^ 0x5eed_5ca1) % 6283) as f64 / 1000.0,
            sway_amplitude: 4.0 * s,
        };

        // torso: 5 x 7 grid
        let (hw, th) = (d.torso_width / 2.0, d.torso_height);
        rig.grid(5, 7, |c, r| [-hw + 2.0 * hw * c, -th + th * r], |_, _| [(Bone::Root, 1.0), (Bone::Root, 0.0)], |_, _| part::TORSO);

        rig.head(head_center_y);

        for side in 0..2 {
            rig.arm(side);
        }
        for side in 0..2 {
            rig.leg(side);
        }
        rig.body_vertices = rig.rest.len();
        rig.body_faces = rig.faces.len();
        if spec.garment == Garment::LooseSkirt {
            rig.skirt();
        }
        rig
    }

    /// Adds a `cols x rows` vertex grid. `at(u, v)` gives the rest position
    /// for fractions `u` across and `v` along; faces are labeled by their
    /// centroid fractions.
    fn grid(
        &mut self,
        cols: usize,
        rows: usize,
        at: impl Fn(f64, f64) -> [f64; 2],
        skin: impl Fn(f64, f64) -> [(Bone, f64); 2],
        label: impl Fn(f64, f64) -> u32,
    ) {
        let base = self.rest.len();
        for r in 0..rows {
            for c in 0..cols {
                let (u, v) = (c as f64 / (cols - 1) as f64, r as f64 / (rows - 1) as f64);
                self.rest.push(at(u, v));
                self.skin.push(skin(u, v));
                self.skirt_uv.push([v, u]);
            }
        }
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let a = base + r * cols + c;
                let (b, cc, dd) = (a + 1, a + cols, a + cols + 1);
                let u = (c as f64 + 0.5) / (cols - 1) as f64;
                let v = (r as f64 + 0.5) / (rows - 1) as f64;
                let l = label(u, v);
                self.faces.push([a, b, dd]);
                self.parts.push(l);
                self.faces.push([a, dd, cc]);
                self.parts.push(l);
            }
        }
    }

    fn head(&mut self, cy: f64) {
        let r = self.dims.head_radius;
        let base = self.rest.len();
        let spokes = 12;
        self.rest.push([0.0, cy]);
        for ring in 1..=2 {
            for k in 0..spokes {
                let a = k as f64 * std::f64::consts::TAU / spokes as f64;
                let rad = r * ring as f64 / 2.0;
                self.rest.push([rad * a.cos(), cy + rad * a.sin()]);
            }
        }
        for _ in 0..1 + 2 * spokes {
            self.skin.push([(Bone::Head, 1.0), (Bone::Head, 0.0)]);
            self.skirt_uv.push([0.0, 0.0]);
        }
        let ring = |ring: usize, k: usize| base + 1 + (ring - 1) * spokes + k % spokes;
        let push = |rig: &mut Rig, f: [usize; 3]| {
            let cyf = f.iter().map(|&i| rig.rest[i][1]).sum::<f64>() / 3.0;
            rig.faces.push(f);
            rig.parts.push(if cyf < cy - 0.2 * r { part::HAIR } else { part::FACE });
        };
        for k in 0..spokes {
            push(self, [base, ring(1, k), ring(1, k + 1)]);
        }
        for k in 0..spokes {
            push(self, [ring(1, k), ring(2, k), ring(2, k + 1)]);
            push(self, [ring(1, k), ring(2, k + 1), ring(1, k + 1)]);
        }
    }

    fn arm(&mut self, side: usize) {
        let d = self.dims;
        let dir = if side == 0 { -1.0 } else { 1.0 };
        let shoulder = [dir * d.torso_width / 2.0, -d.torso_height + d.arm_width / 2.0];
        let (ua, fa, aw) = (d.upper_arm, d.forearm, d.arm_width);
        let t0 = -aw / 2.0;
        let len = ua + fa - t0;
        let blend = aw / 2.0;
        let (upper, lower) = if side == 0 {
            (Bone::LeftUpperArm, Bone::LeftForearm)
        } else {
            (Bone::RightUpperArm, Bone::RightForearm)
        };
        let labels = if side == 0 { part::LEFT_ARM } else { part::RIGHT_ARM };
        self.joints.shoulder[side] = shoulder;
        self.joints.elbow[side] = [shoulder[0] + dir * ua, shoulder[1]];
        self.joints.wrist[side] = [shoulder[0] + dir * (ua + fa), shoulder[1]];
        self.grid(
            3,
            10,
            |u, v| [shoulder[0] + dir * (t0 + v * len), shoulder[1] - aw / 2.0 + aw * u],
            |_, v| {
                let t = t0 + v * len;
                let wl = ((t - (ua - blend)) / (2.0 * blend)).clamp(0.0, 1.0);
                [(upper, 1.0 - wl), (lower, wl)]
            },
            |_, v| {
                let t = t0 + v * len;
                if t < ua {
                    labels[0]
                } else if t < ua + 0.75 * fa {
                    labels[1]
                } else {
                    labels[2]
                }
            },
        );
    }

    fn leg(&mut self, side: usize) {
        let d = self.dims;
        let dir = if side == 0 { -1.0 } else { 1.0 };
        let hip = [dir * (d.torso_width / 2.0 - d.leg_width / 2.0 - 0.5), 0.0];
        let (th, sh, lw) = (d.thigh, d.shin, d.leg_width);
        let t0 = -lw / 2.0;
        let len = th + sh - t0;
        let blend = lw / 2.0;
        let (upper, lower, labels) = if side == 0 {
            (Bone::LeftThigh, Bone::LeftShin, [part::LEFT_THIGH, part::LEFT_SHIN])
        } else {
            (Bone::RightThigh, Bone::RightShin, [part::RIGHT_THIGH, part::RIGHT_SHIN])
        };
        self.joints.hip[side] = hip;
        self.joints.knee[side] = [hip[0], hip[1] + th];
        self.joints.ankle[side] = [hip[0], hip[1] + th + sh];
        self.grid(
            4,
            10,
            |u, v| [hip[0] - lw / 2.0 + lw * u, hip[1] + t0 + v * len],
            |_, v| {
                let t = t0 + v * len;
                let wl = ((t - (th - blend)) / (2.0 * blend)).clamp(0.0, 1.0);
                [(upper, 1.0 - wl), (lower, wl)]
            },
            |_, v| if t0 + v * len < th { labels[0] } else { labels[1] },
        );
    }

    fn skirt(&mut self) {
        let d = self.dims;
        let top = -0.1 * d.torso_height;
        let length = 1.25 * d.thigh;
        let top_half = d.torso_width / 2.0 + 1.0;
        let hem_half = 1.3 * d.torso_width;
        self.grid(
            7,
            5,
            |u, v| {
                let half = top_half + (hem_half - top_half) * v;
                [-half + 2.0 * half * u, top + length * v]
            },
            |_, _| [(Bone::Skirt, 1.0), (Bone::Skirt, 0.0)],
            |_, _| part::SKIRT,
        );
    }

    fn bone_transforms(&self, pose: &Pose) -> [Rigid; BONES] {
        let j = &self.joints;
        let root = Rigid {
            c: 1.0,
            s: 0.0,
            t: [self.root[0] + pose.translation[0], self.root[1] + pose.translation[1]],
        }
        .then(&Rigid::rotation_about([0.0, 0.0], pose.rotation));
        let mut out = [Rigid::IDENTITY; BONES];
        out[Bone::Root as usize] = root;
        out[Bone::Skirt as usize] = root;
        out[Bone::Head as usize] = root.then(&Rigid::rotation_about(j.neck, pose.neck));
        let lu = root.then(&Rigid::rotation_about(j.shoulder[0], -pose.left_shoulder));
        out[Bone::LeftUpperArm as usize] = lu;
        out[Bone::LeftForearm as usize] = lu.then(&Rigid::rotation_about(j.elbow[0], -pose.left_elbow));
        let ru = root.then(&Rigid::rotation_about(j.shoulder[1], pose.right_shoulder));
        out[Bone::RightUpperArm as usize] = ru;
        out[Bone::RightForearm as usize] = ru.then(&Rigid::rotation_about(j.elbow[1], pose.right_elbow));
        let lt = root.then(&Rigid::rotation_about(j.hip[0], pose.left_hip));
        out[Bone::LeftThigh as usize] = lt;
        out[Bone::LeftShin as usize] = lt.then(&Rigid::rotation_about(j.knee[0], pose.left_knee));
        let rt = root.then(&Rigid::rotation_about(j.hip[1], -pose.right_hip));
        out[Bone::RightThigh as usize] = rt;
        out[Bone::RightShin as usize] = rt.then(&Rigid::rotation_about(j.knee[1], -pose.right_knee));
        out
    }

    /// Posed vertex positions.
    fn pose(&self, pose: &Pose) -> Vec<[f64; 2]> {
        let tf = self.bone_transforms(pose);
        self.rest
            .iter()
            .zip(&self.skin)
            .zip(&self.skirt_uv)
            .map(|((&p, skin), uv)| {
                if skin[0].0 == Bone::Skirt {
                    // hem sways more than the waistband
                    let fall = uv[0] * uv[0];
                    let phase = pose.skirt_phase + self.sway_phase + 2.0 * uv[1];
                    let p = [
                        p[0] + self.sway_amplitude * fall * phase.sin(),
                        p[1] + 0.3 * self.sway_amplitude * fall * phase.cos(),
                    ];
                    return tf[Bone::Skirt as usize].apply(p);
                }
                let mut q = [0.0, 0.0];
                for &(bone, wgt) in skin {
                    if wgt == 0.0 {
                        continue;
                    }
                    let r = tf[bone as usize].apply(p);
                    q[0] += wgt * r[0];
                    q[1] += wgt * r[1];
                }
                q
            })
            .collect()
    }

    fn joints(&self, pose: &Pose) -> Vec<(&'static str, [f64; 2])> {
        let tf = self.bone_transforms(pose);
        let j = &self.joints;
        let at = |b: Bone, p: [f64; 2]| tf[b as usize].apply(p);
        vec![
            ("head", at(Bone::Head, j.head)),
            ("neck", at(Bone::Root, j.neck)),
            ("l_shoulder", at(Bone::Root, j.shoulder[0])),
            ("l_elbow", at(Bone::LeftUpperArm, j.elbow[0])),
            ("l_wrist", at(Bone::LeftForearm, j.wrist[0])),
            ("r_shoulder", at(Bone::Root, j.shoulder[1])),
            ("r_elbow", at(Bone::RightUpperArm, j.elbow[1])),
            ("r_wrist", at(Bone::RightForearm, j.wrist[1])),
            ("pelvis", at(Bone::Root, [0.0, 0.0])),
            ("l_hip", at(Bone::Root, j.hip[0])),
            ("l_knee", at(Bone::LeftThigh, j.knee[0])),
            ("l_ankle", at(Bone::LeftShin, j.ankle[0])),
            ("r_hip", at(Bone::Root, j.hip[1])),
            ("r_knee", at(Bone::RightThigh, j.knee[1])),
            ("r_ankle", at(Bone::RightShin, j.ankle[1])),
        ]
    }
}

fn render<T: Real>(
    spec: &PuppetSpec,
    rig: &Rig,
    pose: &Pose,
    posed: Vec<[f64; 2]>,
    warnings: Vec<String>,
) -> Result<Puppet<T>> {
    let (w, h) = spec.canvas;
    let ext = Mesh2D::new(posed, rig.faces.clone(), rig.parts.clone())?;
    let rest = Mesh2D::new(rig.rest.clone(), rig.faces.clone(), rig.parts.clone())?;
    let body = Mesh2D {
        vertices: ext.vertices[..rig.body_vertices].to_vec(),
        faces: ext.faces[..rig.body_faces].to_vec(),
        part_labels: ext.part_labels[..rig.body_faces].to_vec(),
    };
    let corr = rasterize(&ext, w, h)?;
    let ext_parts = render_part_map(&corr, &ext)?;
    let part_map = render_part_map(&rasterize(&body, w, h)?, &body)?;
    let segmentation = PartMap::from_vec(
        w,
        h,
        ext_parts.as_slice().iter().map(|&p| segment_of(p)).collect(),
    )?;
    let painter = Painter::new(spec);
    let mut image = Image::<T>::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let rgb = match corr.get(x, y) {
                Some(hit) => {
                    let u = rest.interpolate(hit.face, hit.bary);
                    painter.figure(rest.part_labels[hit.face], u)
                }
                None => painter.background(x, y, w, h),
            };
            for (c, v) in rgb.into_iter().enumerate() {
                image.set(x, y, c, T::lit(v));
            }
        }
    }
    let foreground = corr.coverage().cast::<T>();
    let skeleton = rig
        .joints(pose)
        .into_iter()
        .map(|(name, p)| Joint {
            name: name.to_string(),
            x: T::lit(p[0]),
            y: T::lit(p[1]),
            visible: p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64,
        })
        .collect();
    Ok(Puppet {
        bundle: PersonBundle {
            image,
            part_map,
            segmentation,
            skeleton,
            foreground,
        },
        mesh: body.cast(),
        extended: ExtendedMesh2D {
            mesh: ext.cast(),
            body_vertices: rig.body_vertices,
            body_faces: rig.body_faces,
        },
        warnings,
    })
}

/// Base colour per garment-level segment label.
fn base_color(segment: u32) -> [f64; 3] {
    use crate::labels::seg;
    match segment {
        seg::FACE => [0.86, 0.66, 0.55],
        seg::HAIR => [0.28, 0.18, 0.12],
        seg::HANDS => [0.80, 0.58, 0.48],
        seg::TOP => [0.22, 0.42, 0.78],
        seg::PANTS => [0.35, 0.33, 0.30],
        seg::SKIRT => [0.78, 0.22, 0.32],
        _ => [0.5, 0.5, 0.5],
    }
}

const TEXTURE_AMPLITUDE: f64 = 0.5;

struct Painter {
    seed: u64,
    texture: Texture,
    background: Background,
}

impl Painter {
    fn new(spec: &PuppetSpec) -> Self {
        Self {
            seed: spec.seed,
            texture: spec.texture,
            background: spec.background,
        }
    }

    /// Colour of the figure at rest-pose coordinate `u` on part `part`.
    fn figure(&self, part: u32, u: [f64; 2]) -> [f64; 3] {
        let base = base_color(segment_of(part));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let key = splitmix(self.seed ^ ((part as u64) << 8) ^ c as u64);
            let n = match self.texture {
                Texture::Noise { period } => {
                    0.7 * value_noise(u, period, key) + 0.3 * value_noise(u, period / 2.0, key ^ 0xa5a5)
                }
                Texture::Checker { period } => {
                    let phase = (key % 1000) as f64 / 1000.0 * period;
                    let v = (std::f64::consts::PI * (u[0] + phase) / period).sin()
                        * (std::f64::consts::PI * (u[1] + phase) / period).sin();
                    0.5 + 0.5 * (3.0 * v).tanh()
                }
                Texture::Stripes { period } => {
                    let phase = (key % 1000) as f64 / 1000.0 * std::f64::consts::TAU;
                    0.5 + 0.5 * (std::f64::consts::TAU * (u[0] + 0.5 * u[1]) / period + phase).sin()
                }
            };
            out[c] = (base[c] + TEXTURE_AMPLITUDE * (n - 0.5)).clamp(0.0, 1.0);
        }
        out
    }

    fn background(&self, x: usize, y: usize, w: usize, h: usize) -> [f64; 3] {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        match self.background {
            Background::Flat => [0.5, 0.5, 0.5],
            Background::Gradient => [0.3 + 0.4 * fx, 0.35 + 0.3 * fy, 0.6 - 0.2 * fx],
            Background::Textured => {
                let key = splitmix(self.seed ^ 0xb6);
                let n = value_noise([x as f64, y as f64], 9.0, key);
                [0.35 + 0.3 * n, 0.45 + 0.2 * fy, 0.55 - 0.3 * n]
            }
        }
    }
}

/// Smooth lattice value noise in `[0, 1]`.
fn value_noise(u: [f64; 2], period: f64, key: u64) -> f64 {
    let gx = u[0] / period;
    let gy = u[1] / period;
    let (ix, iy) = (gx.floor(), gy.floor());
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (fade(gx - ix), fade(gy - iy));
    let lattice = |i: f64, j: f64| {
        let h = splitmix(key ^ splitmix((i as i64 as u64) ^ ((j as i64 as u64) << 32)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    let top = lattice(ix, iy) * (1.0 - fx) + lattice(ix + 1.0, iy) * fx;
    let bottom = lattice(ix, iy + 1.0) * (1.0 - fx) + lattice(ix + 1.0, iy + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// splitmix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
