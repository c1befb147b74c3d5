//! Triangle-mesh rasterization and mesh-induced (vertex) flow.
//!
//! Pixel `(x, y)` is sampled at the point `(x, y)` in mesh coordinates, the
//! same lattice the warping code samples on.

use crate::error::{check_dims, Error, Result};
use crate::flowfield::FlowField;
use crate::raster::{Mask, PartMap};
use crate::scalar::Real;

/// Faces with `|signed area|` at or below this are skipped by the rasterizer.
pub const DEGENERATE_AREA: f64 = 1e-9;

/// Slack for the inside test, so pixels on shared edges are claimed by
/// both neighbours and the overlap rule picks one.
const INSIDE_EPS: f64 = 1e-9;

/// Fixed-topology triangle mesh in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D<T> {
    pub vertices: Vec<[T; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Vec<u32>,
}

impl<T: Real> Mesh2D<T> {
    pub fn new(vertices: Vec<[T; 2]>, faces: Vec<[usize; 3]>, part_labels: Vec<u32>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            part_labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            part_labels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.part_labels.len() != self.faces.len() {
            return Err(Error::Topology(format!(
                "{} part labels for {} faces",
                self.part_labels.len(),
                self.faces.len()
            )));
        }
        let n = self.vertices.len();
        if let Some((f, face)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, face)| face.iter().any(|&i| i >= n))
        {
            return Err(Error::Topology(format!(
                "face {f} {face:?} indexes past {n} vertices"
            )));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Twice the signed area of face `f`.
    pub fn signed_area2(&self, f: usize) -> T {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }

    pub fn is_degenerate(&self, f: usize) -> bool {
        self.signed_area2(f).abs() * T::lit(0.5) <= T::lit(DEGENERATE_AREA)
    }

    /// Same faces and labels, so barycentric coordinates transfer between the two.
    pub fn topology_compatible(&self, other: &Mesh2D<T>) -> bool {
        self.faces == other.faces
            && self.part_labels == other.part_labels
            && self.vertices.len() == other.vertices.len()
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn([T; 2]) -> [T; 2]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            part_labels: self.part_labels.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> Mesh2D<U> {
        Mesh2D {
            vertices: self
                .vertices
                .iter()
                .map(|v| v.map(|c| U::lit(c.to_f64_lossy())))
                .collect(),
            faces: self.faces.clone(),
            part_labels: self.part_labels.clone(),
        }
    }

    /// Barycentric interpolation of the vertices of face `f`.
    #[inline]
    pub fn interpolate(&self, f: usize, b: [T; 3]) -> [T; 2] {
        let [i, j, k] = self.faces[f];
        let (vi, vj, vk) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        [
            b[0] * vi[0] + b[1] * vj[0] + b[2] * vk[0],
            b[0] * vi[1] + b[1] * vj[1] + b[2] * vk[1],
        ]
    }
}

/// Face hit at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub face: usize,
    pub bary: [T; 3],
}

/// Per-pixel face index and barycentric coordinates of the pixel point.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap<T> {
    width: usize,
    height: usize,
    face_count: usize,
    hits: Vec<Option<Hit<T>>>,
    /// Faces skipped because their area was below [`DEGENERATE_AREA`].
    pub degenerate_faces: usize,
}

impl<T: Real> CorrespondenceMap<T> {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn face_count(&self) -> usize {
        self.face_count
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Hit<T>> {
        self.hits[y * self.width + x]
    }

    pub fn covered_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }

    pub fn coverage(&self) -> Mask<T> {
        let bits: Vec<bool> = self.hits.iter().map(Option::is_some).collect();
        Mask::from_bools(self.width, self.height, &bits)
    }
}

/// Rasterizes `mesh` onto a `width x height` grid.
///
/// Where faces overlap, the face with the larger part label wins and equal
/// labels fall back to the smaller face index.
pub fn rasterize<T: Real>(mesh: &Mesh2D<T>, width: usize, height: usize) -> Result<CorrespondenceMap<T>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "canvas must be non-empty, got {width}x{height}"
        )));
    }
    mesh.validate()?;
    let mut hits: Vec<Option<Hit<T>>> = vec![None; width * height];
    let mut degenerate = 0;
    let eps = T::lit(INSIDE_EPS);
    let (wmax, hmax) = (T::lit((width - 1) as f64), T::lit((height - 1) as f64));

    for (f, face) in mesh.faces.iter().enumerate() {
        if mesh.is_degenerate(f) {
            degenerate += 1;
            continue;
        }
        let [a, b, c] = face.map(|i| mesh.vertices[i]);
        let d = mesh.signed_area2(f);
        let lo_x = a[0].min(b[0]).min(c[0]).ceil().max(T::zero());
        let hi_x = a[0].max(b[0]).max(c[0]).floor().min(wmax);
        let lo_y = a[1].min(b[1]).min(c[1]).ceil().max(T::zero());
        let hi_y = a[1].max(b[1]).max(c[1]).floor().min(hmax);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let (x0, x1) = (lo_x.to_usize().unwrap(), hi_x.to_usize().unwrap());
        let (y0, y1) = (lo_y.to_usize().unwrap(), hi_y.to_usize().unwrap());
        let label = mesh.part_labels[f];
        for y in y0..=y1 {
            let py = T::lit(y as f64);
            for x in x0..=x1 {
                let px = T::lit(x as f64);
                let b1 = ((px - a[0]) * (c[1] - a[1]) - (py - a[1]) * (c[0] - a[0])) / d;
                let b2 = ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) / d;
                let b0 = T::one() - b1 - b2;
                if b0 < -eps || b1 < -eps || b2 < -eps {
                    continue;
                }
                let slot = &mut hits[y * width + x];
                if let Some(prev) = slot {
                    // faces arrive in index order, so equal labels keep the earlier face
                    if mesh.part_labels[prev.face] >= label {
                        continue;
                    }
                }
                let bary = [b0, b1, b2].map(|v| v.max(T::zero()));
                let s = bary[0] + bary[1] + bary[2];
                *slot = Some(Hit {
                    face: f,
                    bary: bary.map(|v| v / s),
                });
            }
        }
    }
    if degenerate > 0 {
        log::debug!("rasterize: skipped {degenerate} degenerate faces");
    }
    Ok(CorrespondenceMap {
        width,
        height,
        face_count: mesh.faces.len(),
        hits,
        degenerate_faces: degenerate,
    })
}

/// Integer part raster of a correspondence map.
pub fn render_part_map<T: Real>(corr: &CorrespondenceMap<T>, mesh: &Mesh2D<T>) -> Result<PartMap> {
    if corr.face_count() != mesh.faces.len() {
        return Err(Error::Topology(format!(
            "correspondence map built from {} faces, mesh has {}",
            corr.face_count(),
            mesh.faces.len()
        )));
    }
    let mut out = PartMap::zeros(corr.width(), corr.height());
    for y in 0..corr.height() {
        for x in 0..corr.width() {
            if let Some(hit) = corr.get(x, y) {
                out.set(x, y, mesh.part_labels[hit.face]);
            }
        }
    }
    Ok(out)
}

/// Backward flow induced by a shared-topology mesh posed twice.
///
/// Every pixel covered in `target_corr` maps to the source point with the
/// same face and barycentric coordinates. The returned mask is the
/// coverage of `target_corr`.
pub fn vertex_flow<T: Real>(
    source: &Mesh2D<T>,
    target: &Mesh2D<T>,
    target_corr: &CorrespondenceMap<T>,
) -> Result<(FlowField<T>, Mask<T>)> {
    if !source.topology_compatible(target) {
        return Err(Error::Topology(
            "source and target meshes differ in faces, labels or vertex count".into(),
        ));
    }
    if target_corr.face_count() != target.faces.len() {
        return Err(Error::Topology(format!(
            "correspondence map built from {} faces, mesh has {}",
            target_corr.face_count(),
            target.faces.len()
        )));
    }
    let (w, h) = target_corr.dims();
    let flow = FlowField::from_fn(w, h, |x, y| {
        let hit = target_corr.get(x, y)?;
        let q = source.interpolate(hit.face, hit.bary);
        Some((q[0] - T::lit(x as f64), q[1] - T::lit(y as f64)))
    });
    let mask = target_corr.coverage();
    check_dims("vertex flow mask", flow.dims(), mask.dims())?;
    Ok((flow, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(v: [[f64; 2]; 3], part: u32) -> Mesh2D<f64> {
        Mesh2D::new(v.to_vec(), vec![[0, 1, 2]], vec![part]).unwrap()
    }

    #[test]
    fn right_triangle_barycentrics() {
        let m = tri([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], 1);
        let corr = rasterize(&m, 4, 4).unwrap();
        let hit = corr.get(1, 1).unwrap();
        assert_eq!(hit.face, 0);
        let expect = [0.5, 0.25, 0.25];
        for k in 0..3 {
            assert!((hit.bary[k] - expect[k]).abs() < 1e-12);
        }
        assert!(corr.get(3, 3).is_none());
    }

    #[test]
    fn empty_mesh_covers_nothing() {
        let corr = rasterize(&Mesh2D::<f64>::empty(), 5, 3).unwrap();
        assert_eq!(corr.covered_count(), 0);
        let parts = render_part_map(&corr, &Mesh2D::empty()).unwrap();
        assert!(parts.as_slice().iter().all(|&p| p == 0));
    }

    #[test]
    fn vertex_on_pixel_point_has_unit_weight() {
        let m = tri([[2.0, 1.0], [6.5, 2.5], [3.0, 5.5]], 1);
        let hit = rasterize(&m, 8, 8).unwrap().get(2, 1).unwrap();
        assert!((hit.bary[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_faces_are_counted_and_skipped() {
        let m = Mesh2D::new(
            vec![[0.0, 0.0], [4.0, 0.0], [8.0, 0.0], [0.0, 4.0]],
            vec![[0, 1, 2], [0, 1, 3]],
            vec![1, 1],
        )
        .unwrap();
        let corr = rasterize(&m, 6, 6).unwrap();
        assert_eq!(corr.degenerate_faces, 1);
        assert!(corr.covered_count() > 0);
    }

    #[test]
    fn overlap_prefers_larger_part() {
        let m = Mesh2D::new(
            vec![[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]],
            vec![[0, 1, 2], [1, 3, 2], [0, 1, 3]],
            vec![2, 1, 1],
        )
        .unwrap();
        let corr = rasterize(&m, 7, 7).unwrap();
        let parts = render_part_map(&corr, &m).unwrap();
        // (4,1) lies in faces 0 (part 2) and 2 (part 1)
        assert_eq!(parts.get(4, 1), 2);
        // (5,4) lies in faces 1 and 2, both part 1: smaller index wins
        assert_eq!(corr.get(5, 4).unwrap().face, 1);
    }

    #[test]
    fn constant_labels_render_uniformly() {
        let m = tri([[0.5, 0.5], [9.0, 1.0], [4.0, 8.0]], 3);
        let corr = rasterize(&m, 10, 10).unwrap();
        let parts = render_part_map(&corr, &m).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let p = parts.get(x, y);
                assert_eq!(p, if corr.get(x, y).is_some() { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn part_map_rejects_foreign_mesh() {
        let m = tri([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], 1);
        let corr = rasterize(&m, 4, 4).unwrap();
        assert!(matches!(render_part_map(&corr, &Mesh2D::empty()), Err(Error::Topology(_))));
    }

    #[test]
    fn vertex_flow_of_identity_and_translation() {
        let m = tri([[1.0, 1.0], [9.0, 2.0], [3.0, 9.0]], 1);
        let corr = rasterize(&m, 12, 12).unwrap();
        let (f, mv) = vertex_flow(&m, &m, &corr).unwrap();
        assert_eq!(mv, corr.coverage());
        for y in 0..12 {
            for x in 0..12 {
                if let Some((u, v)) = f.lookup(x, y) {
                    assert!(u.abs() < 1e-12 && v.abs() < 1e-12);
                }
            }
        }
        let shifted = m.map_vertices(|[x, y]| [x + 5.0, y]);
        let (f, _) = vertex_flow(&shifted, &m, &corr).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                if let Some((u, v)) = f.lookup(x, y) {
                    assert!((u - 5.0).abs() < 1e-12 && v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vertex_flow_requires_shared_topology() {
        let a = tri([[1.0, 1.0], [9.0, 2.0], [3.0, 9.0]], 1);
        let b = tri([[1.0, 1.0], [9.0, 2.0], [3.0, 9.0]], 2);
        let corr = rasterize(&b, 12, 12).unwrap();
        assert!(matches!(vertex_flow(&a, &b, &corr), Err(Error::Topology(_))));
    }

    #[test]
    fn invalid_index_rejected() {
        assert!(Mesh2D::<f64>::new(vec![[0.0, 0.0]], vec![[0, 1, 2]], vec![1]).is_err());
    }
}
