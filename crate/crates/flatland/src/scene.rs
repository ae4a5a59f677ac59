//! Scene description and ray queries.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::geometry::{Ray, Segment, Vec2};
use crate::material::{Bsdf, Lobe};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("segment {index}: {reason}")]
    Segment { index: usize, reason: String },
    #[error("camera: {0}")]
    Camera(String),
    #[error("scene has no emitter")]
    NoEmitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Surface {
    Diffuse {
        albedo: f64,
    },
    Glossy {
        albedo: f64,
        exponent: f64,
    },
    /// Black emitter radiating `radiance` from both sides.
    Emitter {
        radiance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub a: Vec2,
    pub b: Vec2,
    pub material: Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec2,
    /// Viewing direction in degrees, counterclockwise from +x.
    pub direction_deg: f64,
    pub fov_deg: f64,
    pub pixels: usize,
}

impl Camera {
    /// Angular extent `(start, width)` of a pixel, in radians.
    pub fn pixel_arc(&self, px: usize) -> (f64, f64) {
        let fov = self.fov_deg.to_radians();
        let width = fov / self.pixels as f64;
        (self.direction_deg.to_radians() - 0.5 * fov + px as f64 * width, width)
    }

    pub fn ray(&self, angle: f64) -> Ray {
        Ray {
            origin: self.position,
            dir: Vec2::from_angle(angle),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: String,
    pub camera: Camera,
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub segment: usize,
    pub point: Vec2,
}

#[derive(Debug, Clone)]
enum Kind {
    Reflector(Bsdf),
    Emitter(f64),
}

#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    segments: Vec<Segment>,
    kinds: Vec<Kind>,
    emitters: Vec<usize>,
    emitter_cdf: Vec<f64>,
    emitter_length: f64,
    bounds: (Vec2, Vec2),
}

impl Scene {
    pub fn from_spec(spec: SceneSpec) -> Result<Self, SceneError> {
        let cam = &spec.camera;
        if !cam.position.is_finite() || !cam.direction_deg.is_finite() {
            return Err(SceneError::Camera("position and direction must be finite".into()));
        }
        if !(cam.fov_deg > 0.0 && cam.fov_deg <= 360.0) {
            return Err(SceneError::Camera(format!(
                "fov must lie in (0, 360], got {}",
                cam.fov_deg
            )));
        }
        if cam.pixels == 0 {
            return Err(SceneError::Camera("pixel count must be positive".into()));
        }
        let mut segments = Vec::with_capacity(spec.segments.len());
        let mut kinds = Vec::with_capacity(spec.segments.len());
        let mut lobes: Vec<Lobe> = Vec::new();
        for (index, s) in spec.segments.iter().enumerate() {
            let bad = |reason: String| SceneError::Segment { index, reason };
            if !s.a.is_finite() || !s.b.is_finite() {
                return Err(bad("endpoints must be finite".into()));
            }
            let seg = Segment { a: s.a, b: s.b };
            if !(seg.length() > 0.0) {
                return Err(bad("endpoints coincide".into()));
            }
            let check_albedo = |albedo: f64| {
                if (0.0..1.0).contains(&albedo) {
                    Ok(())
                } else {
                    Err(bad(format!("albedo must lie in [0, 1), got {albedo}")))
                }
            };
            let kind = match s.material {
                Surface::Diffuse { albedo } => {
                    check_albedo(albedo)?;
                    Kind::Reflector(Bsdf::Diffuse { albedo })
                }
                Surface::Glossy { albedo, exponent } => {
                    check_albedo(albedo)?;
                    if !(exponent >= 0.0 && exponent.is_finite()) {
                        return Err(bad(format!("exponent must be finite and non-negative, got {exponent}")));
                    }
                    let lobe = match lobes.iter().find(|l| l.exponent() == exponent) {
                        Some(l) => l.clone(),
                        None => {
                            lobes.push(Lobe::new(exponent));
                            lobes.last().unwrap().clone()
                        }
                    };
                    Kind::Reflector(Bsdf::Glossy { albedo, lobe })
                }
                Surface::Emitter { radiance } => {
                    if !(radiance > 0.0 && radiance.is_finite()) {
                        return Err(bad(format!("radiance must be positive and finite, got {radiance}")));
                    }
                    Kind::Emitter(radiance)
                }
            };
            segments.push(seg);
            kinds.push(kind);
        }
        let emitters: Vec<usize> = (0..kinds.len())
            .filter(|&i| matches!(kinds[i], Kind::Emitter(_)))
            .collect();
        if emitters.is_empty() {
            return Err(SceneError::NoEmitter);
        }
        let mut emitter_cdf = Vec::with_capacity(emitters.len());
        let mut acc = 0.0;
        for &e in &emitters {
            acc += segments[e].length();
            emitter_cdf.push(acc);
        }
        let bounds = segments.iter().fold(
            (
                Vec2::new(f64::INFINITY, f64::INFINITY),
                Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            ),
            |(lo, hi), s| (lo.min(s.a).min(s.b), hi.max(s.a).max(s.b)),
        );
        // Pad so points on the boundary fall strictly inside.
        let pad = 1e-6 * (bounds.1 - bounds.0).length().max(1.0);
        let bounds = (bounds.0 - Vec2::new(pad, pad), bounds.1 + Vec2::new(pad, pad));
        Ok(Self {
            spec,
            segments,
            kinds,
            emitters,
            emitter_cdf,
            emitter_length: acc,
            bounds,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Self::from_spec(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn camera(&self) -> &Camera {
        &self.spec.camera
    }

    pub fn pixels(&self) -> usize {
        self.spec.camera.pixels
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        self.bounds
    }

    /// Emitted radiance, if the segment is an emitter.
    pub fn radiance(&self, i: usize) -> Option<f64> {
        match self.kinds[i] {
            Kind::Emitter(l) => Some(l),
            Kind::Reflector(_) => None,
        }
    }

    pub fn bsdf(&self, i: usize) -> Option<&Bsdf> {
        match &self.kinds[i] {
            Kind::Reflector(b) => Some(b),
            Kind::Emitter(_) => None,
        }
    }

    /// Closest hit in front of the ray origin, ignoring segment `skip`.
    pub fn intersect(&self, ray: &Ray, skip: Option<usize>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.segments.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if let Some(t) = s.intersect(ray) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        segment: i,
                        point: ray.at(t),
                    });
                }
            }
        }
        best
    }

    /// Uniform point over the total emitter length.
    pub fn sample_emitter(&self, u_pick: f64, u_pos: f64) -> Vec2 {
        let target = u_pick * self.emitter_length;
        let k = self
            .emitter_cdf
            .partition_point(|&c| c <= target)
            .min(self.emitters.len() - 1);
        self.segments[self.emitters[k]].point(u_pos)
    }

    /// Solid-angle density of [`Scene::sample_emitter`] seen from the ray origin in the ray
    /// direction, summed over every emitter crossing along the ray, occluded or not.
    pub fn emitter_pdf(&self, ray: &Ray) -> f64 {
        let mut pdf = 0.0;
        for &e in &self.emitters {
            let seg = &self.segments[e];
            if let Some(t) = seg.intersect(ray) {
                let cos = ray.dir.dot(seg.normal()).abs();
                if cos > 0.0 {
                    pdf += t / cos;
                }
            }
        }
        pdf / self.emitter_length
    }
}
