use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scene, SceneError, BACKGROUND};
use crate::numerics::rng_from_seed;

const PLACEMENT_ATTEMPTS: usize = 500;
const COLOR_NOISE: f64 = 0.03;
const POSITION_NOISE: f64 = 0.004;
const FLOOR_SHARE: f64 = 0.25;

/// Size parameters of a generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub n_objects: usize,
    pub n_points: usize,
    pub n_class: usize,
    /// Side length of the square floor, metres.
    pub room_extent: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 4,
            n_points: 2000,
            n_class: 3,
            room_extent: 4.0,
        }
    }
}

impl SceneSpec {
    /// Parses a `key=value` scene file with keys `n_objects`, `n_points`,
    /// `n_class`, `room_extent` and `seed`. Returns the spec and the seed.
    pub fn parse(text: &str) -> Result<(SceneSpec, u64), SceneError> {
        let mut spec = SceneSpec::default();
        let mut seed = 0u64;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SceneError::Spec(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || SceneError::Spec(format!("line {}: bad value for {key}: {value}", lineno + 1));
            match key {
                "n_objects" => spec.n_objects = value.parse().map_err(|_| bad())?,
                "n_points" => spec.n_points = value.parse().map_err(|_| bad())?,
                "n_class" => spec.n_class = value.parse().map_err(|_| bad())?,
                "room_extent" => spec.room_extent = value.parse().map_err(|_| bad())?,
                "seed" => seed = value.parse().map_err(|_| bad())?,
                other => return Err(SceneError::Spec(format!("line {}: unknown key {other}", lineno + 1))),
            }
        }
        spec.check()?;
        Ok((spec, seed))
    }

    pub fn check(&self) -> Result<(), SceneError> {
        if self.n_objects == 0 {
            return Err(SceneError::Spec("n_objects must be at least 1".into()));
        }
        if self.n_points < 100 * self.n_objects {
            return Err(SceneError::Spec(format!(
                "n_points {} is below 100 per object ({} objects)",
                self.n_points, self.n_objects
            )));
        }
        if self.n_class == 0 {
            return Err(SceneError::Spec("n_class must be at least 1".into()));
        }
        if !(self.room_extent.is_finite() && self.room_extent > 1.0) {
            return Err(SceneError::Spec(format!(
                "room_extent {} must exceed 1 m",
                self.room_extent
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Box { half: [f64; 3] },
    Sphere { radius: f64 },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    fn kind(&self) -> usize {
        match self {
            Shape::Box { .. } => 0,
            Shape::Sphere { .. } => 1,
            Shape::Cylinder { .. } => 2,
        }
    }

    fn footprint(&self) -> f64 {
        match *self {
            Shape::Box { half } => half[0].hypot(half[1]),
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { radius, .. } => radius,
        }
    }

    fn random(rng: &mut ChaCha8Rng, extent: f64) -> Shape {
        // Scale objects with the room, capped so several fit.
        let s = (extent / 4.0).min(1.5);
        match rng.random_range(0..3) {
            0 => Shape::Box {
                half: [
                    s * rng.random_range(0.2..0.4),
                    s * rng.random_range(0.2..0.4),
                    s * rng.random_range(0.2..0.45),
                ],
            },
            1 => Shape::Sphere {
                radius: s * rng.random_range(0.2..0.35),
            },
            _ => Shape::Cylinder {
                radius: s * rng.random_range(0.15..0.3),
                height: s * rng.random_range(0.4..0.9),
            },
        }
    }

    /// Uniform sample on the exposed surface (everything but the base),
    /// relative to the footprint centre at floor height.
    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Shape::Box { half: [hx, hy, hz] } => {
                let (top, side_x, side_y) = (4.0 * hx * hy, 4.0 * hy * hz, 4.0 * hx * hz);
                let total = top + 2.0 * side_x + 2.0 * side_y;
                let pick = rng.random_range(0.0..total);
                let u = rng.random_range(-1.0..1.0);
                let v = rng.random_range(-1.0..1.0);
                if pick < top {
                    [u * hx, v * hy, 2.0 * hz]
                } else if pick < top + 2.0 * side_x {
                    let sign = if pick < top + side_x { 1.0 } else { -1.0 };
                    [sign * hx, u * hy, (v + 1.0) * hz]
                } else {
                    let sign = if pick < top + 2.0 * side_x + side_y { 1.0 } else { -1.0 };
                    [u * hx, sign * hy, (v + 1.0) * hz]
                }
            }
            Shape::Sphere { radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                [radius * r * phi.cos(), radius * r * phi.sin(), radius * (1.0 + z)]
            }
            Shape::Cylinder { radius, height } => {
                let (top, side) = (PI * radius * radius, 2.0 * PI * radius * height);
                let phi = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..top + side) < top {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    [r * phi.cos(), r * phi.sin(), height]
                } else {
                    [radius * phi.cos(), radius * phi.sin(), rng.random_range(0.0..height)]
                }
            }
        }
    }
}

struct Placed {
    shape: Shape,
    center: [f64; 2],
}

/// Generates a scene as a pure function of `(seed, spec)`.
///
/// A quarter of the points land on the floor (outside object footprints);
/// the rest are split evenly across objects, earlier objects taking the
/// remainder.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.check()?;
    let mut rng = rng_from_seed(seed);
    let extent = spec.room_extent;
    let gap = 0.1 * extent / 4.0;

    let mut placed: Vec<Placed> = Vec::with_capacity(spec.n_objects);
    for object in 0..spec.n_objects {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = Shape::random(&mut rng, extent);
            let r = shape.footprint();
            let margin = r + gap;
            if 2.0 * margin >= extent {
                continue;
            }
            let center = [
                rng.random_range(margin..extent - margin),
                rng.random_range(margin..extent - margin),
            ];
            let clear = placed.iter().all(|p| {
                let d = (p.center[0] - center[0]).hypot(p.center[1] - center[1]);
                d > p.shape.footprint() + r + gap
            });
            if clear {
                placed.push(Placed { shape, center });
                done = true;
                break;
            }
        }
        if !done {
            return Err(SceneError::Placement {
                object,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let floor_count = (spec.n_points as f64 * FLOOR_SHARE) as usize;
    let object_total = spec.n_points - floor_count;
    let per_object = object_total / spec.n_objects;
    let extra = object_total % spec.n_objects;

    let color_noise = Normal::new(0.0, COLOR_NOISE).expect("valid sigma");
    let pos_noise = Normal::new(0.0, POSITION_NOISE).expect("valid sigma");
    let mut scene = Scene {
        positions: Vec::with_capacity(spec.n_points),
        colors: Vec::with_capacity(spec.n_points),
        semantic: Vec::with_capacity(spec.n_points),
        instance: Vec::with_capacity(spec.n_points),
        n_class: spec.n_class,
    };

    let floor_base = [0.55, 0.5, 0.45];
    let max_floor_draws = 1000 * floor_count.max(1);
    let mut draws = 0;
    while scene.len() < floor_count {
        draws += 1;
        if draws > max_floor_draws {
            return Err(SceneError::Spec("objects leave no room for floor points".into()));
        }
        let x = rng.random_range(0.0..extent);
        let y = rng.random_range(0.0..extent);
        let covered = placed
            .iter()
            .any(|p| (p.center[0] - x).hypot(p.center[1] - y) < p.shape.footprint());
        if covered {
            continue;
        }
        let z = pos_noise.sample(&mut rng).abs();
        let color = jitter(floor_base, &color_noise, &mut rng);
        scene.positions.push([x, y, z]);
        scene.colors.push(color);
        scene.semantic.push(BACKGROUND);
        scene.instance.push(BACKGROUND);
    }

    for (id, p) in placed.iter().enumerate() {
        let base = [
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
        ];
        let class = (p.shape.kind() % spec.n_class) as i32;
        let count = per_object + usize::from(id < extra);
        for _ in 0..count {
            let local = p.shape.sample(&mut rng);
            let pos = [
                p.center[0] + local[0] + pos_noise.sample(&mut rng),
                p.center[1] + local[1] + pos_noise.sample(&mut rng),
                (local[2] + pos_noise.sample(&mut rng)).max(0.0),
            ];
            scene.positions.push(pos);
            scene.colors.push(jitter(base, &color_noise, &mut rng));
            scene.semantic.push(class);
            scene.instance.push(id as i32);
        }
    }
    scene.validate()?;
    Ok(scene)
}

fn jitter(base: [f64; 3], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> [f64; 3] {
    base.map(|c| (c + noise.sample(rng)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        assert_eq!(generate_scene(11, &spec).unwrap(), generate_scene(11, &spec).unwrap());
        assert_ne!(generate_scene(11, &spec).unwrap(), generate_scene(12, &spec).unwrap());
    }

    #[test]
    fn single_object_gives_single_instance() {
        let spec = SceneSpec {
            n_objects: 1,
            n_points: 500,
            ..SceneSpec::default()
        };
        let scene = generate_scene(3, &spec).unwrap();
        assert_eq!(scene.n_instances(), 1);
    }

    #[test]
    fn instance_counts_cover_non_floor_points() {
        let spec = SceneSpec {
            n_objects: 5,
            n_points: 4000,
            ..SceneSpec::default()
        };
        let scene = generate_scene(7, &spec).unwrap();
        let floor = scene.instance.iter().filter(|&&i| i == BACKGROUND).count();
        let mut per_instance = vec![0usize; scene.n_instances()];
        for &i in scene.instance.iter().filter(|&&i| i >= 0) {
            per_instance[i as usize] += 1;
        }
        assert_eq!(per_instance.len(), 5);
        assert_eq!(per_instance.iter().sum::<usize>(), spec.n_points - floor);
        assert_eq!(floor, 1000);
    }

    #[test]
    fn spec_rejects_too_few_points() {
        let spec = SceneSpec {
            n_objects: 3,
            n_points: 299,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(0, &spec), Err(SceneError::Spec(_))));
    }

    #[test]
    fn crowded_room_fails_placement() {
        let spec = SceneSpec {
            n_objects: 60,
            n_points: 6000,
            room_extent: 1.5,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(0, &spec), Err(SceneError::Placement { .. })));
    }

    #[test]
    fn parse_scene_file() {
        let (spec, seed) = SceneSpec::parse("# demo\nn_objects=3\nn_points = 900\nseed=42\nroom_extent=5\n").unwrap();
        assert_eq!(spec.n_objects, 3);
        assert_eq!(spec.n_points, 900);
        assert_eq!(spec.room_extent, 5.0);
        assert_eq!(seed, 42);
        assert!(SceneSpec::parse("colour=red").is_err());
    }
}
