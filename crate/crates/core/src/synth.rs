//! Seeded synthetic sonar scenes with complete fish masks.
//!
//! Scenes are rendered on the polar beam × bin grid and projected onto the
//! raster exactly like real pings. Fish are small hard-edged ellipses
//! clustered into schools; surface reflections, bottom returns and vessels
//! are bright but never labeled.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::par;
use crate::sonar::dataset::{write_sample, MANIFEST_FILE};
use crate::sonar::geometry::{FanGeometry, DEFAULT_APERTURE_DEG, DEFAULT_FREQUENCY_HZ, DEFAULT_RANGE_M};
use crate::sonar::polar::{beam_angle, polar_to_raster, project_grid};
use crate::sonar::{MaskImage, PolarFrame, SamplePair, RASTER_HEIGHT, RASTER_WIDTH};

pub const MANIFEST_VERSION: u32 = 1;
/// Seed and size of the standard training corpus.
pub const STANDARD_SEED: u64 = 7;
pub const STANDARD_SCENES: usize = 50;

/// Raster pixels with at least this fish coverage are labelled fish.
pub const MASK_COVERAGE: f64 = 0.25;

/// One fish: center in raster pixel coordinates, extents in pixels.
/// `width` runs across the beam (azimuth), `height` along the range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fish {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub width: f64,
    /// Echo strength relative to the nominal fish level.
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub schools: (usize, usize),
    pub fish_per_school: (usize, usize),
    pub fish_height_px: (f64, f64),
    pub fish_width_px: (f64, f64),
    /// Standard deviation of fish positions around a school center.
    pub school_spread_px: f64,
    /// Range fractions allowed for school centers.
    pub school_range: (f64, f64),
    pub include_surface_reflection: bool,
    pub include_bottom_return: bool,
    pub include_vessel: bool,
    /// Chance that a scene allowing a vessel actually contains one.
    pub vessel_probability: f64,
    /// 0 disables speckle and the speckle-noise background.
    pub speckle_strength: f64,
    /// Nominal fish echo over the mean noise floor.
    pub fish_contrast: f64,
    pub noise_floor: f64,
    pub beams: usize,
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub range_max: f64,
    pub aperture_deg: f64,
    pub frequency_hz: f64,
    /// Fish placed verbatim in addition to the random schools.
    pub fixed_fish: Vec<Fish>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::herring(0)
    }
}

impl SceneSpec {
    /// Dense pelagic schools of small targets.
    pub fn herring(seed: u64) -> Self {
        Self {
            seed,
            schools: (4, 6),
            fish_per_school: (18, 26),
            fish_height_px: (2.0, 4.0),
            fish_width_px: (3.0, 8.0),
            school_spread_px: 9.0,
            school_range: (0.2, 0.8),
            include_surface_reflection: true,
            include_bottom_return: true,
            include_vessel: true,
            vessel_probability: 0.5,
            speckle_strength: 0.5,
            fish_contrast: 5.0,
            noise_floor: 0.1,
            beams: 256,
            bins: 256,
            width: RASTER_WIDTH,
            height: RASTER_HEIGHT,
            range_max: DEFAULT_RANGE_M,
            aperture_deg: DEFAULT_APERTURE_DEG,
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            fixed_fish: Vec::new(),
        }
    }

    /// Larger, more scattered targets at closer range.
    pub fn wittling(seed: u64) -> Self {
        Self {
            schools: (6, 10),
            fish_per_school: (2, 6),
            fish_height_px: (3.0, 6.0),
            fish_width_px: (5.0, 12.0),
            school_spread_px: 18.0,
            school_range: (0.15, 0.5),
            ..Self::herring(seed)
        }
    }

    /// Surface, bottom and a vessel in every scene, no fish.
    pub fn clutter_only(seed: u64) -> Self {
        Self {
            schools: (0, 0),
            vessel_probability: 1.0,
            ..Self::herring(seed)
        }
    }

    /// Nothing but noise-free empty water.
    pub fn empty(seed: u64) -> Self {
        Self {
            schools: (0, 0),
            include_surface_reflection: false,
            include_bottom_return: false,
            include_vessel: false,
            speckle_strength: 0.0,
            ..Self::herring(seed)
        }
    }

    pub fn geometry(&self) -> Result<FanGeometry> {
        FanGeometry::new(self.width, self.height, self.aperture_deg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("raster must be non-empty");
        }
        if self.beams < 2 || self.bins < 2 {
            return bad("need at least 2 beams and 2 bins");
        }
        if self.schools.0 > self.schools.1 || self.fish_per_school.0 > self.fish_per_school.1 {
            return bad("count ranges must satisfy min ≤ max");
        }
        for (lo, hi) in [self.fish_height_px, self.fish_width_px] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad("fish sizes must be positive with min ≤ max");
            }
        }
        let (r0, r1) = self.school_range;
        if !(0.0 <= r0 && r0 <= r1 && r1 <= 1.0) {
            return bad("school range must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.vessel_probability) || !(0.0..=1.0).contains(&self.speckle_strength) {
            return bad("probabilities and speckle strength must lie in [0, 1]");
        }
        if !(self.school_spread_px >= 0.0 && self.fish_contrast > 0.0 && self.noise_floor >= 0.0) {
            return bad("spread, contrast and noise floor must be non-negative");
        }
        if !(self.range_max > 0.0) {
            return bad("range must be positive");
        }
        if self.fixed_fish.iter().any(|f| !(f.height > 0.0 && f.width > 0.0 && f.brightness >= 0.0)) {
            return bad("fixed fish need positive size");
        }
        self.geometry()?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("seed", self.seed);
        m.set("schools_min", self.schools.0);
        m.set("schools_max", self.schools.1);
        m.set("fish_per_school_min", self.fish_per_school.0);
        m.set("fish_per_school_max", self.fish_per_school.1);
        m.set("fish_height_min", self.fish_height_px.0);
        m.set("fish_height_max", self.fish_height_px.1);
        m.set("fish_width_min", self.fish_width_px.0);
        m.set("fish_width_max", self.fish_width_px.1);
        m.set("school_spread_px", self.school_spread_px);
        m.set("school_range_min", self.school_range.0);
        m.set("school_range_max", self.school_range.1);
        m.set("surface_reflection", self.include_surface_reflection);
        m.set("bottom_return", self.include_bottom_return);
        m.set("vessel", self.include_vessel);
        m.set("vessel_probability", self.vessel_probability);
        m.set("speckle_strength", self.speckle_strength);
        m.set("fish_contrast", self.fish_contrast);
        m.set("noise_floor", self.noise_floor);
        m.set("beams", self.beams);
        m.set("bins", self.bins);
        m.set("width", self.width);
        m.set("height", self.height);
        m.set("range_max", self.range_max);
        m.set("aperture_deg", self.aperture_deg);
        m.set("frequency_hz", self.frequency_hz);
        let fixed: Vec<String> = self
            .fixed_fish
            .iter()
            .map(|f| format!("{},{},{},{},{}", f.x, f.y, f.height, f.width, f.brightness))
            .collect();
        m.set("fixed_fish", fixed.join(";"));
        m
    }

    /// Start from the default spec and override every key present.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let mut s = Self::default();
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = m.get($key)? {
                    $field = v;
                }
            };
        }
        take!("seed", s.seed);
        take!("schools_min", s.schools.0);
        take!("schools_max", s.schools.1);
        take!("fish_per_school_min", s.fish_per_school.0);
        take!("fish_per_school_max", s.fish_per_school.1);
        take!("fish_height_min", s.fish_height_px.0);
        take!("fish_height_max", s.fish_height_px.1);
        take!("fish_width_min", s.fish_width_px.0);
        take!("fish_width_max", s.fish_width_px.1);
        take!("school_spread_px", s.school_spread_px);
        take!("school_range_min", s.school_range.0);
        take!("school_range_max", s.school_range.1);
        take!("surface_reflection", s.include_surface_reflection);
        take!("bottom_return", s.include_bottom_return);
        take!("vessel", s.include_vessel);
        take!("vessel_probability", s.vessel_probability);
        take!("speckle_strength", s.speckle_strength);
        take!("fish_contrast", s.fish_contrast);
        take!("noise_floor", s.noise_floor);
        take!("beams", s.beams);
        take!("bins", s.bins);
        take!("width", s.width);
        take!("height", s.height);
        take!("range_max", s.range_max);
        take!("aperture_deg", s.aperture_deg);
        take!("frequency_hz", s.frequency_hz);
        if let Some(list) = m.get_str("fixed_fish") {
            s.fixed_fish = list
                .split(';')
                .filter(|e| !e.trim().is_empty())
                .map(|e| {
                    let v: Vec<f64> = e
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Parameter(format!("bad fixed fish `{e}`")))?;
                    match v[..] {
                        [x, y, height, width, brightness] => Ok(Fish {
                            x,
                            y,
                            height,
                            width,
                            brightness,
                        }),
                        _ => Err(Error::Parameter(format!("fixed fish `{e}` needs 5 fields"))),
                    }
                })
                .collect::<Result<_>>()?;
        }
        for key in m.keys() {
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Parameter(format!("unknown scene key `{key}`")));
            }
        }
        s.validate()?;
        Ok(s)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "schools_min",
    "schools_max",
    "fish_per_school_min",
    "fish_per_school_max",
    "fish_height_min",
    "fish_height_max",
    "fish_width_min",
    "fish_width_max",
    "school_spread_px",
    "school_range_min",
    "school_range_max",
    "surface_reflection",
    "bottom_return",
    "vessel",
    "vessel_probability",
    "speckle_strength",
    "fish_contrast",
    "noise_floor",
    "beams",
    "bins",
    "width",
    "height",
    "range_max",
    "aperture_deg",
    "frequency_hz",
    "fixed_fish",
    // Corpus-level keys that may share the file.
    "n",
    "format_version",
];

/// Surface reflection band at near range.
#[derive(Debug, Clone, Copy)]
struct Surface {
    r: f64,
    sigma: f64,
    amp: f64,
    phase: f64,
}

/// Seabed ridge `r_b(θ)` with a decaying tail behind it.
#[derive(Debug, Clone, Copy)]
struct Bottom {
    r0: f64,
    slope: f64,
    wiggle: f64,
    freq: f64,
    phase: f64,
    sigma: f64,
    amp: f64,
}

impl Bottom {
    fn range_at(&self, theta: f64) -> f64 {
        self.r0 + self.slope * theta + self.wiggle * (self.freq * theta + self.phase).sin()
    }
}

/// Elongated bright hull in raster coordinates.
#[derive(Debug, Clone, Copy)]
struct Vessel {
    x: f64,
    y: f64,
    half_len: f64,
    half_thick: f64,
    angle: f64,
    amp: f64,
}

impl Vessel {
    /// Normalized elliptic radius of a raster point (≤ 1 inside).
    fn rho(&self, x: f64, y: f64, grow: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        let u = (c * dx + s * dy) / (self.half_len + grow);
        let v = (-s * dx + c * dy) / (self.half_thick + grow);
        (u * u + v * v).sqrt()
    }
}

/// What went into a scene besides the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub fish: Vec<Fish>,
    pub has_surface: bool,
    pub has_bottom: bool,
    pub has_vessel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: PolarFrame,
    pub mask: MaskImage,
    pub layout: SceneLayout,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn uniform_count<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Rayleigh draw with unit mean.
fn rayleigh<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    (2.0 / PI).sqrt() * (-2.0 * u.ln()).sqrt()
}

/// Is raster point `(px, py)` inside `fish`? The ellipse is aligned with the
/// local beam direction.
fn inside_fish(f: &Fish, apex: (f64, f64), px: f64, py: f64) -> bool {
    let (rx, ry) = (f.x - apex.0, f.y - apex.1);
    let n = (rx * rx + ry * ry).sqrt().max(1e-9);
    let (ur, vr) = (rx / n, ry / n);
    let (dx, dy) = (px - f.x, py - f.y);
    let radial = (dx * ur + dy * vr) / (f.height / 2.0);
    let tangential = (dx * -vr + dy * ur) / (f.width / 2.0);
    radial * radial + tangential * tangential <= 1.0
}

/// Render one scene.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let geom = spec.geometry()?;
    let half = geom.half_aperture();
    let radius = geom.radius_px();
    let apex = geom.apex();

    // Clutter layout.
    let surface = spec.include_surface_reflection.then(|| Surface {
        r: rng.gen_range(0.05..0.1),
        sigma: rng.gen_range(0.012..0.02),
        amp: rng.gen_range(0.8..1.2) * spec.fish_contrast * spec.noise_floor,
        phase: rng.gen_range(0.0..2.0 * PI),
    });
    let bottom = spec.include_bottom_return.then(|| Bottom {
        r0: rng.gen_range(0.78..0.92),
        slope: rng.gen_range(-0.05..0.05),
        wiggle: rng.gen_range(0.0..0.025),
        freq: rng.gen_range(1.0..5.0),
        phase: rng.gen_range(0.0..2.0 * PI),
        sigma: rng.gen_range(0.01..0.025),
        amp: rng.gen_range(0.6..1.0) * spec.fish_contrast * spec.noise_floor,
    });
    let vessel_roll = rng.gen::<f64>();
    let vessel = (spec.include_vessel && vessel_roll < spec.vessel_probability).then(|| {
        let r = rng.gen_range(0.25..0.65);
        let t = rng.gen_range(-0.7..0.7) * half;
        let (x, y) = geom.point_of(r, t);
        Vessel {
            x,
            y,
            half_len: rng.gen_range(14.0..24.0),
            half_thick: rng.gen_range(3.0..5.0),
            angle: rng.gen_range(0.0..PI),
            amp: rng.gen_range(0.9..1.3) * spec.fish_contrast * spec.noise_floor,
        }
    });

    // Fish placement with clutter exclusion.
    let allowed = |f: &Fish| -> bool {
        let Some((r, t)) = geom.polar_of(f.x, f.y) else {
            return false;
        };
        let ext = f.height.max(f.width) / 2.0;
        let r_px = r * radius;
        if r_px < ext + 6.0 || r_px > radius - ext - 2.0 {
            return false;
        }
        if t.abs() > half - (ext + 2.0) / r_px {
            return false;
        }
        if let Some(s) = surface {
            if ((r - s.r) * radius).abs() < 3.0 * s.sigma * radius + ext + 2.0 {
                return false;
            }
        }
        if let Some(b) = bottom {
            if (r - b.range_at(t)) * radius > -(3.0 * b.sigma * radius + ext + 3.0) {
                return false;
            }
        }
        if let Some(v) = vessel {
            if v.rho(f.x, f.y, ext + 4.0) <= 1.0 {
                return false;
            }
        }
        true
    };
    let mut fish: Vec<Fish> = spec.fixed_fish.clone();
    let n_schools = uniform_count(rng, spec.schools);
    for _ in 0..n_schools {
        let rc = uniform(rng, spec.school_range);
        let tc = rng.gen_range(-0.85..0.85) * half;
        let (cx, cy) = geom.point_of(rc, tc);
        let spread = Normal::new(0.0, spec.school_spread_px.max(1e-9)).expect("finite spread");
        let count = uniform_count(rng, spec.fish_per_school);
        for _ in 0..count {
            // A few retries keep the count close to the draw near clutter.
            for _ in 0..8 {
                let f = Fish {
                    x: cx + spread.sample(rng),
                    y: cy + 0.6 * spread.sample(rng),
                    height: uniform(rng, spec.fish_height_px),
                    width: uniform(rng, spec.fish_width_px),
                    brightness: rng.gen_range(0.75..1.25),
                };
                if allowed(&f) {
                    fish.push(f);
                    break;
                }
            }
        }
    }

    // Polar rendering.
    let (beams, bins) = (spec.beams, spec.bins);
    let angles: Vec<f64> = (0..beams).map(|b| beam_angle(spec.aperture_deg, beams, b as f64)).collect();
    let mut echo = vec![0.0f64; beams * bins];
    let mut cover = vec![0.0f64; beams * bins];
    let fish_level = spec.fish_contrast * spec.noise_floor;
    for f in &fish {
        let Some((r, t)) = geom.polar_of(f.x, f.y).or_else(|| {
            // Fixed fish may sit outside the fan; they are still rendered.
            let (dx, dy) = (f.x - apex.0, f.y - apex.1);
            Some(((dx * dx + dy * dy).sqrt() / radius, dx.atan2(-dy)))
        }) else {
            continue;
        };
        let ext = f.height.max(f.width) / 2.0 + 1.0;
        let dr = ext / radius;
        let lo = (((r - dr) * (bins - 1) as f64).floor().max(0.0)) as usize;
        let hi = (((r + dr) * (bins - 1) as f64).ceil()).min((bins - 1) as f64).max(0.0) as usize;
        let dt = if r * radius > ext { (ext / (r * radius)).asin() } else { PI };
        let step = 2.0 * half / (beams - 1) as f64;
        let b_lo = (((t - dt + half) / step).floor().max(0.0)) as usize;
        let b_hi = (((t + dt + half) / step).ceil()).min((beams - 1) as f64).max(0.0) as usize;
        for b in b_lo..=b_hi.min(beams - 1) {
            for k in lo..=hi.min(bins - 1) {
                let (px, py) = geom.point_of(k as f64 / (bins - 1) as f64, angles[b]);
                if inside_fish(f, apex, px, py) {
                    let i = b * bins + k;
                    cover[i] = 1.0;
                    echo[i] = echo[i].max(f.brightness * fish_level);
                }
            }
        }
    }
    let s = spec.speckle_strength;
    let mut data = Vec::with_capacity(beams * bins);
    for b in 0..beams {
        let t = angles[b];
        for k in 0..bins {
            let r = k as f64 / (bins - 1) as f64;
            let mut signal = echo[b * bins + k];
            if let Some(su) = surface {
                let z = (r - su.r) / su.sigma;
                signal += su.amp * (-0.5 * z * z).exp() * (0.8 + 0.2 * (3.0 * t + su.phase).sin());
            }
            if let Some(bo) = bottom {
                let rb = bo.range_at(t);
                let z = (r - rb) / bo.sigma;
                signal += bo.amp * (-0.5 * z * z).exp();
                if r > rb {
                    signal += 0.35 * bo.amp * (-(r - rb) / 0.08).exp();
                }
            }
            if let Some(v) = vessel {
                let (px, py) = geom.point_of(r, t);
                let rho = v.rho(px, py, 0.0);
                if rho < 1.0 {
                    signal += v.amp * (1.0 - rho * rho).sqrt();
                }
            }
            let floor = spec.noise_floor * (0.6 + 0.8 * r);
            let speckle = 1.0 - s + s * rayleigh(rng);
            let noise = s * floor * rayleigh(rng);
            data.push((signal * speckle + noise) as f32);
        }
    }
    let frame = PolarFrame::with_geometry(beams, bins, spec.range_max, spec.aperture_deg, spec.frequency_hz, data)?;
    let projected = project_grid(&cover, beams, bins, &geom);
    let mask_px = projected.iter().map(|&v| u8::from(v >= MASK_COVERAGE)).collect();
    let mask = MaskImage::from_raw(spec.width, spec.height, mask_px)?;
    Ok(Scene {
        frame,
        mask,
        layout: SceneLayout {
            fish,
            has_surface: surface.is_some(),
            has_bottom: bottom.is_some(),
            has_vessel: vessel.is_some(),
        },
    })
}

pub fn sample_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Independent generator for scene `index` of a corpus.
pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Scene `index` of the corpus defined by `spec`, as an 8-bit sample.
pub fn generate_sample(spec: &SceneSpec, index: usize) -> Result<(SamplePair, Scene)> {
    let scene = generate_scene(spec, &mut scene_rng(spec.seed, index))?;
    let image = polar_to_raster(&scene.frame, &spec.geometry()?)?.quantized();
    let sample = SamplePair::new(sample_id(index), image, scene.mask.clone())?;
    Ok((sample, scene))
}

/// `n` samples generated in parallel; identical for any thread count.
pub fn generate_samples(spec: &SceneSpec, n: usize) -> Result<Vec<SamplePair>> {
    Ok(generate_scenes(spec, n)?.into_iter().map(|(s, _)| s).collect())
}

/// The standard seeded herring corpus.
pub fn standard_corpus() -> Result<Vec<SamplePair>> {
    generate_samples(&SceneSpec::herring(STANDARD_SEED), STANDARD_SCENES)
}

pub fn generate_scenes(spec: &SceneSpec, n: usize) -> Result<Vec<(SamplePair, Scene)>> {
    spec.validate()?;
    par::map_range(n, |i| generate_sample(spec, i)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub scenes: usize,
    pub fish: usize,
    pub fish_pixels: usize,
}

pub fn manifest(spec: &SceneSpec, n: usize) -> KvMap {
    let mut m = spec.to_kv();
    m.set("format_version", MANIFEST_VERSION);
    m.set("n", n);
    m
}

/// Write `n` pairs plus a manifest sufficient to regenerate them.
pub fn generate_corpus(spec: &SceneSpec, n: usize, out_dir: &Path) -> Result<CorpusSummary> {
    if n == 0 {
        return Err(Error::Parameter("corpus size must be positive".into()));
    }
    let scenes = generate_scenes(spec, n)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = CorpusSummary {
        scenes: n,
        fish: 0,
        fish_pixels: 0,
    };
    for (sample, scene) in &scenes {
        write_sample(sample, out_dir)?;
        summary.fish += scene.layout.fish.len();
        summary.fish_pixels += sample.mask.count();
    }
    let path = out_dir.join(MANIFEST_FILE);
    crate::codec::write_file(&path, manifest(spec, n).render().as_bytes())?;
    Ok(summary)
}

/// Parse a manifest into the spec and corpus size it records.
pub fn read_manifest(path: &Path) -> Result<(SceneSpec, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = KvMap::parse(&text)?;
    let version: u32 = m.require("format_version")?;
    if version != MANIFEST_VERSION {
        return Err(Error::Version {
            context: "manifest",
            expected: MANIFEST_VERSION as u16,
            found: version.min(u16::MAX as u32) as u16,
        });
    }
    Ok((SceneSpec::from_kv(&m)?, m.require("n")?))
}

/// Rebuild a corpus from the manifest of another.
pub fn regenerate_corpus(manifest_path: &Path, out_dir: &Path) -> Result<CorpusSummary> {
    let (spec, n) = read_manifest(manifest_path)?;
    generate_corpus(&spec, n, out_dir)
}
