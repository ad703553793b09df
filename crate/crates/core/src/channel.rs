//! Single-bounce spherical-wave geometric channel model.
//!
//! The BS reference antenna element sits at the origin. For every path `k`
//! the UE sees `M_k` sub-paths, each bouncing off one scatterer; the
//! scatterer lies on the ellipsoid with foci at the BS reference element and
//! the UE whose focal-distance sum is the path length `d_k = ‖r‖ + τ_k·c`.
//! Each BS element gets its own departure vector, distance, phase and delay,
//! which is what makes the wavefront spherical rather than planar.
//!
//! Antenna field patterns are isotropic and polarization coupling is the
//! scalar 1, so a sub-path contributes a unit phasor.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::sample_stream;
use crate::transform::{to_angular_delay, CsiVector};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Redraws allowed per sub-path when its arrival geometry is degenerate.
pub const MAX_SUBPATH_REDRAWS: usize = 100;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Vec3) -> f64 {
    libm::sqrt(dot3(a, a))
}

/// Element positions relative to the reference element.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    element_offsets: Vec<Vec3>,
}

impl ArrayGeometry {
    pub fn new(element_offsets: Vec<Vec3>) -> Result<Self> {
        match element_offsets.first() {
            None => Err(Error::config("antenna array needs at least one element")),
            Some(first) if *first != [0.0; 3] => {
                Err(Error::config("first array element must be the reference (zero offset)"))
            }
            Some(_) => Ok(Self { element_offsets }),
        }
    }

    /// Planar array on the y–z plane with the given element spacing,
    /// `√nt × √nt` when `nt` is a perfect square and `1 × nt` along y
    /// otherwise.
    pub fn upa(nt: usize, spacing_m: f64) -> Result<Self> {
        if nt == 0 {
            return Err(Error::config("num_tx_antennas must be at least 1"));
        }
        let side = libm::round(libm::sqrt(nt as f64)) as usize;
        let offsets = if side * side == nt {
            (0..side)
                .flat_map(|row| {
                    (0..side).map(move |col| [0.0, col as f64 * spacing_m, row as f64 * spacing_m])
                })
                .collect()
        } else {
            Self::ula_offsets(nt, spacing_m)
        };
        Self::new(offsets)
    }

    /// Linear array along y.
    pub fn ula(nt: usize, spacing_m: f64) -> Result<Self> {
        Self::new(Self::ula_offsets(nt, spacing_m))
    }

    fn ula_offsets(nt: usize, spacing_m: f64) -> Vec<Vec3> {
        (0..nt).map(|i| [0.0, i as f64 * spacing_m, 0.0]).collect()
    }

    pub fn len(&self) -> usize {
        self.element_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.element_offsets
    }

    /// Largest distance between any element and the reference element.
    pub fn aperture(&self) -> f64 {
        self.element_offsets.iter().map(|&e| norm3(e)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub num_tx_antennas: usize,
    /// Delay rows kept after truncation (`Nc`).
    pub num_delay_rows: usize,
    pub num_paths: usize,
    pub subpaths_per_path: usize,
    pub bs_height_m: f64,
    /// Horizontal BS–UE distance range.
    pub ue_distance_range_m: (f64, f64),
    /// Range of the per-path excess delay `τ_k`.
    pub delay_spread_range_s: (f64, f64),
    pub rng_seed: u64,
    pub array: ArrayGeometry,
}

impl Default for ScenarioConfig {
    /// Desk-scale scenario: 8 antennas, 64 subcarriers at 30 kHz, 8 retained
    /// delay rows, 6 paths of 10 sub-paths, 3.5 GHz carrier.
    fn default() -> Self {
        let carrier = 3.5e9;
        let nt = 8;
        Self {
            carrier_freq_hz: carrier,
            bandwidth_hz: 64.0 * 30e3,
            num_subcarriers: 64,
            subcarrier_spacing_hz: 30e3,
            num_tx_antennas: nt,
            num_delay_rows: 8,
            num_paths: 6,
            subpaths_per_path: 10,
            bs_height_m: 10.0,
            ue_distance_range_m: (20.0, 200.0),
            delay_spread_range_s: (10e-9, 300e-9),
            rng_seed: 0,
            array: ArrayGeometry::upa(nt, 0.5 * SPEED_OF_LIGHT / carrier).expect("valid default array"),
        }
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Half-wavelength planar array matching `num_tx_antennas`.
    pub fn default_array(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::upa(self.num_tx_antennas, 0.5 * self.wavelength())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(alloc::format!("{name} must be positive and finite")))
            }
        };
        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("subcarrier_spacing_hz", self.subcarrier_spacing_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        if self.num_tx_antennas == 0 || self.num_subcarriers == 0 {
            return Err(Error::config("num_tx_antennas and num_subcarriers must be at least 1"));
        }
        if self.num_delay_rows == 0 || self.num_delay_rows > self.num_subcarriers {
            return Err(Error::config("num_delay_rows must lie in 1..=num_subcarriers"));
        }
        if self.num_paths == 0 || self.subpaths_per_path == 0 {
            return Err(Error::config("num_paths and subpaths_per_path must be at least 1"));
        }
        let expected_bw = self.num_subcarriers as f64 * self.subcarrier_spacing_hz;
        if (self.bandwidth_hz - expected_bw).abs() > 1e-9 * expected_bw {
            return Err(Error::config(
                "bandwidth_hz must equal num_subcarriers * subcarrier_spacing_hz",
            ));
        }
        if !(self.bs_height_m.is_finite() && self.bs_height_m >= 0.0) {
            return Err(Error::config("bs_height_m must be non-negative"));
        }
        let (dmin, dmax) = self.ue_distance_range_m;
        if !(dmin.is_finite() && dmax.is_finite() && dmin <= dmax && dmin >= 0.0) {
            return Err(Error::config("ue_distance_range_m must satisfy 0 <= min <= max"));
        }
        if dmin == 0.0 && self.bs_height_m == 0.0 {
            return Err(Error::config("UE may coincide with the BS: raise bs_height_m or the distance lower bound"));
        }
        let (tmin, tmax) = self.delay_spread_range_s;
        if !(tmin.is_finite() && tmax.is_finite() && tmin <= tmax && tmin > 0.0) {
            return Err(Error::config("delay_spread_range_s must satisfy 0 < min <= max"));
        }
        if self.array.len() != self.num_tx_antennas {
            return Err(Error::config("array element count must equal num_tx_antennas"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubPath {
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
    /// Unit arrival direction `q̄` from the UE towards the scatterer.
    pub direction: Vec3,
    /// `‖q‖`, UE–scatterer distance.
    pub arrival_distance: f64,
    /// Scatterer position, i.e. the departure vector `p` of the reference element.
    pub scatterer: Vec3,
    pub initial_phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Excess delay `τ_k`.
    pub delay: f64,
    /// Initial path length `d_k`.
    pub length: f64,
    pub subpaths: Vec<SubPath>,
}

/// Per-element view of one sub-path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementSubPath {
    pub departure: Vec3,
    pub aod_elevation: f64,
    pub aod_azimuth: f64,
    /// `‖p_s‖ + ‖q‖`
    pub distance: f64,
    /// Deterministic phase in `[0, 2π)`.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    /// BS-reference-to-UE vector `r`.
    pub ue_offset: Vec3,
    pub paths: Vec<Path>,
}

/// Raw random draws for one sub-path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubPathDraw {
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
    pub initial_phase: f64,
}

pub fn arrival_direction(azimuth: f64, elevation: f64) -> Vec3 {
    let ce = libm::cos(elevation);
    [libm::cos(azimuth) * ce, libm::sin(azimuth) * ce, libm::sin(elevation)]
}

/// Path length `d_k = ‖r‖ + τ_k·c`.
pub fn path_length(ue_distance: f64, delay: f64) -> f64 {
    ue_distance + delay * SPEED_OF_LIGHT
}

/// UE–scatterer distance `(d² − ‖r‖²) / (2(d + rᵀq̄))`, or `None` when the
/// denominator is not positive (or the result is not finite).
pub fn arrival_distance(ue_offset: Vec3, length: f64, direction: Vec3) -> Option<f64> {
    let r2 = dot3(ue_offset, ue_offset);
    let denom = 2.0 * (length + dot3(ue_offset, direction));
    if !(denom > 0.0) {
        return None;
    }
    let q = (length * length - r2) / denom;
    q.is_finite().then_some(q)
}

impl PathGeometry {
    /// Builds the geometry from explicit draws; `paths[k]` is `(τ_k, sub-path draws)`.
    pub fn from_draws(ue_offset: Vec3, paths: &[(f64, Vec<SubPathDraw>)]) -> Result<Self> {
        let ue_distance = norm3(ue_offset);
        let paths = paths
            .iter()
            .enumerate()
            .map(|(k, (delay, draws))| {
                let length = path_length(ue_distance, *delay);
                let subpaths = draws
                    .iter()
                    .enumerate()
                    .map(|(m, d)| {
                        build_subpath(ue_offset, length, d)
                            .ok_or(Error::GeometryInvalid { path: k, subpath: m })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Path {
                    delay: *delay,
                    length,
                    subpaths,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ue_offset, paths })
    }

    pub fn ue_distance(&self) -> f64 {
        norm3(self.ue_offset)
    }

    /// Sub-path `m` of path `k` as seen from the element at `offset`.
    pub fn element_subpath(&self, k: usize, m: usize, offset: Vec3, wavelength: f64) -> ElementSubPath {
        let sp = &self.paths[k].subpaths[m];
        let departure = sub(sp.scatterer, offset);
        let dep_norm = norm3(departure);
        let distance = dep_norm + sp.arrival_distance;
        let mut phase = 2.0 * PI / wavelength * libm::fmod(distance, wavelength);
        if phase >= 2.0 * PI {
            phase -= 2.0 * PI;
        }
        ElementSubPath {
            departure,
            aod_elevation: libm::asin(departure[2] / dep_norm),
            aod_azimuth: libm::atan2(departure[1], departure[0]),
            distance,
            phase,
        }
    }

    /// Per-element delay of path `k`: mean sub-path distance over `c`.
    pub fn element_delay(&self, k: usize, offset: Vec3) -> f64 {
        let path = &self.paths[k];
        let total: f64 = path
            .subpaths
            .iter()
            .map(|sp| norm3(sub(sp.scatterer, offset)) + sp.arrival_distance)
            .sum();
        total / (path.subpaths.len() as f64 * SPEED_OF_LIGHT)
    }
}

fn build_subpath(ue_offset: Vec3, length: f64, draw: &SubPathDraw) -> Option<SubPath> {
    let direction = arrival_direction(draw.aoa_azimuth, draw.aoa_elevation);
    let q = arrival_distance(ue_offset, length, direction)?;
    let scatterer = [
        ue_offset[0] + q * direction[0],
        ue_offset[1] + q * direction[1],
        ue_offset[2] + q * direction[2],
    ];
    Some(SubPath {
        aoa_azimuth: draw.aoa_azimuth,
        aoa_elevation: draw.aoa_elevation,
        direction,
        arrival_distance: q,
        scatterer,
        initial_phase: draw.initial_phase,
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn draw_subpath<R: Rng + ?Sized>(rng: &mut R) -> SubPathDraw {
    SubPathDraw {
        aoa_azimuth: uniform(rng, -PI, PI),
        aoa_elevation: uniform(rng, -PI / 2.0, PI / 2.0),
        initial_phase: uniform(rng, 0.0, 2.0 * PI),
    }
}

/// Draws a random geometry.
///
/// The UE stands on the ground at a horizontal distance drawn uniformly from
/// `ue_distance_range_m`, at an azimuth within ±60° of the array broadside
/// (+x), `bs_height_m` below the BS. Excess delays are uniform in
/// `delay_spread_range_s` and sorted ascending; AOAs are uniform in azimuth
/// `[−π, π)` and elevation `[−π/2, π/2)`; initial phases are uniform in
/// `[0, 2π)`. A sub-path whose arrival distance is singular is redrawn up to
/// [`MAX_SUBPATH_REDRAWS`] times.
pub fn sample_geometry<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<PathGeometry> {
    cfg.validate()?;
    let (dmin, dmax) = cfg.ue_distance_range_m;
    let horizontal = uniform(rng, dmin, dmax);
    let bearing = uniform(rng, -PI / 3.0, PI / 3.0);
    let ue_offset = [
        horizontal * libm::cos(bearing),
        horizontal * libm::sin(bearing),
        -cfg.bs_height_m,
    ];
    let ue_distance = norm3(ue_offset);

    let (tmin, tmax) = cfg.delay_spread_range_s;
    let mut delays: Vec<f64> = (0..cfg.num_paths).map(|_| uniform(rng, tmin, tmax)).collect();
    delays.sort_by(f64::total_cmp);

    let mut paths = Vec::with_capacity(cfg.num_paths);
    for (k, &delay) in delays.iter().enumerate() {
        let length = path_length(ue_distance, delay);
        let mut subpaths = Vec::with_capacity(cfg.subpaths_per_path);
        for m in 0..cfg.subpaths_per_path {
            let sp = (0..=MAX_SUBPATH_REDRAWS)
                .find_map(|_| build_subpath(ue_offset, length, &draw_subpath(rng)))
                .ok_or(Error::GeometryInvalid { path: k, subpath: m })?;
            subpaths.push(sp);
        }
        paths.push(Path {
            delay,
            length,
            subpaths,
        });
    }
    Ok(PathGeometry { ue_offset, paths })
}

/// Complex `Nt × Ñc` spatial-frequency channel, row-major by antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFreqCsi {
    nt: usize,
    subcarriers: usize,
    entries: Vec<Complex64>,
}

impl SpatialFreqCsi {
    pub fn zeros(nt: usize, subcarriers: usize) -> Self {
        Self {
            nt,
            subcarriers,
            entries: alloc::vec![Complex64::new(0.0, 0.0); nt * subcarriers],
        }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.entries[antenna * self.subcarriers + subcarrier]
    }

    pub fn set(&mut self, antenna: usize, subcarrier: usize, value: Complex64) {
        self.entries[antenna * self.subcarriers + subcarrier] = value;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Path gain `g_{s,k}` for the element at `offset`.
pub fn path_gain(geom: &PathGeometry, k: usize, offset: Vec3, wavelength: f64) -> Complex64 {
    (0..geom.paths[k].subpaths.len())
        .map(|m| {
            let view = geom.element_subpath(k, m, offset, wavelength);
            let psi0 = geom.paths[k].subpaths[m].initial_phase;
            Complex64::from_polar(1.0, -(psi0 + view.phase))
        })
        .sum()
}

/// Frequency response of one antenna, `Σ_k g_k · exp(−j2π · l/Ñc · B · τ_k)`
/// for `l = 0..subcarriers`.
pub fn frequency_response(gains: &[Complex64], delays: &[f64], bandwidth_hz: f64, subcarriers: usize) -> Vec<Complex64> {
    let mut out = alloc::vec![Complex64::new(0.0, 0.0); subcarriers];
    for (&gain, &tau) in gains.iter().zip(delays) {
        let step = -2.0 * PI * bandwidth_hz * tau / subcarriers as f64;
        for (l, slot) in out.iter_mut().enumerate() {
            *slot += gain * Complex64::from_polar(1.0, step * l as f64);
        }
    }
    out
}

/// Spatial-frequency channel of a geometry: per element, path gains and
/// per-element delays fed through [`frequency_response`].
pub fn synthesize_channel(geom: &PathGeometry, cfg: &ScenarioConfig) -> Result<SpatialFreqCsi> {
    let wavelength = cfg.wavelength();
    let nsc = cfg.num_subcarriers;
    let mut h = SpatialFreqCsi::zeros(cfg.array.len(), nsc);
    for (s, &offset) in cfg.array.offsets().iter().enumerate() {
        let gains: Vec<Complex64> = (0..geom.paths.len())
            .map(|k| path_gain(geom, k, offset, wavelength))
            .collect();
        let delays: Vec<f64> = (0..geom.paths.len())
            .map(|k| geom.element_delay(k, offset))
            .collect();
        let row = frequency_response(&gains, &delays, cfg.bandwidth_hz, nsc);
        h.entries[s * nsc..(s + 1) * nsc].copy_from_slice(&row);
    }
    if h.entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("synthesized channel"));
    }
    Ok(h)
}

/// Sample `index` of the dataset defined by `cfg`: fresh geometry from the
/// derived seed, synthesized channel, truncated angular-delay vector.
pub fn generate_sample(cfg: &ScenarioConfig, index: u64) -> Result<CsiVector> {
    let mut rng = sample_stream(cfg.rng_seed, index);
    let geom = sample_geometry(cfg, &mut rng)?;
    let h = synthesize_channel(&geom, cfg)?;
    to_angular_delay(&h, cfg.num_delay_rows)
}

/// Samples `start..start + count` in index order.
pub fn generate_samples(cfg: &ScenarioConfig, start: u64, count: usize) -> Result<Vec<CsiVector>> {
    if count == 0 {
        return Err(Error::InvalidCount);
    }
    cfg.validate()?;
    (start..start + count as u64).map(|i| generate_sample(cfg, i)).collect()
}
