//! Scan-order serialization of LiDAR point clouds.
//!
//! Points are mapped to spherical coordinates, quantized onto the sensor's
//! (laser, azimuth) grid, and regrouped into one ordered sequence per laser.
//! The permutation back to capture order is recorded so the decoder can undo
//! the reordering exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw frame: geometry in meters plus one integer reflectance symbol per point,
/// both in capture order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub positions: Vec<[f64; 3]>,
    pub reflectance: Vec<u16>,
}

impl PointCloudFrame {
    pub fn new(positions: Vec<[f64; 3]>, reflectance: Vec<u16>) -> Result<Self> {
        if positions.len() != reflectance.len() {
            return Err(Error::validation(format!(
                "positions ({}) and reflectance ({}) lengths differ",
                positions.len(),
                reflectance.len()
            )));
        }
        Ok(PointCloudFrame {
            positions,
            reflectance,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks alphabet membership and geometry finiteness against a sensor config.
    pub fn validate(&self, cfg: &SensorConfig) -> Result<()> {
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite coordinate at point {i}: {p:?}"
                )));
            }
        }
        for (i, &s) in self.reflectance.iter().enumerate() {
            if u32::from(s) >= cfg.alphabet {
                return Err(Error::validation(format!(
                    "reflectance symbol {s} at point {i} outside alphabet [0, {})",
                    cfg.alphabet
                )));
            }
        }
        Ok(())
    }
}

/// Sensor grid parameters. These are codec parameters: encoder and decoder must
/// use the identical grid, so they travel in the bitstream header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Number of laser channels (L).
    pub lasers: u32,
    /// Azimuth bins per full revolution (W).
    pub azimuth_bins: u32,
    /// Upper elevation bound in radians.
    pub phi_up: f64,
    /// Lower elevation bound in radians.
    pub phi_down: f64,
    /// Maximum radial distance in meters, used for normalization.
    pub rho_max: f64,
    /// Reflectance alphabet size (symbols are 0..alphabet).
    pub alphabet: u32,
}

impl SensorConfig {
    /// HDL-64E-like defaults: 64 lasers, 2048 azimuth bins, elevation field of
    /// view [-24.8°, +2.0°], 400 m range, 100-level reflectance.
    pub fn hdl64() -> Self {
        SensorConfig {
            lasers: 64,
            azimuth_bins: 2048,
            phi_up: 0.03491,
            phi_down: -0.43284,
            rho_max: 400.0,
            alphabet: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lasers < 1 || self.lasers > u32::from(u16::MAX) {
            return Err(Error::validation(format!(
                "laser count {} outside [1, 65535]",
                self.lasers
            )));
        }
        if self.azimuth_bins < 1 {
            return Err(Error::validation("azimuth_bins must be at least 1"));
        }
        if !(self.phi_down < self.phi_up) {
            return Err(Error::validation(format!(
                "elevation bounds invalid: phi_down {} must be below phi_up {}",
                self.phi_down, self.phi_up
            )));
        }
        if !(self.rho_max > 0.0) || !self.rho_max.is_finite() {
            return Err(Error::validation(format!("rho_max {} must be positive", self.rho_max)));
        }
        if self.alphabet < 2 || self.alphabet > 1 << 16 {
            return Err(Error::validation(format!(
                "alphabet size {} outside [2, 65536]",
                self.alphabet
            )));
        }
        Ok(())
    }
}

/// Point in sensor-centric spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    /// Radial distance in meters.
    pub rho: f64,
    /// Elevation angle in radians, within [-pi/2, pi/2].
    pub phi: f64,
    /// Azimuth angle in radians, within (-pi, pi].
    pub theta: f64,
}

/// One point in serialized form: the reflectance symbol, its grid indices,
/// radial distance, and where it sat in the capture order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerializedRecord {
    pub symbol: u16,
    /// 1-based laser index (v).
    pub laser: u16,
    /// 1-based azimuth index (u).
    pub azimuth: u32,
    pub rho: f64,
    pub src_index: usize,
}

/// Frame reorganized into per-laser sequences ordered by azimuth index.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedFrame {
    /// One sequence per laser; sequence l holds every record with laser = l+1,
    /// sorted by (azimuth, src_index).
    pub sequences: Vec<Vec<SerializedRecord>>,
    /// Capture index of the k-th record in serialized order (sequences
    /// concatenated). Applying it scatters serialized symbols back to capture
    /// order.
    pub inverse: Vec<usize>,
}

impl SerializedFrame {
    pub fn point_count(&self) -> usize {
        self.inverse.len()
    }
}

/// Converts a Cartesian point to spherical coordinates.
///
/// At the origin both angles are defined as 0 (atan2(0, 0) = 0, and the
/// elevation of a zero-length vector is taken as 0).
pub fn cartesian_to_spherical(p: [f64; 3]) -> Result<SphericalPoint> {
    let [x, y, z] = p;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::validation(format!("non-finite point {p:?}")));
    }
    let rho = (x * x + y * y + z * z).sqrt();
    let phi = if rho == 0.0 {
        0.0
    } else {
        // Guard against |z/rho| drifting past 1 by a rounding ulp.
        (z / rho).clamp(-1.0, 1.0).asin()
    };
    let theta = y.atan2(x);
    Ok(SphericalPoint { rho, phi, theta })
}

/// Maps spherical angles onto the sensor grid, clamping to [1, L] x [1, W].
pub fn quantize_indices(sp: SphericalPoint, cfg: &SensorConfig) -> (u16, u32) {
    let l = cfg.lasers as f64;
    let w = cfg.azimuth_bins as f64;
    let v = (l * (sp.phi - cfg.phi_down) / (cfg.phi_up - cfg.phi_down)).floor() + 1.0;
    let u = (w * (sp.theta / std::f64::consts::TAU + 0.5)).floor() + 1.0;
    let v = (v.max(1.0).min(l)) as u16;
    let u = (u.max(1.0).min(w)) as u32;
    (v, u)
}

/// Reorganizes a frame into per-laser sequences sorted by azimuth index.
///
/// Ties on the azimuth index keep capture order, which gives the decoder a
/// total order it can reproduce from shared geometry. Output is deterministic:
/// identical input yields identical records.
pub fn serialize(frame: &PointCloudFrame, cfg: &SensorConfig) -> Result<SerializedFrame> {
    cfg.validate()?;
    frame.validate(cfg)?;

    let mut sequences: Vec<Vec<SerializedRecord>> = vec![Vec::new(); cfg.lasers as usize];
    for (i, (&p, &s)) in frame.positions.iter().zip(frame.reflectance.iter()).enumerate() {
        let sp = cartesian_to_spherical(p)?;
        let (v, u) = quantize_indices(sp, cfg);
        sequences[usize::from(v) - 1].push(SerializedRecord {
            symbol: s,
            laser: v,
            azimuth: u,
            rho: sp.rho,
            src_index: i,
        });
    }
    let mut inverse = Vec::with_capacity(frame.len());
    for seq in &mut sequences {
        // Stable sort on azimuth preserves capture order among equals.
        seq.sort_by_key(|r| r.azimuth);
        inverse.extend(seq.iter().map(|r| r.src_index));
    }
    Ok(SerializedFrame { sequences, inverse })
}

/// Restores capture order: output[inverse[k]] = k-th serialized symbol.
pub fn deserialize_order(sf: &SerializedFrame) -> Result<Vec<u16>> {
    let n = sf.point_count();
    let symbols: Vec<u16> = sf
        .sequences
        .iter()
        .flat_map(|seq| seq.iter().map(|r| r.symbol))
        .collect();
    if symbols.len() != n {
        return Err(Error::integrity(format!(
            "serialized record count {} does not match permutation length {n}",
            symbols.len()
        )));
    }
    scatter_to_capture_order(&symbols, &sf.inverse)
}

/// Scatters symbols listed in serialized order back to capture order using the
/// recorded permutation, verifying it is a bijection.
pub fn scatter_to_capture_order(symbols: &[u16], inverse: &[usize]) -> Result<Vec<u16>> {
    if symbols.len() != inverse.len() {
        return Err(Error::integrity(format!(
            "symbol count {} does not match permutation length {}",
            symbols.len(),
            inverse.len()
        )));
    }
    let n = symbols.len();
    let mut out = vec![0u16; n];
    let mut seen = vec![false; n];
    for (k, &dst) in inverse.iter().enumerate() {
        if dst >= n {
            return Err(Error::integrity(format!(
                "permutation entry {dst} out of range for {n} points"
            )));
        }
        if seen[dst] {
            return Err(Error::integrity(format!("permutation repeats index {dst}")));
        }
        seen[dst] = true;
        out[dst] = symbols[k];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SensorConfig {
        SensorConfig::hdl64()
    }

    #[test]
    fn spherical_axis_point() {
        let sp = cartesian_to_spherical([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(sp.rho, 1.0);
        assert_eq!(sp.phi, 0.0);
        assert_eq!(sp.theta, 0.0);
    }

    #[test]
    fn spherical_pole() {
        let sp = cartesian_to_spherical([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(sp.rho, 1.0);
        assert!((sp.phi - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(sp.theta, 0.0);
    }

    #[test]
    fn spherical_3_4_0() {
        let sp = cartesian_to_spherical([3.0, 4.0, 0.0]).unwrap();
        assert_eq!(sp.rho, 5.0);
        assert_eq!(sp.phi, 0.0);
        assert!((sp.theta - 0.92729522).abs() < 1e-8);
    }

    #[test]
    fn spherical_origin_is_defined() {
        let sp = cartesian_to_spherical([0.0, 0.0, 0.0]).unwrap();
        assert_eq!((sp.rho, sp.phi, sp.theta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spherical_rejects_non_finite() {
        assert!(matches!(
            cartesian_to_spherical([f64::NAN, 0.0, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            cartesian_to_spherical([0.0, f64::INFINITY, 0.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn quantize_clamps_at_upper_elevation() {
        let c = cfg();
        let sp = SphericalPoint {
            rho: 10.0,
            phi: c.phi_up,
            theta: 0.3,
        };
        let (v, _) = quantize_indices(sp, &c);
        assert_eq!(v, 64);
    }

    #[test]
    fn quantize_elevation_interior() {
        // phi = 0 inside [-0.43284, 0.03491] with 64 lasers lands in bin 60.
        let c = cfg();
        let sp = SphericalPoint {
            rho: 10.0,
            phi: 0.0,
            theta: 0.0,
        };
        let (v, _) = quantize_indices(sp, &c);
        assert_eq!(v, 60);
    }

    #[test]
    fn quantize_azimuth_zero() {
        let c = cfg();
        let sp = SphericalPoint {
            rho: 10.0,
            phi: 0.0,
            theta: 0.0,
        };
        let (_, u) = quantize_indices(sp, &c);
        assert_eq!(u, 1025);
    }

    #[test]
    fn quantize_clamps_below_fov() {
        let c = cfg();
        let sp = SphericalPoint {
            rho: 1.0,
            phi: -1.5,
            theta: 0.0,
        };
        let (v, _) = quantize_indices(sp, &c);
        assert_eq!(v, 1);
    }

    #[test]
    fn serialize_empty_frame() {
        let frame = PointCloudFrame::new(vec![], vec![]).unwrap();
        let sf = serialize(&frame, &cfg()).unwrap();
        assert_eq!(sf.sequences.len(), 64);
        assert!(sf.sequences.iter().all(|s| s.is_empty()));
        assert!(sf.inverse.is_empty());
    }

    /// Places a point at the center of grid cell (v, u) for the test config.
    fn point_at(c: &SensorConfig, v: u16, u: u32, rho: f64) -> [f64; 3] {
        let phi = c.phi_down
            + (f64::from(v) - 0.5) * (c.phi_up - c.phi_down) / f64::from(c.lasers);
        let theta = (f64::from(u) - 0.5) / f64::from(c.azimuth_bins) * std::f64::consts::TAU
            - std::f64::consts::PI;
        [
            rho * phi.cos() * theta.cos(),
            rho * phi.cos() * theta.sin(),
            rho * phi.sin(),
        ]
    }

    #[test]
    fn serialize_sorts_and_breaks_ties_by_capture_order() {
        let c = cfg();
        // Two points on laser 1 with azimuth 7 then 3; two points on laser 2
        // sharing azimuth 5.
        let positions = vec![
            point_at(&c, 1, 7, 10.0),
            point_at(&c, 1, 3, 11.0),
            point_at(&c, 2, 5, 12.0),
            point_at(&c, 2, 5, 13.0),
        ];
        let frame = PointCloudFrame::new(positions, vec![70, 30, 50, 51]).unwrap();
        let sf = serialize(&frame, &c).unwrap();

        let s1: Vec<(u32, u16)> = sf.sequences[0].iter().map(|r| (r.azimuth, r.symbol)).collect();
        assert_eq!(s1, vec![(3, 30), (7, 70)]);
        let s2: Vec<(u32, usize)> = sf.sequences[1]
            .iter()
            .map(|r| (r.azimuth, r.src_index))
            .collect();
        assert_eq!(s2, vec![(5, 2), (5, 3)]);
        for (l, seq) in sf.sequences.iter().enumerate() {
            for r in seq {
                assert_eq!(usize::from(r.laser), l + 1);
            }
        }
    }

    #[test]
    fn serialize_rejects_out_of_alphabet_symbol() {
        let frame = PointCloudFrame::new(vec![[1.0, 0.0, 0.0]], vec![100]).unwrap();
        assert!(matches!(serialize(&frame, &cfg()), Err(Error::Validation(_))));
    }

    #[test]
    fn deserialize_single_point() {
        let frame = PointCloudFrame::new(vec![[1.0, 2.0, 0.5]], vec![42]).unwrap();
        let sf = serialize(&frame, &cfg()).unwrap();
        assert_eq!(deserialize_order(&sf).unwrap(), vec![42]);
    }

    #[test]
    fn deserialize_rejects_repeated_index() {
        let frame = PointCloudFrame::new(
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![1, 2],
        )
        .unwrap();
        let mut sf = serialize(&frame, &cfg()).unwrap();
        sf.inverse = vec![0, 0];
        assert!(matches!(deserialize_order(&sf), Err(Error::Integrity(_))));
    }

    proptest! {
        #[test]
        fn round_trip_restores_reflectance(
            pts in prop::collection::vec(
                ((-50.0f64..50.0), (-50.0f64..50.0), (-20.0f64..20.0), 0u16..100),
                0..200,
            )
        ) {
            let c = cfg();
            let positions: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z, _)| [x, y, z]).collect();
            let reflectance: Vec<u16> = pts.iter().map(|&(_, _, _, s)| s).collect();
            let frame = PointCloudFrame::new(positions, reflectance.clone()).unwrap();
            let sf = serialize(&frame, &c).unwrap();
            prop_assert_eq!(deserialize_order(&sf).unwrap(), reflectance);
        }

        #[test]
        fn sequences_are_ordered_and_clamped(
            pts in prop::collection::vec(
                ((-50.0f64..50.0), (-50.0f64..50.0), (-60.0f64..60.0), 0u16..100),
                0..200,
            )
        ) {
            let c = cfg();
            let positions: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z, _)| [x, y, z]).collect();
            let reflectance: Vec<u16> = pts.iter().map(|&(_, _, _, s)| s).collect();
            let frame = PointCloudFrame::new(positions, reflectance).unwrap();
            let sf = serialize(&frame, &c).unwrap();
            for seq in &sf.sequences {
                for pair in seq.windows(2) {
                    prop_assert!(pair[0].azimuth <= pair[1].azimuth);
                    if pair[0].azimuth == pair[1].azimuth {
                        prop_assert!(pair[0].src_index < pair[1].src_index);
                    }
                }
                for r in seq {
                    prop_assert!(r.laser >= 1 && u32::from(r.laser) <= c.lasers);
                    prop_assert!(r.azimuth >= 1 && r.azimuth <= c.azimuth_bins);
                }
            }
        }

        #[test]
        fn serialize_is_deterministic(
            pts in prop::collection::vec(
                ((-50.0f64..50.0), (-50.0f64..50.0), (-20.0f64..20.0), 0u16..100),
                0..100,
            )
        ) {
            let c = cfg();
            let positions: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z, _)| [x, y, z]).collect();
            let reflectance: Vec<u16> = pts.iter().map(|&(_, _, _, s)| s).collect();
            let frame = PointCloudFrame::new(positions, reflectance).unwrap();
            let a = serialize(&frame, &c).unwrap();
            let b = serialize(&frame, &c).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
