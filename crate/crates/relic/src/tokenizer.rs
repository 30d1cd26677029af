//! Context token construction.
//!
//! Each serialized point is tokenized as the concatenation of four slices:
//! laser-index embedding, azimuth-index embedding, an affine lift of the
//! normalized radial distance, and the embedding of the previous point's
//! reflectance symbol. The first position of a window has no previous symbol
//! and uses a learned start vector instead.

use crate::error::{Error, Result};
use crate::geom::{SensorConfig, SerializedRecord};
use crate::mat::Mat;

/// Learned tables feeding the token slices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerParams {
    /// One row per laser, dim dv.
    pub embed_laser: Mat,
    /// One row per azimuth bin, dim du.
    pub embed_azimuth: Mat,
    /// Affine map of the normalized distance: weight and bias, each dim dr.
    pub rho_weight: Mat,
    pub rho_bias: Mat,
    /// One row per reflectance symbol, dim dp.
    pub embed_symbol: Mat,
    /// Stand-in for the unavailable previous symbol at a window head, dim dp.
    pub start_token: Mat,
}

impl TokenizerParams {
    pub fn zeros(cfg: &SensorConfig, split: [usize; 4]) -> Self {
        let [dv, du, dr, dp] = split;
        TokenizerParams {
            embed_laser: Mat::zeros(cfg.lasers as usize, dv),
            embed_azimuth: Mat::zeros(cfg.azimuth_bins as usize, du),
            rho_weight: Mat::zeros(1, dr),
            rho_bias: Mat::zeros(1, dr),
            embed_symbol: Mat::zeros(cfg.alphabet as usize, dp),
            start_token: Mat::zeros(1, dp),
        }
    }

    pub fn split(&self) -> [usize; 4] {
        [
            self.embed_laser.cols,
            self.embed_azimuth.cols,
            self.rho_weight.cols,
            self.embed_symbol.cols,
        ]
    }

    pub fn token_dim(&self) -> usize {
        self.split().iter().sum()
    }
}

/// Ablation mask: a flagged slice is removed from the token. The positional
/// and radial slices are zeroed; the previous-symbol slice falls back to the
/// start token, the model's trained representation of "no prior symbol".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContextMask {
    pub pos: bool,
    pub rho: bool,
    pub prev: bool,
}

impl ContextMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn any(&self) -> bool {
        self.pos || self.rho || self.prev
    }
}

/// Clamped min-max normalization of the radial distance to [0, 1].
pub fn normalize_radial(rho: f64, cfg: &SensorConfig) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::validation(format!("radial distance {rho} is negative")));
    }
    Ok(rho.min(cfg.rho_max) / cfg.rho_max)
}

/// Writes the token for one record into `out`. `prev` is the previous point's
/// symbol within the window, or None at the window head.
pub fn token_row(
    rec: &SerializedRecord,
    prev: Option<u16>,
    params: &TokenizerParams,
    cfg: &SensorConfig,
    mask: ContextMask,
    out: &mut [f64],
) -> Result<()> {
    let [dv, du, dr, dp] = params.split();
    debug_assert_eq!(out.len(), dv + du + dr + dp);

    let laser = usize::from(rec.laser);
    if laser < 1 || laser > params.embed_laser.rows {
        return Err(Error::integrity(format!(
            "laser index {laser} outside embedding table of {} rows",
            params.embed_laser.rows
        )));
    }
    let azimuth = rec.azimuth as usize;
    if azimuth < 1 || azimuth > params.embed_azimuth.rows {
        return Err(Error::integrity(format!(
            "azimuth index {azimuth} outside embedding table of {} rows",
            params.embed_azimuth.rows
        )));
    }

    let (pos_slice, rest) = out.split_at_mut(dv + du);
    let (rho_slice, prev_slice) = rest.split_at_mut(dr);

    if mask.pos {
        pos_slice.fill(0.0);
    } else {
        pos_slice[..dv].copy_from_slice(params.embed_laser.row(laser - 1));
        pos_slice[dv..].copy_from_slice(params.embed_azimuth.row(azimuth - 1));
    }

    if mask.rho {
        rho_slice.fill(0.0);
    } else {
        let norm = normalize_radial(rec.rho, cfg)?;
        let w = params.rho_weight.row(0);
        let b = params.rho_bias.row(0);
        for i in 0..dr {
            rho_slice[i] = w[i] * norm + b[i];
        }
    }

    let prev = if mask.prev { None } else { prev };
    match prev {
        Some(s) => {
            let s = usize::from(s);
            if s >= params.embed_symbol.rows {
                return Err(Error::integrity(format!(
                    "previous symbol {s} outside embedding table of {} rows",
                    params.embed_symbol.rows
                )));
            }
            prev_slice.copy_from_slice(params.embed_symbol.row(s));
        }
        None => prev_slice.copy_from_slice(params.start_token.row(0)),
    }
    Ok(())
}

/// Builds the token matrix for a window. `prevs[i]` is the symbol of point
/// i-1 for i >= 1; `prevs[0]` is ignored because the head position always
/// uses the start token. Token i never reads symbol i or later.
pub fn build_tokens(
    records: &[SerializedRecord],
    prevs: &[u16],
    params: &TokenizerParams,
    cfg: &SensorConfig,
    mask: ContextMask,
) -> Result<Mat> {
    if prevs.len() != records.len() {
        return Err(Error::validation(format!(
            "prev-symbol list length {} does not match window length {}",
            prevs.len(),
            records.len()
        )));
    }
    let d = params.token_dim();
    let mut tokens = Mat::zeros(records.len(), d);
    for (i, rec) in records.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(prevs[i]) };
        token_row(rec, prev, params, cfg, mask, tokens.row_mut(i))?;
    }
    Ok(tokens)
}

/// Teacher-forced variant: previous symbols are taken from the records
/// themselves, as the encoder does.
pub fn build_tokens_teacher(
    records: &[SerializedRecord],
    params: &TokenizerParams,
    cfg: &SensorConfig,
    mask: ContextMask,
) -> Result<Mat> {
    // prevs[i] = records[i-1].symbol for i >= 1; prevs[0] is unused.
    let mut prevs = Vec::with_capacity(records.len());
    if !records.is_empty() {
        prevs.push(0);
        prevs.extend(records[..records.len() - 1].iter().map(|r| r.symbol));
    }
    build_tokens(records, &prevs, params, cfg, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SensorConfig {
        SensorConfig {
            lasers: 2,
            azimuth_bins: 4,
            phi_up: 0.1,
            phi_down: -0.4,
            rho_max: 400.0,
            alphabet: 3,
        }
    }

    fn rec(laser: u16, azimuth: u32, rho: f64, symbol: u16, src: usize) -> SerializedRecord {
        SerializedRecord {
            symbol,
            laser,
            azimuth,
            rho,
            src_index: src,
        }
    }

    /// Tables with recognizable values, two dims per slice.
    fn toy_params(cfg: &SensorConfig) -> TokenizerParams {
        let mut p = TokenizerParams::zeros(cfg, [2, 2, 2, 2]);
        for l in 0..2 {
            for c in 0..2 {
                *p.embed_laser.at_mut(l, c) = 10.0 + (l * 2 + c) as f64;
            }
        }
        for u in 0..4 {
            for c in 0..2 {
                *p.embed_azimuth.at_mut(u, c) = 20.0 + (u * 2 + c) as f64;
            }
        }
        p.rho_weight.row_mut(0).copy_from_slice(&[2.0, -1.0]);
        p.rho_bias.row_mut(0).copy_from_slice(&[0.5, 0.25]);
        for s in 0..3 {
            for c in 0..2 {
                *p.embed_symbol.at_mut(s, c) = 30.0 + (s * 2 + c) as f64;
            }
        }
        p.start_token.row_mut(0).copy_from_slice(&[-7.0, -8.0]);
        p
    }

    #[test]
    fn normalize_bounds() {
        let cfg = small_cfg();
        assert_eq!(normalize_radial(0.0, &cfg).unwrap(), 0.0);
        assert_eq!(normalize_radial(400.0, &cfg).unwrap(), 1.0);
        assert_eq!(normalize_radial(100.0, &cfg).unwrap(), 0.25);
        assert_eq!(normalize_radial(500.0, &cfg).unwrap(), 1.0);
        assert!(normalize_radial(-1.0, &cfg).is_err());
    }

    #[test]
    fn single_row_ends_with_start_token() {
        let cfg = small_cfg();
        let p = toy_params(&cfg);
        let records = [rec(1, 1, 100.0, 2, 0)];
        let t = build_tokens(&records, &[0], &p, &cfg, ContextMask::none()).unwrap();
        assert_eq!(t.rows, 1);
        assert_eq!(t.cols, 8);
        assert_eq!(&t.row(0)[6..], &[-7.0, -8.0]);
    }

    #[test]
    fn zero_params_leave_only_rho_bias() {
        let cfg = small_cfg();
        let mut p = TokenizerParams::zeros(&cfg, [2, 2, 2, 2]);
        p.rho_bias.row_mut(0).copy_from_slice(&[1.5, -2.5]);
        let records = [rec(1, 2, 50.0, 0, 0), rec(2, 3, 60.0, 1, 1)];
        let t = build_tokens_teacher(&records, &p, &cfg, ContextMask::none()).unwrap();
        for i in 0..2 {
            assert_eq!(t.row(i), &[0.0, 0.0, 0.0, 0.0, 1.5, -2.5, 0.0, 0.0]);
        }
    }

    #[test]
    fn rows_match_hand_concatenation() {
        let cfg = small_cfg();
        let p = toy_params(&cfg);
        let records = [
            rec(1, 1, 100.0, 2, 0),
            rec(2, 3, 200.0, 0, 1),
            rec(1, 4, 400.0, 1, 2),
        ];
        let t = build_tokens_teacher(&records, &p, &cfg, ContextMask::none()).unwrap();
        // row 0: laser 1, azimuth 1, norm 0.25, start token
        assert_eq!(
            t.row(0),
            &[10.0, 11.0, 20.0, 21.0, 2.0 * 0.25 + 0.5, -0.25 + 0.25, -7.0, -8.0]
        );
        // row 1: laser 2, azimuth 3, norm 0.5, prev symbol 2
        assert_eq!(
            t.row(1),
            &[12.0, 13.0, 24.0, 25.0, 1.0 + 0.5, -0.5 + 0.25, 34.0, 35.0]
        );
        // row 2: laser 1, azimuth 4, norm 1.0, prev symbol 0
        assert_eq!(
            t.row(2),
            &[10.0, 11.0, 26.0, 27.0, 2.5, -0.75, 30.0, 31.0]
        );
    }

    #[test]
    fn out_of_range_indices_are_integrity_errors() {
        let cfg = small_cfg();
        let p = toy_params(&cfg);
        let bad_laser = [rec(3, 1, 1.0, 0, 0)];
        assert!(matches!(
            build_tokens_teacher(&bad_laser, &p, &cfg, ContextMask::none()),
            Err(Error::Integrity(_))
        ));
        let bad_prev = [rec(1, 1, 1.0, 0, 0), rec(1, 2, 1.0, 0, 1)];
        let res = build_tokens(&bad_prev, &[0, 9], &p, &cfg, ContextMask::none());
        assert!(matches!(res, Err(Error::Integrity(_))));
    }

    #[test]
    fn changing_a_symbol_leaves_earlier_tokens_unchanged() {
        let cfg = small_cfg();
        let p = toy_params(&cfg);
        let mut records: Vec<SerializedRecord> = (0..6)
            .map(|i| rec(1 + (i % 2) as u16, 1 + (i % 4) as u32, 10.0 * (i + 1) as f64, (i % 3) as u16, i))
            .collect();
        let base = build_tokens_teacher(&records, &p, &cfg, ContextMask::none()).unwrap();
        let j = 3;
        records[j].symbol = (records[j].symbol + 1) % 3;
        let changed = build_tokens_teacher(&records, &p, &cfg, ContextMask::none()).unwrap();
        for i in 0..=j {
            assert_eq!(base.row(i), changed.row(i), "row {i} moved");
        }
        assert_ne!(base.row(j + 1), changed.row(j + 1));
    }

    #[test]
    fn masks_remove_their_slices() {
        let cfg = small_cfg();
        let p = toy_params(&cfg);
        let records = [rec(1, 1, 100.0, 2, 0), rec(2, 3, 200.0, 0, 1)];
        let t = build_tokens_teacher(
            &records,
            &p,
            &cfg,
            ContextMask {
                pos: true,
                rho: true,
                prev: true,
            },
        )
        .unwrap();
        for i in 0..2 {
            assert_eq!(&t.row(i)[..6], &[0.0; 6]);
            // prev slice falls back to the start token under the mask
            assert_eq!(&t.row(i)[6..], &[-7.0, -8.0]);
        }
    }
}
