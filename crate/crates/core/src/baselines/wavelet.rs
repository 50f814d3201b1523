use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveletFamily {
    Haar,
    /// Daubechies with 4 vanishing moments (8 taps).
    #[serde(rename = "daubechies-4")]
    Daubechies4,
    /// Daubechies with 8 vanishing moments (16 taps).
    #[serde(rename = "daubechies-8")]
    Daubechies8,
    #[serde(rename = "symlet-8")]
    Symlet8,
}

impl WaveletFamily {
    pub const ALL: [WaveletFamily; 4] =
        [WaveletFamily::Haar, WaveletFamily::Daubechies4, WaveletFamily::Daubechies8, WaveletFamily::Symlet8];

    /// Reconstruction low-pass filter.
    fn rec_lo(self) -> &'static [f64] {
        match self {
            WaveletFamily::Haar => &[FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            WaveletFamily::Daubechies4 => &[
                0.2303778133088965,
                0.7148465705529157,
                0.6308807679298589,
                -0.027983769416859854,
                -0.18703481171909309,
                0.030841381835560764,
                0.0328830116668852,
                -0.010597401785069032,
            ],
            WaveletFamily::Daubechies8 => &[
                0.05441584224310401,
                0.31287159091429995,
                0.6756307362972898,
                0.5853546836542067,
                -0.015829105256349306,
                -0.2840155429615469,
                0.0004724845739132828,
                0.12874742662047847,
                -0.017369301001807547,
                -0.044088253930794755,
                0.013981027917398282,
                0.008746094047405777,
                -0.004870352993451574,
                -0.00039174037337694705,
                0.0006754494064505693,
                -0.00011747678412476953,
            ],
            WaveletFamily::Symlet8 => &[
                0.0018899503327594609,
                -0.0003029205147213668,
                -0.01495225833704823,
                0.003808752013890615,
                0.049137179673607506,
                -0.027219029917056003,
                -0.05194583810770904,
                0.3644418948353314,
                0.7771857517005235,
                0.4813596512583722,
                -0.061273359067658524,
                -0.1432942383508097,
                0.007607487324917605,
                0.03169508781149298,
                -0.0005421323317911481,
                -0.0033824159510061256,
            ],
        }
    }
}

struct FilterBank {
    dec_lo: Vec<f64>,
    dec_hi: Vec<f64>,
    rec_lo: Vec<f64>,
    rec_hi: Vec<f64>,
}

impl FilterBank {
    fn new(family: WaveletFamily) -> Self {
        let rec_lo = family.rec_lo().to_vec();
        let dec_lo: Vec<f64> = rec_lo.iter().rev().copied().collect();
        let rec_hi: Vec<f64> = dec_lo.iter().enumerate().map(|(j, v)| if j % 2 == 0 { *v } else { -v }).collect();
        let dec_hi = rec_hi.iter().rev().copied().collect();
        FilterBank { dec_lo, dec_hi, rec_lo, rec_hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdStrategy {
    SoftUniversal,
    HardUniversal,
}

/// Half-sample symmetric extension: x[-1] = x[0], x[n] = x[n-1].
fn sym(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    let p = 2 * n;
    let i = i.rem_euclid(p);
    x[if i < n { i } else { p - 1 - i } as usize]
}

fn dwt(x: &[f64], fb: &FilterBank) -> (Vec<f64>, Vec<f64>) {
    let f = fb.dec_lo.len();
    let out = (x.len() + f - 1) / 2;
    let mut a = Vec::with_capacity(out);
    let mut d = Vec::with_capacity(out);
    for k in 0..out {
        let (mut sa, mut sd) = (0.0, 0.0);
        for j in 0..f {
            let v = sym(x, (2 * k + 1) as isize - j as isize);
            sa += fb.dec_lo[j] * v;
            sd += fb.dec_hi[j] * v;
        }
        a.push(sa);
        d.push(sd);
    }
    (a, d)
}

fn idwt(a: &[f64], d: &[f64], fb: &FilterBank) -> Vec<f64> {
    let f = fb.rec_lo.len();
    let n = a.len();
    let len = 2 * n + 2 - f;
    (0..len)
        .map(|i| {
            let mut s = 0.0;
            for k in 0..n {
                let j = i as isize + f as isize - 2 - 2 * k as isize;
                if (0..f as isize).contains(&j) {
                    s += a[k] * fb.rec_lo[j as usize] + d[k] * fb.rec_hi[j as usize];
                }
            }
            s
        })
        .collect()
}

/// Multilevel decomposition: `(approximation, details)` with details ordered
/// from the finest level outward.
fn wavedec(x: &[f64], fb: &FilterBank, level: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = x.to_vec();
    let mut details = Vec::with_capacity(level);
    for _ in 0..level {
        let (na, d) = dwt(&a, fb);
        details.push(d);
        a = na;
    }
    (a, details)
}

fn waverec(mut a: Vec<f64>, details: &[Vec<f64>], fb: &FilterBank, len: usize) -> Vec<f64> {
    for d in details.iter().rev() {
        if a.len() == d.len() + 1 {
            a.pop();
        }
        a = idwt(&a, d, fb);
    }
    a.truncate(len);
    a
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check(len: usize, level: usize) -> Result<()> {
    if len < 2 {
        return Err(Error::data("spectrum too short for a wavelet transform"));
    }
    let max = usize::BITS as usize - 1 - len.leading_zeros() as usize;
    if level == 0 || level > max {
        return Err(Error::param(format!("wavelet level must lie in 1..={max} for length {len}")));
    }
    Ok(())
}

/// Decompose and reconstruct without modification.
pub fn wavelet_roundtrip(x: &[f64], family: WaveletFamily, level: usize) -> Result<Vec<f64>> {
    check(x.len(), level)?;
    let fb = FilterBank::new(family);
    let (a, d) = wavedec(x, &fb, level);
    Ok(waverec(a, &d, &fb, x.len()))
}

/// Universal-threshold wavelet shrinkage of all detail bands.
pub fn wavelet_denoise(x: &[f64], family: WaveletFamily, level: usize, strategy: ThresholdStrategy) -> Result<Vec<f64>> {
    check(x.len(), level)?;
    let fb = FilterBank::new(family);
    let (a, mut details) = wavedec(x, &fb, level);
    let mut finest: Vec<f64> = details[0].iter().map(|v| v.abs()).collect();
    let sigma = median(&mut finest) / 0.6745;
    let thr = sigma * (2.0 * (x.len() as f64).ln()).sqrt();
    for band in &mut details {
        for c in band.iter_mut() {
            *c = match strategy {
                ThresholdStrategy::HardUniversal => {
                    if c.abs() > thr {
                        *c
                    } else {
                        0.0
                    }
                }
                ThresholdStrategy::SoftUniversal => c.signum() * (c.abs() - thr).max(0.0),
            };
        }
    }
    Ok(waverec(a, &details, &fb, x.len()))
}
