use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::Network;

pub const HISTOGRAM_BINS: usize = 64;

/// Counts of `values` in 64 equal bins over `[−1, 1]`; bin `k` covers
/// `[−1 + k/32, −1 + (k+1)/32)` and the last bin also holds `1`. Values
/// outside the range land in the end bins.
pub fn histogram(values: &[f32]) -> [u64; HISTOGRAM_BINS] {
    let mut bins = [0u64; HISTOGRAM_BINS];
    for &v in values {
        let pos = ((v as f64 + 1.0) * 0.5 * HISTOGRAM_BINS as f64).floor();
        let k = if pos.is_nan() { HISTOGRAM_BINS / 2 } else { pos.clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize };
        bins[k] += 1;
    }
    bins
}

/// `bin_low,bin_high,count` rows.
pub fn histogram_csv(bins: &[u64; HISTOGRAM_BINS]) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    let width = 2.0 / HISTOGRAM_BINS as f64;
    for (k, &c) in bins.iter().enumerate() {
        let lo = -1.0 + k as f64 * width;
        writeln!(s, "{lo:.6},{:.6},{c}", lo + width).unwrap();
    }
    s
}

/// Histogram of the real-valued weights of layer `layer`.
pub fn weight_histogram(net: &Network<f32>, layer: usize) -> Result<[u64; HISTOGRAM_BINS]> {
    let l = net
        .layers()
        .get(layer)
        .ok_or_else(|| Error::Argument(format!("layer {layer} does not exist ({} layers)", net.layers().len())))?;
    let w = l
        .weight()
        .ok_or_else(|| Error::Argument(format!("layer {layer} ({}) has no weights", l.name())))?;
    Ok(histogram(w.data()))
}
