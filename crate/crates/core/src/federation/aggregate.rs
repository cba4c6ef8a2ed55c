use alloc::format;

use crate::federation::Aggregation;
use crate::nn::ModelParams;
use crate::{Error, Result};

/// Mean of `params` (uniform or weighted by `sizes`), accumulated as a
/// running mean in list order so identical inputs come back unchanged.
pub fn aggregate(params: &[ModelParams], sizes: &[usize], mode: Aggregation) -> Result<ModelParams> {
    let first = params
        .first()
        .ok_or_else(|| Error::Protocol("aggregation over zero models".into()))?;
    if sizes.len() != params.len() {
        return Err(Error::Protocol(format!(
            "{} sizes for {} models",
            sizes.len(),
            params.len()
        )));
    }
    let weight = |k: usize| match mode {
        Aggregation::Uniform => 1.0,
        Aggregation::SizeWeighted => sizes[k] as f64,
    };
    if mode == Aggregation::SizeWeighted && sizes.contains(&0) {
        return Err(Error::Protocol("size-weighted aggregation over an empty shard".into()));
    }
    let mut mean = first.clone();
    let mut total = weight(0);
    for (k, p) in params.iter().enumerate().skip(1) {
        mean.check_compatible(p)?;
        let w = weight(k);
        total += w;
        let f = w / total;
        for (m, v) in mean.values.iter_mut().zip(&p.values) {
            *m += f * (v - *m);
        }
    }
    Ok(mean)
}
