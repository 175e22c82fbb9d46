//! Scale-invariant SDR and per-pair evaluation reports.

use crate::audio::Waveform;

/// Infinite values (perfect reconstruction) serialize as +/-100 dB.
pub const DB_CAP: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("reference has no energy after mean removal")]
    SilentReference,
    #[error("no overlapping samples between reference and estimate")]
    EmptyOverlap,
}

/// SI-SDR in dB: both signals are mean-removed and truncated to the common
/// length; the estimate is projected onto the reference and the energy ratio
/// of projection to residual is returned. A residual below 1e-12 of the
/// projection energy yields +inf.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64, MetricsError> {
    let n = reference.samples.len().min(estimate.samples.len());
    if n == 0 {
        return Err(MetricsError::EmptyOverlap);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let s_mean = mean(&reference.samples[..n]);
    let e_mean = mean(&estimate.samples[..n]);

    let (mut ss, mut es, mut _ee) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        let s = reference.samples[k] - s_mean;
        let e = estimate.samples[k] - e_mean;
        ss += s * s;
        es += e * s;
        _ee += e * e;
    }
    if ss <= 0.0 {
        return Err(MetricsError::SilentReference);
    }
    let alpha = es / ss;
    let target_energy = alpha * alpha * ss;
    let mut resid_energy = 0.0;
    for k in 0..n {
        let s = reference.samples[k] - s_mean;
        let e = estimate.samples[k] - e_mean;
        let r = e - alpha * s;
        resid_energy += r * r;
    }
    if resid_energy < 1e-12 * target_energy {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target_energy / resid_energy).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub si_sdr_est: f64,
    pub si_sdr_mix: f64,
    /// Always exactly si_sdr_est - si_sdr_mix.
    pub improvement: f64,
    pub duration_s: f64,
}

pub fn capped_db(v: f64) -> f64 {
    v.clamp(-DB_CAP, DB_CAP)
}

impl EvalReport {
    /// JSON view with the +/-100 dB cap applied to each field separately.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "si_sdr_est": capped_db(self.si_sdr_est),
            "si_sdr_mix": capped_db(self.si_sdr_mix),
            "improvement": capped_db(self.improvement),
            "duration_s": self.duration_s,
        })
    }
}

pub fn evaluate_pair(
    reference: &Waveform,
    estimate: &Waveform,
    mixture: &Waveform,
) -> Result<EvalReport, MetricsError> {
    let si_sdr_est = si_sdr(reference, estimate)?;
    let si_sdr_mix = si_sdr(reference, mixture)?;
    let n = reference
        .samples
        .len()
        .min(estimate.samples.len())
        .min(mixture.samples.len());
    Ok(EvalReport {
        si_sdr_est,
        si_sdr_mix,
        improvement: si_sdr_est - si_sdr_mix,
        duration_s: n as f64 / reference.sample_rate as f64,
    })
}

/// Mean and median of capped improvements and estimate scores.
pub fn aggregate(reports: &[EvalReport]) -> serde_json::Value {
    let stats = |take: &dyn Fn(&EvalReport) -> f64| {
        let mut vals: Vec<f64> = reports.iter().map(|r| capped_db(take(r))).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        let median = if vals.is_empty() {
            0.0
        } else if vals.len() % 2 == 1 {
            vals[vals.len() / 2]
        } else {
            0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
        };
        (mean, median)
    };
    let (imp_mean, imp_median) = stats(&|r| r.improvement);
    let (est_mean, est_median) = stats(&|r| r.si_sdr_est);
    serde_json::json!({
        "count": reports.len(),
        "improvement": {"mean": imp_mean, "median": imp_median},
        "si_sdr_est": {"mean": est_mean, "median": est_median},
    })
}
