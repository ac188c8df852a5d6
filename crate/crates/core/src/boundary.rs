//! Crypto/clear boundary search and noise calibration.
//!
//! Phase 1 walks back from the second-to-last evaluation point while the
//! attack fails; the point after the first success is the candidate.
//! Phase 2 walks forward from the candidate until noised accuracy reaches
//! `delta`. The attack and accuracy are injected as closures.

use serde::{Deserialize, Serialize};

use crate::artifact::SCHEMA_VERSION;
use crate::attacks::{run_attack, AttackCache, AttackConfig, AttackKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::noised_accuracy;
use crate::model::{EvalPoint, Network};
use crate::tensor::Tensor;

/// Default distance of `delta` below clean accuracy.
pub const DEFAULT_ACCURACY_DROP: f64 = 0.025;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub sigma: f64,
    pub delta: f64,
    pub lambda: f64,
    /// Measure phase-2 accuracy with the noise one point after the
    /// candidate instead of at the candidate itself.
    #[serde(default)]
    pub noise_after_candidate: bool,
}

impl SearchConfig {
    pub fn new(sigma: f64, delta: f64, lambda: f64) -> Self {
        SearchConfig {
            sigma,
            delta,
            lambda,
            noise_after_candidate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::Config(format!(
                "sigma must be in (0, 1], got {}",
                self.sigma
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub schema: u32,
    pub boundary: EvalPoint,
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    /// Phase 1, in visiting order (deepest first).
    pub ssim_trace: Vec<(EvalPoint, f64)>,
    /// Phase 2, in visiting order.
    pub accuracy_trace: Vec<(EvalPoint, f64)>,
    /// The attack failed at every point, so the boundary fell back to the
    /// first point.
    pub degenerate: bool,
    pub noise_after_candidate: bool,
}

/// Runs both phases over `points` (ordered, shallow to deep).
pub fn search_boundary<I, A>(
    points: &[EvalPoint],
    mut idpa: I,
    mut accuracy: A,
    config: &SearchConfig,
) -> Result<BoundaryResult>
where
    I: FnMut(EvalPoint) -> Result<f64>,
    A: FnMut(EvalPoint, f64) -> Result<f64>,
{
    config.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "boundary search needs at least one eval point".into(),
        ));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "eval points must be strictly increasing".into(),
        ));
    }
    let n = points.len();
    let mut ssim_trace = Vec::new();
    let mut i = n.saturating_sub(2);
    let mut degenerate = false;
    let candidate = loop {
        let s = idpa(points[i])?;
        ssim_trace.push((points[i], s));
        if s >= config.sigma {
            break (i + 1).min(n - 1);
        }
        if i == 0 {
            degenerate = true;
            break 0;
        }
        i -= 1;
    };

    let mut accuracy_trace = Vec::new();
    let mut j = candidate;
    loop {
        let at = if config.noise_after_candidate {
            (j + 1).min(n - 1)
        } else {
            j
        };
        let a = accuracy(points[at], config.lambda)?;
        accuracy_trace.push((points[j], a));
        if a >= config.delta {
            break;
        }
        if j + 1 == n {
            return Err(Error::NoBoundary {
                delta: config.delta,
            });
        }
        j += 1;
    }
    Ok(BoundaryResult {
        schema: SCHEMA_VERSION,
        boundary: points[j],
        lambda: config.lambda,
        sigma: config.sigma,
        delta: config.delta,
        ssim_trace,
        accuracy_trace,
        degenerate,
        noise_after_candidate: config.noise_after_candidate,
    })
}

/// `lo:hi:step` as an inclusive grid, e.g. `0:0.5:0.05` has 11 values.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("invalid grid {s:?}; expected lo:hi:step"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub lambda: f64,
    pub delta: f64,
    pub trace: Vec<(f64, f64)>,
}

/// The largest grid value whose accuracy still reaches `delta`.
pub fn calibrate_noise<A>(grid: &[f64], delta: f64, mut accuracy: A) -> Result<NoiseCalibration>
where
    A: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise grid must be non-empty, >= 0 and ascending, got {grid:?}"
        )));
    }
    let mut trace = Vec::with_capacity(grid.len());
    for &l in grid {
        trace.push((l, accuracy(l)?));
    }
    match trace.iter().rev().find(|(_, a)| *a >= delta) {
        Some(&(lambda, _)) => Ok(NoiseCalibration {
            lambda,
            delta,
            trace,
        }),
        None => Err(Error::Calibration {
            accuracy: trace[0].1,
            delta,
        }),
    }
}

/// What a full search on a real model needs besides the model.
#[derive(Clone, Debug)]
pub struct SearchData<'a> {
    /// The server's own images for training inversion models.
    pub attacker: &'a Dataset,
    /// Images whose recovery is scored.
    pub victims: &'a Tensor,
    /// Labelled data for noised accuracy.
    pub eval: &'a Dataset,
    pub accuracy_trials: usize,
    pub accuracy_seed: u64,
}

/// Search on `network` with a real attack and noised accuracy.
pub fn search_network(
    network: &Network,
    kind: AttackKind,
    attack: &AttackConfig,
    config: &SearchConfig,
    data: &SearchData<'_>,
    cache: Option<&AttackCache>,
) -> Result<BoundaryResult> {
    let points = network.spec.eval_points()?;
    search_boundary(
        &points,
        |p| {
            Ok(
                run_attack(kind, network, p, data.attacker, data.victims, attack, cache)?
                    .report
                    .avg_ssim,
            )
        },
        |p, l| {
            noised_accuracy(
                network,
                p,
                l,
                data.eval,
                data.accuracy_trials,
                data.accuracy_seed,
            )
        },
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Vec<EvalPoint> {
        ["1", "1.5", "2", "2.5", "3", "3.5"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    fn lookup(table: &[(&str, f64)], p: EvalPoint) -> f64 {
        table
            .iter()
            .find(|(k, _)| k.parse::<EvalPoint>().unwrap() == p)
            .map(|x| x.1)
            .unwrap_or(0.0)
    }

    #[test]
    fn hand_traced_examples() {
        let ssim = [("3", 0.10), ("2.5", 0.15), ("2", 0.25), ("1.5", 0.35)];
        let cfg = SearchConfig::new(0.3, 0.88, 0.1);
        let r = search_boundary(
            &pts(),
            |p| Ok(lookup(&ssim, p)),
            |p, _| Ok(if p.to_string() == "2" { 0.90 } else { 0.0 }),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.boundary.to_string(), "2");
        assert_eq!(r.ssim_trace.len(), 4);

        let acc = [("2", 0.80), ("2.5", 0.91)];
        let r = search_boundary(
            &pts(),
            |p| Ok(lookup(&ssim, p)),
            |p, _| Ok(lookup(&acc, p)),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.boundary.to_string(), "2.5");
        assert_eq!(r.accuracy_trace.len(), 2);
    }

    #[test]
    fn always_succeeding_attack_gives_last_point() {
        let r = search_boundary(
            &pts(),
            |_| Ok(0.9),
            |_, _| Ok(1.0),
            &SearchConfig::new(0.3, 0.5, 0.0),
        )
        .unwrap();
        assert_eq!(r.boundary.to_string(), "3.5");
        assert_eq!(r.ssim_trace.len(), 1);
        assert!(!r.degenerate);
    }

    #[test]
    fn never_succeeding_attack_is_degenerate() {
        let r = search_boundary(
            &pts(),
            |_| Ok(0.0),
            |_, _| Ok(1.0),
            &SearchConfig::new(0.3, 0.5, 0.0),
        )
        .unwrap();
        assert_eq!(r.boundary.to_string(), "1");
        assert!(r.degenerate);
        assert_eq!(r.ssim_trace.len(), 5);
    }

    #[test]
    fn unreachable_accuracy_is_an_error() {
        let err = search_boundary(
            &pts(),
            |_| Ok(0.9),
            |_, _| Ok(0.1),
            &SearchConfig::new(0.3, 0.5, 0.0),
        )
        .unwrap_err();
        assert!(
            err.to_string()
                .contains("no boundary satisfies accuracy threshold"),
            "{err}"
        );
    }

    #[test]
    fn noise_after_candidate_shifts_the_accuracy_probe() {
        let ssim = [("2", 0.5)];
        let mut cfg = SearchConfig::new(0.3, 0.5, 0.1);
        cfg.noise_after_candidate = true;
        let mut probed = Vec::new();
        let r = search_boundary(
            &pts(),
            |p| Ok(lookup(&ssim, p)),
            |p, _| {
                probed.push(p.to_string());
                Ok(1.0)
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(r.boundary.to_string(), "2.5");
        assert_eq!(probed, ["3"]);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:0.5:0.05").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[2], 0.1);
        assert_eq!(g[10], 0.5);
        assert!(parse_grid("0:0.5").is_err());
        assert!(parse_grid("0:0.5:0").is_err());
    }

    #[test]
    fn calibration_picks_largest_passing() {
        let accs = [(0.0, 0.92), (0.1, 0.91), (0.2, 0.86)];
        let f = |l: f64| Ok(accs.iter().find(|(k, _)| *k == l).unwrap().1);
        assert_eq!(
            calibrate_noise(&[0.0, 0.1, 0.2], 0.90, f).unwrap().lambda,
            0.1
        );
        assert_eq!(
            calibrate_noise(&parse_grid("0:0.5:0.05").unwrap(), 0.5, |_| Ok(1.0))
                .unwrap()
                .lambda,
            0.5
        );
        assert!(matches!(
            calibrate_noise(&[0.0, 0.1], 0.95, |_| Ok(0.9)),
            Err(Error::Calibration { .. })
        ));
    }
}
