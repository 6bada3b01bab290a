//! MLE, MSE and earth mover's distance between a true and an estimated peak
//! set, in both EMD mass conventions.

use peakforge::forward::{GroundTruth, Peak};
use peakforge::mesh::BoxDomain;
use peakforge::metrics::{compare, earth_mover_distance, MassMode};
use peakforge::recovery::RecoveredPeak;

fn main() -> peakforge::Result<()> {
    let truth = GroundTruth::new(
        vec![Peak::new([0.2, 0.2], 1.0), Peak::new([0.5, 0.7], 2.0), Peak::new([0.8, 0.3], 1.0)],
        &BoxDomain::unit(2),
    )?;
    // the two right-hand peaks merged into one estimate
    let estimate: Vec<RecoveredPeak> = [([0.21, 0.2], 0.95), ([0.62, 0.55], 2.8)]
        .into_iter()
        .enumerate()
        .map(|(i, (loc, amp))| RecoveredPeak {
            location: loc.to_vec(),
            amplitude: amp,
            cluster_id: i,
            support_size: 3,
            sign: 1,
        })
        .collect();
    let c = compare(&truth, &estimate, MassMode::UnitNormalized);
    println!("MLE {:.4}  MSE {:.4}  EMD {:.4}  matching {:?}", c.mle, c.mse, c.emd, c.matching);
    println!("amplitude-weighted EMD {:.4}", earth_mover_distance(&truth, &estimate, MassMode::AmplitudeWeighted));
    Ok(())
}
