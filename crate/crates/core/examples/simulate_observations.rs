//! Pixel samples of G∗μ with Gaussian noise scaled to an exact SNR, written
//! as CSV and as raw binary with a JSON sidecar.

use peakforge::forward::{GroundTruth, ObservationSet, Peak};
use peakforge::kernels::{Kernel, Normalization};
use peakforge::mesh::BoxDomain;

fn main() -> peakforge::Result<()> {
    let dom = BoxDomain::unit(2);
    let m = 40;
    let hm = 1.0 / m as f64;
    let kernel = Kernel::mixture(2, 0.2, 2.0 * hm, 2.5 * hm, Normalization::UnitPeak)?;
    let truth = GroundTruth::new(vec![Peak::new([0.3, 0.4], 1.0), Peak::new([0.62, 0.55], 1.5)], &dom)?;
    let obs = ObservationSet::simulate(&truth, &kernel, &dom, m, 40.0, 1)?;
    println!("{} samples, noise scale {:.3e}, achieved SNR {:.4} dB", obs.len(), obs.info.scale, obs.achieved_snr_db());

    let dir = std::env::temp_dir().join("peakforge-simulate");
    std::fs::create_dir_all(&dir).map_err(|e| peakforge::Error::io(&dir, e))?;
    std::fs::write(dir.join("observations.csv"), obs.to_csv()).map_err(|e| peakforge::Error::io(&dir, e))?;
    obs.write_binary(&dir.join("observations.bin"), &dir.join("observations.json"))?;
    let back = ObservationSet::read_binary(&dir.join("observations.bin"), &dir.join("observations.json"))?;
    assert_eq!(back.values, obs.values);
    println!("wrote {}", dir.display());
    Ok(())
}
