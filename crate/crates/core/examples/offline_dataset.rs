//! Sample an offline dataset, round-trip it through CSV and compare the
//! empirical visitation with the sampling distribution.
use offline_vcg::data::{empirical_visitation, sample_dataset, DataDistribution, OfflineDataset};
use offline_vcg::instance::m2_single_agent;

fn main() -> offline_vcg::error::Result<()> {
    let inst = m2_single_agent();
    let dist = DataDistribution::uniform(inst.shape());
    let data = sample_dataset(&inst.mdp, &inst.profile, &dist, 5000, 11)?;
    let mut buf = Vec::new();
    data.write_to(&mut buf)?;
    let back = OfflineDataset::read_from(buf.as_slice())?;
    assert_eq!(back, data);
    println!("{} samples, {} bytes of CSV", data.samples().len(), buf.len());
    let emp = empirical_visitation(&data)?;
    let worst = emp
        .values()
        .iter()
        .zip(dist.measure().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("largest visitation deviation {worst:.4}");
    Ok(())
}
