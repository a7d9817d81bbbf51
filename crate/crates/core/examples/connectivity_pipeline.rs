//! Time series to a Fisher-z connectivity matrix, written and read back as CSV.
//!
//! cargo run --example connectivity_pipeline

use mkcapsnet::connectivity::{
    connectivity_matrix, fisher_z, pearson, read_matrix, write_matrix, TimeSeries,
};
use mkcapsnet::numerics::RandomStream;

fn main() -> mkcapsnet::Result<()> {
    let (n_rois, n_t) = (5, 120);
    let mut rng = RandomStream::new(1, 0);
    let shared: Vec<f64> = (0..n_t).map(|_| rng.normal()).collect();
    let mut rows = Vec::new();
    for roi in 0..n_rois {
        // ROIs 0 and 1 follow a common signal
        let w = if roi < 2 { 0.9 } else { 0.0 };
        rows.push(
            shared
                .iter()
                .map(|s| w * s + (1.0 - w * w).sqrt() * rng.normal())
                .collect::<Vec<_>>(),
        );
    }
    let ts = TimeSeries::from_rows(&rows)?;

    let r01 = pearson(ts.roi(0), ts.roi(1))?;
    println!("r(0,1) = {r01:.4}  z = {:.4}", fisher_z(r01)?);

    let m = connectivity_matrix(&ts)?;
    for i in 0..n_rois {
        let row: Vec<String> = (0..n_rois)
            .map(|j| format!("{:7.3}", m.get(i, j)))
            .collect();
        println!("{}", row.join(" "));
    }

    let dir = std::env::temp_dir().join("mkcapsnet_connectivity");
    std::fs::create_dir_all(&dir).map_err(|e| mkcapsnet::Error::io(&dir, e))?;
    let path = dir.join("subject01.csv");
    write_matrix(&path, &m)?;
    let back = read_matrix(&path)?;
    assert_eq!(back.values(), m.values());
    println!("round-tripped through {}", path.display());
    Ok(())
}
