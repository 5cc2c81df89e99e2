//! Self-benchmarks of the two sampling kernels.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvdet::attention::{pca_forward, AttnConfig, OffsetSpace, PcaWeights};
use mvdet::bev_init::{build_projected_grid, volumetric_sample_var, BevGridSpec};
use mvdet::numerics::{Graph, ParamStore, Tensor};
use mvdet::query::QuerySet;
use mvdet::synth::RigSpec;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Times `f` `repeats` times after one warm-up call; returns seconds.
fn time(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    f()?;
    (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect()
}

pub fn run(out: &Path, repeats: usize, queries: &[usize], grids: &[usize]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rig = RigSpec::desk().build()?;
    let maps: Vec<Tensor> = (0..rig.n_views())
        .map(|_| Tensor::from_fn(&[8, 32, 32], |_| rng.random_range(-1.0..1.0)))
        .collect();
    let scales: Vec<(f64, f64)> = rig.cameras().iter().map(|c| c.feature_scale(32, 32)).collect();
    let mut csv = fs::File::create(out.join("bench.csv"))?;
    writeln!(csv, "kernel,size,median_s,min_s,max_s,repeats")?;
    let mut emit = |kernel: &str, size: usize, t: Vec<f64>| -> Result<()> {
        let (lo, hi) = (t.iter().cloned().fold(f64::INFINITY, f64::min), t.iter().cloned().fold(0.0, f64::max));
        let m = median(t.clone());
        writeln!(csv, "{kernel},{size},{m:.6e},{lo:.6e},{hi:.6e},{}", t.len())?;
        println!("{kernel:<18} {size:>6}  median {:>10.3} ms", m * 1e3);
        Ok(())
    };

    let cfg = AttnConfig {
        channels: 32,
        feat_channels: 8,
        heads: 4,
        points: 4,
        levels: 1,
    };
    let mut store = ParamStore::new();
    let w = PcaWeights::new(&mut store, "pca", cfg, OffsetSpace::Ego3d, &mut rng)?;
    for &n in queries {
        let q = Tensor::from_fn(&[n, 32], |_| rng.random_range(-1.0..1.0));
        let centers: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(-16.0..16.0), rng.random_range(-16.0..16.0), 0.5])
            .collect();
        let t = time(repeats, || {
            let mut g = Graph::from_params(&store, false);
            let features = g.constant(q.clone());
            let pos_enc = g.constant(q.clone());
            let views = maps.iter().map(|m| g.constant(m.clone())).collect();
            let qs = QuerySet {
                features,
                pos_enc,
                centers: centers.clone(),
                padded: 0,
            };
            pca_forward(&mut g, &qs, &[views], &rig, &w)?;
            Ok(())
        })?;
        emit("pca_forward", n, t)?;
    }
    for &s in grids {
        let spec = BevGridSpec {
            x_range: [-16.0, 16.0],
            y_range: [-16.0, 16.0],
            z_range: [-1.0, 3.0],
            resolution: [4, s, s],
        };
        let grid = build_projected_grid(&spec, &rig)?;
        let t = time(repeats, || {
            let mut g = Graph::no_grad();
            let views: Vec<_> = maps.iter().map(|m| g.constant(m.clone())).collect();
            volumetric_sample_var(&mut g, &views, &scales, &grid)?;
            Ok(())
        })?;
        emit("volumetric_sample", s, t)?;
    }
    Ok(())
}
