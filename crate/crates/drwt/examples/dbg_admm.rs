use drwt::harness::bench::{derive_seed, BenchConfig, StaticProblem};
use drwt::harness::episode::Method;
use drwt::harness::sweep::{convergence_sweep, curve_dominates, geometric_checkpoints};
use drwt::models::SensorModel;
use drwt::netgraph::{CommGraph, SensorId};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn geometric_exact_edges(seed: u64, n: usize, m: usize) -> CommGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    loop {
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let mut d: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n { for j in i+1..n {
            let dist = ((pts[i][0]-pts[j][0]).powi(2) + (pts[i][1]-pts[j][1]).powi(2)).sqrt();
            d.push((dist, i, j));
        }}
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let edges: Vec<(SensorId, SensorId)> = d[..m].iter().map(|&(_, i, j)| (i as SensorId, j as SensorId)).collect();
        let g = CommGraph::new(0, 0..n as SensorId, edges).unwrap();
        if g.is_connected() { return g; }
    }
}

fn axis_sensor(id: SensorId, axis: usize, r_std: f64) -> SensorModel {
    let mut c = DMatrix::zeros(1, 4);
    c[(0, axis)] = 1.0;
    SensorModel::new(id, c, DMatrix::from_element(1, 1, r_std * r_std)).unwrap()
}

fn main() {
    for (rho, disk) in [(0.06, true), (0.12, true), (0.25, true), (0.06, false), (0.12, false)] {
        let mut wins = 0;
        let mut min_dec = f64::INFINITY;
        for s in 0..20u64 {
            let cfg = BenchConfig { rho, prior_vel_std: 0.8, r_std: 0.7, ..BenchConfig::desk_scale() };
            let mut problem = StaticProblem::generate(&cfg, derive_seed(1, 700 + s)).unwrap();
            if disk { problem.graph = geometric_exact_edges(derive_seed(1, 700 + s), 20, 80); }
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(1, 900 + s));
            problem.sensors = (0..20u32).map(|id| {
                let f = rng.random_range(0.6..1.8);
                axis_sensor(id, (id as usize) % 2, 0.7 * f)
            }).collect();
            let episode = problem.episode(derive_seed(1, 800 + s), 1).unwrap();
            let ks = geometric_checkpoints(2048);
            let points = convergence_sweep(&problem, &episode, &ks, &ks).unwrap();
            let drwt: Vec<_> = points.iter().filter(|p| p.method == Method::Drwt).cloned().collect();
            let ckf: Vec<_> = points.iter().filter(|p| p.method == Method::Ckf).cloned().collect();
            if let Some((lo, hi)) = curve_dominates(&drwt, &ckf, 1e-12, 0.05) {
                wins += 1;
                min_dec = min_dec.min((hi / lo).log10());
            } else if s < 2 {
                for k in [1usize, 2, 4, 8, 16, 47, 132, 373, 1056] {
                    let d = drwt.iter().find(|p| p.rounds == k);
                    let c = ckf.iter().find(|p| p.rounds == k);
                    if let (Some(d), Some(c)) = (d, c) {
                        println!("  rho={rho} disk={disk} s={s} k={k}: drwt({:.2e},{:.3e}) ckf({:.2e},{:.3e})", d.bits_per_node, d.err_to_central, c.bits_per_node, c.err_to_central);
                    }
                }
            }
        }
        println!("rho={rho} disk={disk}: wins {wins}/20 (min decades {min_dec:.2})");
    }
}
