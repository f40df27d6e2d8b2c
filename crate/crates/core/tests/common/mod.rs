#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use packattack::cell::Electrical;
use packattack::data::DataDir;
use packattack::scenario::Scenario;
use packattack::PackTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum of cell terminal voltages along string `p`, evaluated cell by cell.
fn string_voltage(pack: &PackTopology, p: usize, current: f64) -> f64 {
    pack.string(p)
        .iter()
        .map(|c| Electrical::new(c, &pack.params).terminal_voltage(current))
        .sum()
}

fn residual(pack: &PackTopology, total: f64, x: &DVector<f64>) -> DVector<f64> {
    let np = pack.n_parallel;
    let v = x[np];
    let mut r = DVector::zeros(np + 1);
    for p in 0..np {
        r[p] = string_voltage(pack, p, x[p]) - v;
    }
    r[np] = x.rows(0, np).sum() - total;
    r
}

/// Brute-force voltage balance: unknowns are every string current plus the
/// common terminal voltage; Newton with a central-difference Jacobian and a
/// dense LU solve.
pub fn dense_split(pack: &PackTopology, total: f64) -> Vec<f64> {
    let np = pack.n_parallel;
    let mut x = DVector::zeros(np + 1);
    for p in 0..np {
        x[p] = total / np as f64;
    }
    x[np] = (0..np).map(|p| string_voltage(pack, p, x[p])).sum::<f64>() / np as f64;
    for _ in 0..60 {
        let r = residual(pack, total, &x);
        let mut jac = DMatrix::zeros(np + 1, np + 1);
        for j in 0..=np {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += h;
            lo[j] -= h;
            let col = (residual(pack, total, &hi) - residual(pack, total, &lo)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let dx = jac.lu().solve(&(-r)).expect("singular voltage-balance Jacobian");
        x += &dx;
        if dx.amax() <= 1e-14 * x.amax().max(1.0) {
            break;
        }
    }
    x.rows(0, np).iter().copied().collect()
}

/// Pack with per-cell scatter in SOC, temperature, film thickness and capacity.
pub fn random_pack(seed: u64) -> (PackTopology, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = packattack::defaults::nca_graphite_cell();
    let n_series = rng.gen_range(1..=12);
    let n_parallel = rng.gen_range(2..=8);
    let mut pack =
        PackTopology::uniform(n_series, n_parallel, params.clone(), params.fresh_state(0.5, 298.15)).unwrap();
    for c in &mut pack.cells {
        c.soc = rng.gen_range(0.1..0.95);
        c.temperature = rng.gen_range(268.0..318.0);
        c.sei_thickness = rng.gen_range(5e-9..80e-9);
        c.capacity_scale = rng.gen_range(0.9..1.1);
        c.capacity_lost = rng.gen_range(0.0..5.0);
    }
    let total = rng.gen_range(-150.0..150.0) * n_parallel as f64;
    (pack, total)
}

pub fn data() -> DataDir {
    DataDir::bundled()
}

/// Scenario JSON on the 100 kWh pack with an optional attack object.
pub fn scenario(city: &str, archetype: &str, days: u32, attack: Option<&str>) -> Scenario {
    let attack = attack.map(|a| format!(r#","attack":{a}"#)).unwrap_or_default();
    Scenario::from_json(&format!(
        r#"{{"name":"{city}-{archetype}","pack":"pack_100kwh","vehicle":"midsize_ev","city":"{city}","archetype":"{archetype}","horizon_days":{days},"rng_seed":7,"start_day_of_year":273{attack}}}"#
    ))
    .unwrap()
}

pub const AUX_AC_HIGH: &str =
    r#"{"kind":"AuxDrain","components":["AcHigh"],"start":"AfterFullCharge","duration":3600,"repeat":"Daily"}"#;

pub fn overcharge(offset: f64) -> String {
    format!(
        r#"{{"kind":"Overcharge","overcharge_offset":{offset},"start":"AfterFullCharge","duration":3600,"repeat":"Daily"}}"#
    )
}
