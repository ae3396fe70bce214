//! The finite-difference gradient suite: every layer, the G3 block in both
//! activation placements, the full generator and discriminator, and the
//! chord model, each at several sequence lengths.

use crate::chordgen::{ChordGenConfig, ChordGenModel, LeadSheet};
use crate::error::Result;
use crate::g3began::{CondMode, G3BeganModel, ModelConfig};
use crate::layers::{ActivationPlacement, G3Block, GroupNorm, GroupedDilatedConv1d, GruLayer, Linear, LEAKY_SLOPE};
use crate::numerics::{
    check_gradients, sample_gaussian, Array2, GradCheckOptions, GradCheckReport, Graph, OpKind, ParamStore,
    RngState, Var,
};

/// Maximum relative error accepted by the suite.
pub const SUITE_TOLERANCE: f64 = 1e-4;
/// Sequence lengths every sequence layer is checked at.
pub const SUITE_LENGTHS: [usize; 3] = [1, 5, 17];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub lengths: Vec<usize>,
    /// Corrupts one backward rule; used to prove the suite can fail.
    pub fault: Option<OpKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            lengths: SUITE_LENGTHS.to_vec(),
            fault: None,
        }
    }
}

type Build<'a> = Box<dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var> + 'a>;

struct Case<'a> {
    name: String,
    store: ParamStore,
    inputs: Vec<(&'static str, Array2)>,
    build: Build<'a>,
}

/// Scalar probe of a sequence output: a fixed random projection.
fn probe(g: &mut Graph, y: Var, proj: &Array2) -> Result<Var> {
    g.weighted_sum(y, proj.clone())
}

fn layer_cases(t: usize, rng: &mut RngState) -> Result<Vec<Case<'static>>> {
    let mut cases = Vec::new();

    let x = sample_gaussian(rng, 6, t);
    let proj = sample_gaussian(rng, 6, t);
    cases.push(Case {
        name: format!("leaky_relu/T={t}"),
        store: ParamStore::new(),
        inputs: vec![("x", x)],
        build: Box::new(move |g, _, v| {
            let y = g.leaky_relu(v[0], LEAKY_SLOPE)?;
            probe(g, y, &proj)
        }),
    });

    let lin = Linear::new("lin", 5, 4);
    let mut store = ParamStore::new();
    lin.init(&mut store, rng)?;
    perturb(&mut store, rng);
    let proj = sample_gaussian(rng, 4, t);
    cases.push(Case {
        name: format!("linear/T={t}"),
        store,
        inputs: vec![("x", sample_gaussian(rng, 5, t))],
        build: Box::new(move |g, s, v| {
            let y = lin.forward(g, s, v[0])?;
            probe(g, y, &proj)
        }),
    });

    let gru = GruLayer::new("gru", 4, 6);
    let mut store = ParamStore::new();
    gru.init(&mut store, rng)?;
    perturb(&mut store, rng);
    let proj = sample_gaussian(rng, 6, t);
    cases.push(Case {
        name: format!("gru/T={t}"),
        store,
        inputs: vec![("x", sample_gaussian(rng, 4, t)), ("h0", sample_gaussian(rng, 6, 1))],
        build: Box::new(move |g, s, v| {
            let y = gru.forward_from(g, s, v[0], Some(v[1]))?;
            probe(g, y, &proj)
        }),
    });

    let conv = GroupedDilatedConv1d::new("conv", 8, 8, 3, 2, 4)?;
    let mut store = ParamStore::new();
    conv.init(&mut store, rng)?;
    perturb(&mut store, rng);
    let proj = sample_gaussian(rng, 8, t);
    cases.push(Case {
        name: format!("grouped_dilated_conv/T={t}"),
        store,
        inputs: vec![("x", sample_gaussian(rng, 8, t))],
        build: Box::new(move |g, s, v| {
            let y = conv.forward(g, s, v[0])?;
            probe(g, y, &proj)
        }),
    });

    let norm = GroupNorm::new("norm", 8, 4)?;
    let mut store = ParamStore::new();
    norm.init(&mut store)?;
    perturb(&mut store, rng);
    let proj = sample_gaussian(rng, 8, t);
    cases.push(Case {
        name: format!("group_norm/T={t}"),
        store,
        inputs: vec![("x", sample_gaussian(rng, 8, t))],
        build: Box::new(move |g, s, v| {
            let y = norm.forward(g, s, v[0])?;
            probe(g, y, &proj)
        }),
    });

    for placement in [ActivationPlacement::Branch, ActivationPlacement::AfterSum] {
        let block = G3Block::new("block", 8, placement)?;
        let mut store = ParamStore::new();
        block.init(&mut store, rng)?;
        perturb(&mut store, rng);
        let proj = sample_gaussian(rng, 8, t);
        cases.push(Case {
            name: format!("g3_block_{placement:?}/T={t}").to_lowercase(),
            store,
            inputs: vec![("x", sample_gaussian(rng, 8, t))],
            build: Box::new(move |g, s, v| {
                let y = block.forward(g, s, v[0])?;
                probe(g, y, &proj)
            }),
        });
    }
    Ok(cases)
}

fn model_cases(t: usize, rng: &mut RngState) -> Result<Vec<Case<'static>>> {
    let config = ModelConfig {
        noise_dim: 4,
        width: 8,
        cond: CondMode::Chord,
        ..ModelConfig::default()
    };
    let model = std::sync::Arc::new(G3BeganModel::new(config, rng)?);
    let cond = Array2::from_vec(24, t, (0..24 * t).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect())?;
    let mel_dim = model.config.mel_dim;
    let mut cases = Vec::new();

    let m = model.clone();
    let proj = sample_gaussian(rng, mel_dim, t);
    let mut store = m.gen_params.clone();
    perturb(&mut store, rng);
    cases.push(Case {
        name: format!("generator/T={t}"),
        store,
        inputs: vec![("z", sample_gaussian(rng, 4, t)), ("c", cond.clone())],
        build: Box::new(move |g, s, v| {
            let mut local = G3BeganModel::skeleton(m.config.clone())?;
            local.gen_params = s.clone();
            let y = local.generator_forward(g, v[0], Some(v[1]))?;
            probe(g, y, &proj)
        }),
    });

    let m = model;
    let proj = sample_gaussian(rng, mel_dim, t);
    let mut store = m.disc_params.clone();
    perturb(&mut store, rng);
    let mel = sample_gaussian(rng, mel_dim, t).map(f64::tanh);
    cases.push(Case {
        name: format!("discriminator/T={t}"),
        store,
        inputs: vec![("m", mel), ("c", cond)],
        build: Box::new(move |g, s, v| {
            let mut local = G3BeganModel::skeleton(m.config.clone())?;
            local.disc_params = s.clone();
            let y = local.discriminator_forward(g, v[0], Some(v[1]))?;
            probe(g, y, &proj)
        }),
    });
    Ok(cases)
}

fn chord_case(t: usize, melody: bool, rng: &mut RngState) -> Result<Case<'static>> {
    let cfg = ChordGenConfig {
        embed_dim: 6,
        hidden_dim: 5,
        layers: 2,
        melody,
    };
    let mut model = ChordGenModel::new(cfg, rng)?;
    perturb(&mut model.params, rng);
    let names = ["C:maj", "A:min", "D:min7", "G:7", "E:hdim7"];
    let beats: Vec<String> = (0..t)
        .map(|i| format!(r#"{{"chord":"{}","melody":{}}}"#, names[i % 5], 60 + (i * 5) % 12))
        .collect();
    let sheet = LeadSheet::from_json(&format!(
        r#"{{"key":"C","tempo":110,"time_signature":"4/4","beats":[{}]}}"#,
        beats.join(",")
    ))?;
    let store = model.params.clone();
    Ok(Case {
        name: format!("{}/T={t}", if melody { "harmonizer" } else { "chord_generator" }),
        store,
        inputs: Vec::new(),
        build: Box::new(move |g, s, _| {
            let mut local = model.clone();
            local.params = s.clone();
            local.sheet_loss(g, &sheet)
        }),
    })
}

/// Adds small noise to every parameter so zero-initialised tensors (biases,
/// group-norm shifts, output heads) are checked away from special points.
fn perturb(store: &mut ParamStore, rng: &mut RngState) {
    for (_, e) in store.iter_mut() {
        for v in e.value.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
}

/// Runs every case; reports come back in a fixed order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let mut rng = RngState::new(opts.seed);
    let check = GradCheckOptions {
        fault: opts.fault,
        seed: opts.seed,
        ..GradCheckOptions::default()
    };
    let mut reports = Vec::new();
    for &t in &opts.lengths {
        let mut cases = layer_cases(t, &mut rng)?;
        cases.extend(model_cases(t, &mut rng)?);
        cases.push(chord_case(t, false, &mut rng)?);
        cases.push(chord_case(t, true, &mut rng)?);
        for case in cases {
            let inputs: Vec<(&str, Array2)> = case.inputs.iter().map(|(n, a)| (*n, a.clone())).collect();
            reports.push(check_gradients(&case.name, &case.store, &inputs, &case.build, &check)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_suite_passes() {
        let reports = run_suite(&SuiteOptions {
            lengths: vec![3],
            ..SuiteOptions::default()
        })
        .unwrap();
        for r in &reports {
            assert!(r.passes(SUITE_TOLERANCE), "{r:?}");
        }
    }

    #[test]
    fn corrupted_gru_rule_is_caught() {
        let reports = run_suite(&SuiteOptions {
            lengths: vec![3],
            fault: Some(OpKind::Gru),
            ..SuiteOptions::default()
        })
        .unwrap();
        let failing: Vec<&str> = reports
            .iter()
            .filter(|r| !r.passes(SUITE_TOLERANCE))
            .map(|r| r.name.as_str())
            .collect();
        assert!(failing.contains(&"gru/T=3"), "{failing:?}");
        assert!(!failing.contains(&"group_norm/T=3"));
    }
}
