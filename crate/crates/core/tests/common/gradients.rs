//! Finite-difference checks of every differentiable operation and of the
//! assembled denoiser. Each case reduces its output with a fixed random
//! weighting so no coordinate's gradient vanishes by symmetry.

use editforge::attention::{
    decoupled_attention_var, route_var, scaled_dot_attention, text_cross_attention_var, AttentionVars, ExpertVars,
    RoutingMode,
};
use editforge::autograd::{Tape, Var};
use editforge::diffusion::{ConditionSet, VisualCondition};
use editforge::error::Result;
use editforge::model::{AnySdModel, ModelConfig};
use editforge::param::{finite_diff_check, objective, ParamId, ParamStore, StageTag};
use editforge::rng::{derive, normal_tensor, seeded};
use editforge::task::EditTaskType;

pub const EPSILON: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

fn weighted_sum<'t>(tape: &'t Tape, out: Var<'t>) -> Result<Var<'t>> {
    let w = normal_tensor(&mut derive(99, "reduce"), &out.shape(), 1.0);
    out.mul(tape.constant(w))?.sum()
}

/// Runs one check over fresh parameters of the given shapes.
fn case<F>(name: &'static str, shapes: &[&[usize]], away_from_zero: bool, f: F) -> (&'static str, f64)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut store = ParamStore::new();
    let mut rng = derive(7, name);
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut t = normal_tensor(&mut rng, s, 0.8);
            if away_from_zero {
                t = t.map(|v| v + 0.2 * v.signum());
            }
            store.insert(&format!("p{i}"), t, StageTag::Backbone).unwrap()
        })
        .collect();
    let ids_ref = &ids;
    let g = objective(|tape: &Tape, st: &ParamStore| {
        let vars: Vec<Var> = ids_ref.iter().map(|id| tape.param(st, *id)).collect();
        let out = f(tape, &vars)?;
        weighted_sum(tape, out)
    });
    (name, finite_diff_check(g, &store, &ids, EPSILON).unwrap())
}

fn attention_vars<'t>(v: &[Var<'t>]) -> AttentionVars<'t> {
    AttentionVars {
        w_q: v[0],
        w_k: v[1],
        w_v: v[2],
    }
}

/// Worst relative error per case.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut out = vec![
        case("matmul", &[&[3, 4], &[4, 2]], false, |_, v| v[0].matmul(v[1])),
        case("add", &[&[3, 2], &[3, 2]], false, |_, v| v[0].add(v[1])),
        case("sub", &[&[3, 2], &[3, 2]], false, |_, v| v[0].sub(v[1])),
        case("mul", &[&[3, 2], &[3, 2]], false, |_, v| v[0].mul(v[1])),
        case("scale", &[&[5]], false, |_, v| v[0].scale(-1.7)),
        case("square", &[&[2, 3]], false, |_, v| v[0].square()),
        case("add_row", &[&[3, 4], &[4]], false, |_, v| v[0].add_row(v[1])),
        case("softmax_rows", &[&[3, 5]], false, |_, v| v[0].softmax_rows()),
        case("concat_rows", &[&[2, 3], &[1, 3]], false, |_, v| v[0].concat(0, v[1])),
        case("concat_cols", &[&[2, 3], &[2, 2]], false, |_, v| v[0].concat(1, v[1])),
        case("gelu", &[&[4, 3]], false, |_, v| v[0].gelu()),
        case("relu", &[&[4, 3]], true, |_, v| v[0].relu()),
        case("sum", &[&[3, 3]], false, |_, v| v[0].sum()),
        case("mean", &[&[3, 3]], false, |_, v| v[0].mean()),
        case("gather", &[&[6]], false, |_, v| v[0].gather(vec![5, 0, 0, 3, 2, 5, 1, 4], &[2, 4])),
        case("reshape", &[&[2, 6]], false, |_, v| v[0].reshape(&[3, 4])),
        case("transpose", &[&[2, 5]], false, |_, v| v[0].transpose()),
        case("rows", &[&[5, 3]], false, |_, v| v[0].rows(1, 4)),
        case("scaled_dot_attention", &[&[3, 4], &[5, 4], &[5, 4]], false, |_, v| {
            scaled_dot_attention(v[0], v[1], v[2])
        }),
        case("text_cross_attention", &[&[6, 4], &[7, 4], &[7, 4], &[3, 6], &[5, 7]], false, |_, v| {
            text_cross_attention_var(v[3], v[4], &attention_vars(v))
        }),
        case("route_soft", &[&[6], &[6, 4]], false, |_, v| {
            route_var(v[0], v[1], 0.7, RoutingMode::Soft)
        }),
        case(
            "decoupled_attention",
            &[
                &[6, 4],
                &[7, 4],
                &[7, 4],
                &[3, 6],
                &[5, 7],
                &[2, 8],
                &[5],
                &[5, 3],
                &[8, 4],
                &[8, 4],
                &[8, 4],
                &[8, 4],
                &[8, 4],
                &[8, 4],
            ],
            false,
            |_, v| {
                let weights = route_var(v[6], v[7], 1.0, RoutingMode::Soft)?;
                let experts: Vec<ExpertVars> = (0..3)
                    .map(|e| ExpertVars {
                        w_k: v[8 + 2 * e],
                        w_v: v[9 + 2 * e],
                    })
                    .collect();
                decoupled_attention_var(v[3], v[4], Some(v[5]), &attention_vars(v), &experts, weights)
            },
        ),
    ];
    out.push(("denoiser", denoiser_check()));
    out
}

/// Every parameter of an 8x8 model, all three condition slots present.
fn denoiser_check() -> f64 {
    let mut m = AnySdModel::new(ModelConfig::tiny()).unwrap();
    let names: Vec<String> = m.store.iter().map(|(_, p)| p.name.clone()).collect();
    // Replace zero and copied initializations so every path carries signal,
    // and flatten the canonical routing so no expert's gradient is tiny.
    let mut rng = seeded(8);
    for name in &names {
        if !name.starts_with("embed.pos") {
            let id = m.id(name).unwrap();
            let shape = m.store.get(id).tensor.shape().to_vec();
            m.store.get_mut(id).tensor = normal_tensor(&mut rng, &shape, 0.2);
        }
    }
    let mut rng = seeded(1);
    let conds = ConditionSet {
        image: Some(normal_tensor(&mut rng, &m.image_shape(), 0.5)),
        text: Some(vec![12, 4, 30, 38]),
        visual: Some(VisualCondition {
            task: EditTaskType::ColorAlter,
            features: Some(normal_tensor(&mut rng, &[m.config.reference_features()], 1.0)),
        }),
    };
    let z = normal_tensor(&mut seeded(2), &m.image_shape(), 1.0);
    let ids: Vec<ParamId> = m.store.ids();
    let model = &m;
    let f = objective(|tape: &Tape, store: &ParamStore| {
        let out = model.forward_with(store, tape, &z, 4, &conds)?.eps;
        weighted_sum(tape, out)
    });
    finite_diff_check(f, &m.store, &ids, EPSILON).unwrap()
}
