use hsg_core::geometry::Vec3;
use hsg_core::model::{count_parameters, Architecture, ExternalEmbeddings, Model, ModelConfig};
use hsg_core::scene::{self, SceneRecord, TokenizedScene};
use hsg_core::synth::{generate_corpus, SynthConfig};
use hsg_core::tensor::{grad_check_with, Stencil, Tensor};
use hsg_core::Error;
use std::collections::BTreeMap;

fn tiny(dim: usize, layers: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        dim,
        layers,
        heads,
        dropout: 0.0,
        vocab_size: 5,
        n_room_classes: 3,
        n_region_classes: 4,
        max_objects: 8,
        init_seed: 11,
        ..ModelConfig::default()
    }
}

fn tokens(ids: &[usize], dists: &[f64], n_max: usize, pad: usize) -> TokenizedScene {
    TokenizedScene {
        token_ids: ids.to_vec(),
        distances: dists.to_vec(),
        attention_mask: vec![true; ids.len()],
        region_targets: vec![0; ids.len()],
        room_target: Some(0),
        n_objects: ids.len(),
    }
    .padded(n_max, pad)
    .unwrap()
}

fn set(model: &mut Model, name: &str, f: impl Fn(usize) -> f64) {
    let id = model.params().require(name).unwrap();
    for (i, v) in model.params_mut().tensor_mut(id).data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn p<'a>(model: &'a Model, name: &str) -> &'a [f64] {
    model.params().get(name).unwrap().data()
}

// ---- straight-line reference implementation ----

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

fn bias(x: &mut [f64], b: &[f64]) {
    for (i, v) in x.iter_mut().enumerate() {
        *v += b[i % b.len()];
    }
}

fn ln(x: &[f64], g: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|r| {
            let mu = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
            let s = (var + 1e-5).sqrt();
            r.iter().enumerate().map(move |(i, v)| (v - mu) / s * g[i] + b[i]).collect::<Vec<_>>()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    x / (1.0 + (-1.702 * x).exp())
}

fn reference_forward(model: &Model, t: &TokenizedScene) -> (Vec<f64>, Vec<f64>) {
    let c = model.config();
    let d = c.dim;
    let n = t.token_ids.len() + 1;
    let mut z = p(model, "embed.class_token").to_vec();
    for (i, &id) in t.token_ids.iter().enumerate() {
        for j in 0..d {
            z.push(p(model, "embed.semantic")[id * d + j] + t.distances[i] * p(model, "embed.pos_weight")[j] + p(model, "embed.pos_bias")[j]);
        }
    }
    let mut valid = vec![true];
    valid.extend(&t.attention_mask);
    let hd = d / c.heads;
    for l in 0..c.layers {
        let q = |s: &str| format!("blocks.{l}.{s}");
        let h = ln(&z, p(model, &q("ln1.gamma")), p(model, &q("ln1.beta")), d);
        let mut qkv = mm(&h, p(model, &q("attn.qkv.weight")), n, d, 3 * d);
        bias(&mut qkv, p(model, &q("attn.qkv.bias")));
        let mut att = vec![0.0; n * d];
        for head in 0..c.heads {
            for i in 0..n {
                let qi = &qkv[i * 3 * d + head * hd..][..hd];
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let kj = &qkv[j * 3 * d + d + head * hd..][..hd];
                        if valid[j] { qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt() } else { f64::NEG_INFINITY }
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let zsum: f64 = e.iter().sum();
                for j in 0..n {
                    let vj = &qkv[j * 3 * d + 2 * d + head * hd..][..hd];
                    for k in 0..hd {
                        att[i * d + head * hd + k] += e[j] / zsum * vj[k];
                    }
                }
            }
        }
        let mut o = mm(&att, p(model, &q("attn.out.weight")), n, d, d);
        bias(&mut o, p(model, &q("attn.out.bias")));
        let zm: Vec<f64> = z.iter().zip(&o).map(|(a, b)| a + b).collect();
        let h = ln(&zm, p(model, &q("ln2.gamma")), p(model, &q("ln2.beta")), d);
        let hid = c.hidden_dim();
        let mut f = mm(&h, p(model, &q("mlp.fc1.weight")), n, d, hid);
        bias(&mut f, p(model, &q("mlp.fc1.bias")));
        let f: Vec<f64> = f.into_iter().map(gelu).collect();
        let mut f2 = mm(&f, p(model, &q("mlp.fc2.weight")), n, hid, d);
        bias(&mut f2, p(model, &q("mlp.fc2.bias")));
        z = zm.iter().zip(&f2).map(|(a, b)| a + b).collect();
    }
    let y = ln(&z, p(model, "final_ln.gamma"), p(model, "final_ln.beta"), d);
    let mut room = mm(&y[..d], p(model, "head.room.weight"), 1, d, c.n_room_classes);
    bias(&mut room, p(model, "head.room.bias"));
    let mut region = mm(&y[d..], p(model, "head.region.weight"), n - 1, d, c.n_region_classes);
    bias(&mut region, p(model, "head.region.bias"));
    (room, region)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn forward_matches_straight_line_reference() {
    let model = Model::new(tiny(8, 1, 1)).unwrap();
    let t = tokens(&[1, 3], &[0.7, 1.9], 2, 4);
    let pred = model.forward(&t).unwrap();
    let (room, region) = reference_forward(&model, &t);
    assert!(close(&pred.room_logits, &room, 1e-12));
    assert!(close(pred.region_logits.data(), &region, 1e-12));

    let model = Model::new(tiny(12, 2, 3)).unwrap();
    let t = tokens(&[0, 2, 2, 1], &[0.1, 2.0, 0.4, 3.3], 6, 4);
    let pred = model.forward(&t).unwrap();
    let (room, region) = reference_forward(&model, &t);
    assert!(close(&pred.room_logits, &room, 1e-12));
    assert!(close(pred.region_logits.data(), &region, 1e-12));
}

#[test]
fn embed_cases() {
    let mut model = Model::new(tiny(4, 1, 1)).unwrap();
    set(&mut model, "embed.semantic", |i| i as f64);
    set(&mut model, "embed.pos_weight", |i| 10.0 + i as f64);
    set(&mut model, "embed.pos_bias", |i| -(i as f64));
    set(&mut model, "embed.class_token", |_| 0.5);
    let z0 = model.embed(&tokens(&[2, 0], &[1.0, 0.5], 2, 4)).unwrap();
    let expected = [
        vec![0.5; 4],
        (0..4).map(|j| (8 + j) as f64 + (10.0 + j as f64) - j as f64).collect::<Vec<_>>(),
        (0..4).map(|j| j as f64 + 0.5 * (10.0 + j as f64) - j as f64).collect::<Vec<_>>(),
    ]
    .concat();
    assert!(close(z0.data(), &expected, 1e-15));

    // zero distances: position part is just the bias
    set(&mut model, "embed.semantic", |_| 0.0);
    let z0 = model.embed(&tokens(&[1, 2, 3], &[0.0; 3], 3, 4)).unwrap();
    for r in 1..4 {
        assert_eq!(z0.row(r), p(&model, "embed.pos_bias"));
    }

    // all padding: class row, then PAD embedding + bias
    let empty = tokens(&[], &[], 2, 4);
    let z0 = model.embed(&empty).unwrap();
    assert_eq!(z0.row(0), &[0.5; 4]);
    assert_eq!(z0.row(1), p(&model, "embed.pos_bias"));

    let bad = tokens(&[9], &[0.0], 1, 4);
    assert!(matches!(model.embed(&bad), Err(Error::IndexOutOfVocab { id: 9, size: 5 })));
}

fn layer_norm_rows(z: &Tensor, model: &Model) -> Vec<f64> {
    ln(z.data(), p(model, "final_ln.gamma"), p(model, "final_ln.beta"), model.config().dim)
}

#[test]
fn empty_stack_and_zeroed_branches_reduce_to_final_norm() {
    let model = Model::new(tiny(8, 0, 2)).unwrap();
    let t = tokens(&[1, 2], &[0.3, 0.9], 3, 4);
    let z0 = model.embed(&t).unwrap();
    let y = model.encode(&z0, &Model::key_mask(&t)).unwrap();
    assert!(close(y.data(), &layer_norm_rows(&z0, &model), 1e-12));

    let mut model = Model::new(tiny(8, 2, 2)).unwrap();
    for l in 0..2 {
        for n in ["attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
            set(&mut model, &format!("blocks.{l}.{n}"), |_| 0.0);
        }
    }
    let z0 = model.embed(&t).unwrap();
    let y = model.encode(&z0, &Model::key_mask(&t)).unwrap();
    assert!(close(y.data(), &layer_norm_rows(&z0, &model), 1e-12));
}

#[test]
fn heads_are_affine_per_row() {
    let mut model = Model::new(tiny(4, 1, 1)).unwrap();
    set(&mut model, "head.room.weight", |_| 0.0);
    set(&mut model, "head.region.weight", |_| 0.0);
    set(&mut model, "head.room.bias", |i| i as f64);
    set(&mut model, "head.region.bias", |i| 2.0 * i as f64);
    let y = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
    let pred = model.predict(&y, &[true, true]).unwrap();
    assert_eq!(pred.room_logits, vec![0.0, 1.0, 2.0]);
    for r in 0..2 {
        assert_eq!(pred.region_logits.row(r), &[0.0, 2.0, 4.0, 6.0]);
    }

    let model = Model::new(tiny(4, 1, 1)).unwrap();
    let pred = model.predict(&y, &[true, true]).unwrap();
    let swapped: Vec<f64> = [y.row(0), y.row(2), y.row(1)].concat();
    let pred2 = model.predict(&Tensor::matrix(3, 4, swapped).unwrap(), &[true, true]).unwrap();
    assert_eq!(pred.room_logits, pred2.room_logits);
    assert_eq!(pred.region_logits.row(0), pred2.region_logits.row(1));
    // affine oracle
    let w = p(&model, "head.region.weight");
    let b = p(&model, "head.region.bias");
    for c in 0..4 {
        let v: f64 = (0..4).map(|k| y.row(1)[k] * w[k * 4 + c]).sum::<f64>() + b[c];
        assert!((pred.region_logits.row(0)[c] - v).abs() < 1e-14);
    }
}

#[test]
fn parameter_count_by_hand() {
    // D=2, L=0, vocab=2, 1 head, 2 room / 3 region classes:
    // semantic 4, pos weight 2 + bias 2, class token 2, final LN 4,
    // room head 2*2+2, region head 2*3+3.
    let cfg = ModelConfig { dim: 2, layers: 0, heads: 1, vocab_size: 2, n_room_classes: 2, n_region_classes: 3, ..tiny(2, 0, 1) };
    assert_eq!(count_parameters(&cfg), 4 + 4 + 2 + 4 + 6 + 9);
    assert_eq!(count_parameters(&cfg), Model::new(cfg.clone()).unwrap().params().num_scalars());

    // one block at D=2, hidden 8: ln 4, qkv 12+6, out 4+2, ln 4, fc1 16+8, fc2 16+2
    let one = ModelConfig { layers: 1, ..cfg.clone() };
    assert_eq!(count_parameters(&one) - count_parameters(&cfg), 4 + 18 + 6 + 4 + 24 + 18);

    let big = ModelConfig { vocab_size: 7, ..cfg.clone() };
    assert_eq!(count_parameters(&big) - count_parameters(&cfg), 5 * 2);

    for cfg in [tiny(8, 2, 2), ModelConfig { architecture: Architecture::Mlp, ..tiny(8, 3, 2) }, ModelConfig { use_position: false, ..tiny(6, 1, 3) }] {
        assert_eq!(count_parameters(&cfg), Model::new(cfg.clone()).unwrap().params().num_scalars());
    }
}

#[test]
fn reference_config_count() {
    let cfg = ModelConfig::default();
    let n = count_parameters(&cfg);
    assert_eq!(n, 7_188_519);
}

#[test]
fn external_embeddings() {
    let vocab = scene::LabelVocab::from_labels(["bed", "chair"]);
    let mut map = BTreeMap::new();
    map.insert("bed".to_string(), vec![1.0, 2.0, 3.0]);
    map.insert("chair".to_string(), vec![-1.0, 0.5, 0.0]);
    let ext = ExternalEmbeddings::from_map(&map, &vocab).unwrap();
    let ident = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let table = ext.project(&ident).unwrap();
    assert_eq!(table.row(0), &[1.0, 2.0, 3.0]);
    assert_eq!(table.row(2), &[0.0, 0.0, 0.0]);

    let w = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let t = ext.project(&w).unwrap();
    assert_eq!(t.shape(), &[3, 2]);
    assert_eq!(t.row(1), &[-1.0 + 1.5, -2.0 + 2.0]);

    let mut missing = map.clone();
    missing.remove("chair");
    assert!(matches!(ExternalEmbeddings::from_map(&missing, &vocab), Err(Error::MissingLabel(_))));
    let mut ragged = map.clone();
    ragged.insert("chair".into(), vec![1.0]);
    assert!(matches!(ExternalEmbeddings::from_map(&ragged, &vocab), Err(Error::DimensionMismatch { .. })));

    // 512-wide vectors reduced to the model width
    let wide: BTreeMap<String, Vec<f64>> = [("bed", 0.1), ("chair", 0.2)].iter().map(|(l, v)| (l.to_string(), vec![*v; 512])).collect();
    let ext = ExternalEmbeddings::from_map(&wide, &vocab).unwrap();
    let cfg = ModelConfig { dim: 384, layers: 0, heads: 6, vocab_size: 3, ..tiny(384, 0, 6) };
    let model = Model::with_external(cfg, ext).unwrap();
    assert_eq!(model.params().get("embed.projection").unwrap().shape(), &[512, 384]);
    assert!(model.params().get("embed.semantic").is_none());
    let z0 = model.embed(&tokens(&[0, 1], &[0.0, 1.0], 2, 2)).unwrap();
    assert_eq!(z0.shape(), &[3, 384]);
}

fn corpus_tokens(n: usize, seed: u64) -> (Vec<SceneRecord>, Vec<TokenizedScene>, usize) {
    let scenes = generate_corpus(&SynthConfig { seed, ..SynthConfig::default() }, n).unwrap();
    let vocab = scene::build_vocab(&scenes).unwrap();
    let rooms = scene::room_classes(&scenes);
    let regions = scene::region_classes(&scenes);
    let toks = scenes.iter().map(|s| scene::tokenize_scene(s, &vocab, &rooms, &regions, 64).unwrap()).collect();
    (scenes, toks, vocab.size())
}

fn synth_model(vocab: usize) -> Model {
    Model::new(ModelConfig { dim: 16, layers: 2, heads: 2, dropout: 0.0, vocab_size: vocab, n_room_classes: 6, n_region_classes: 10, max_objects: 64, init_seed: 5, ..ModelConfig::default() }).unwrap()
}

#[test]
fn padding_does_not_change_outputs() {
    let (_, toks, v) = corpus_tokens(5, 1);
    let model = synth_model(v);
    for t in &toks {
        let a = model.forward(&t.trimmed()).unwrap();
        let b = model.forward(t).unwrap();
        assert!(close(&a.room_logits, &b.room_logits, 1e-8));
        for i in 0..t.n_objects {
            assert!(close(a.region_logits.row(i), b.region_logits.row(i), 1e-8));
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (_, toks, v) = corpus_tokens(1, 2);
    let model = synth_model(v);
    let t = toks[0].trimmed();
    let report = grad_check_with(
        model.params(),
        |tape| {
            let vars = model.forward_on(tape, &t, None)?;
            let r = tape.cross_entropy(vars.room_logits, &[t.room_target])?;
            let targets: Vec<Option<usize>> = t.region_targets.iter().map(|&x| usize::try_from(x).ok()).collect();
            let g = tape.cross_entropy(vars.region_logits, &targets)?;
            let r = tape.scale(r, 0.4);
            let g = tape.scale(g, 0.6);
            tape.add(r, g)
        },
        1e-3,
        12,
        3,
        Stencil::FivePoint,
    )
    .unwrap();
    assert!(report.checked >= 200, "{}", report.checked);
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn mlp_baseline_has_no_token_mixing() {
    let cfg = ModelConfig { architecture: Architecture::Mlp, ..tiny(8, 2, 2) };
    let model = Model::new(cfg.clone()).unwrap();
    let a = model.forward(&tokens(&[0, 1, 2], &[0.5, 1.0, 1.5], 3, 4)).unwrap();
    let b = model.forward(&tokens(&[0, 3, 2], &[0.5, 4.0, 1.5], 3, 4)).unwrap();
    assert_eq!(a.region_logits.row(0), b.region_logits.row(0));
    assert_eq!(a.region_logits.row(2), b.region_logits.row(2));
    assert_ne!(a.region_logits.row(1), b.region_logits.row(1));
    assert_eq!(a.room_logits, b.room_logits);

    let mut zeroed = Model::new(cfg).unwrap();
    let names: Vec<String> = zeroed.params().iter().map(|(n, _)| n.to_string()).collect();
    for n in names.iter().filter(|n| !n.ends_with("bias") || n.starts_with("mlp")) {
        set(&mut zeroed, n, |_| 0.0);
    }
    set(&mut zeroed, "head.room.bias", |i| i as f64 + 1.0);
    set(&mut zeroed, "head.region.bias", |i| i as f64 - 1.0);
    let out = zeroed.forward(&tokens(&[0, 1], &[0.5, 1.0], 2, 4)).unwrap();
    assert_eq!(out.room_logits, vec![1.0, 2.0, 3.0]);
    assert_eq!(out.region_logits.row(1), &[-1.0, 0.0, 1.0, 2.0]);
}

#[test]
fn mlp_baseline_matches_straight_line_reference() {
    let cfg = ModelConfig { architecture: Architecture::Mlp, use_position: false, ..tiny(4, 1, 1) };
    let model = Model::new(cfg).unwrap();
    let t = tokens(&[1], &[0.0], 1, 4);
    let out = model.forward(&t).unwrap();
    let x = &p(&model, "embed.semantic")[4..8];
    let mut h = mm(x, p(&model, "mlp.0.fc1.weight"), 1, 4, 16);
    bias(&mut h, p(&model, "mlp.0.fc1.bias"));
    let h: Vec<f64> = h.into_iter().map(gelu).collect();
    let mut h2 = mm(&h, p(&model, "mlp.0.fc2.weight"), 1, 16, 4);
    bias(&mut h2, p(&model, "mlp.0.fc2.bias"));
    let y = ln(&h2, p(&model, "mlp.0.ln.gamma"), p(&model, "mlp.0.ln.beta"), 4);
    let mut r = mm(&y, p(&model, "head.region.weight"), 1, 4, 4);
    bias(&mut r, p(&model, "head.region.bias"));
    assert!(close(out.region_logits.row(0), &r, 1e-12));
}

#[test]
fn scene_max_scaling_divides_by_largest_distance() {
    let mut cfg = tiny(4, 0, 1);
    cfg.distance_scaling = hsg_core::model::DistanceScaling::SceneMax;
    let mut model = Model::new(cfg).unwrap();
    set(&mut model, "embed.semantic", |_| 0.0);
    set(&mut model, "embed.pos_weight", |_| 1.0);
    let z0 = model.embed(&tokens(&[0, 1], &[2.0, 4.0], 3, 4)).unwrap();
    assert_eq!(z0.row(1), &[0.5; 4]);
    assert_eq!(z0.row(2), &[1.0; 4]);
    assert_eq!(z0.row(3), &[0.0; 4]);
    let _ = Vec3::ZERO;
}
