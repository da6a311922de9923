use super::*;
use crate::sgunet::ModelConfig;
use crate::tensor::AdamState;

fn cfg(ratios: Vec<usize>, m_gu: usize) -> ModelConfig {
    ModelConfig {
        latent: 4,
        hidden: 5,
        hidden_layers: 1,
        m_enc: 1,
        m_gu,
        pooling_ratios: ratios,
        ..ModelConfig::default()
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn mix(items: &[(&str, f64)]) -> BlockOrigin {
    BlockOrigin::Mix(items.iter().map(|(n, w)| (n.to_string(), *w)).collect())
}

#[test]
fn uniform_upscale_replicates() {
    use BlockSource::*;
    assert_eq!(
        plan_blocks(2, 4, Strategy::Uniform),
        vec![Copy(0), Copy(0), Copy(1), Copy(1)]
    );
    let out = map_processor(&names(&["A", "B"]), 4, Strategy::Uniform);
    assert_eq!(
        out,
        vec![
            mix(&[("A", 1.0)]),
            mix(&[("A", 1.0)]),
            mix(&[("B", 1.0)]),
            mix(&[("B", 1.0)])
        ]
    );
}

#[test]
fn uniform_downscale_averages_contiguous_runs() {
    use BlockSource::*;
    assert_eq!(
        plan_blocks(5, 2, Strategy::Uniform),
        vec![Mean(vec![0, 1, 2]), Mean(vec![3, 4])]
    );
    let out = map_processor(&names(&["A", "B", "C", "D", "E"]), 2, Strategy::Uniform);
    let third = 1.0 / 3.0;
    assert_eq!(out[0], mix(&[("A", third), ("B", third), ("C", third)]));
    assert_eq!(out[1], mix(&[("D", 0.5), ("E", 0.5)]));
}

#[test]
fn equal_sizes_copy_under_both_strategies() {
    for s in [Strategy::Uniform, Strategy::FirstN] {
        assert_eq!(
            plan_blocks(3, 3, s),
            (0..3).map(BlockSource::Copy).collect::<Vec<_>>()
        );
    }
}

#[test]
fn first_n_copies_prefix() {
    use BlockSource::*;
    assert_eq!(
        plan_blocks(2, 4, Strategy::FirstN),
        vec![Copy(0), Copy(1), Fresh, Fresh]
    );
    assert_eq!(plan_blocks(4, 2, Strategy::FirstN), vec![Copy(0), Copy(1)]);
}

fn stages(l: usize, m: usize) -> Vec<StageBlocks<String>> {
    (0..l)
        .map(|i| StageBlocks {
            down: (0..m).map(|k| format!("s{i}.d{k}")).collect(),
            up: (0..m).map(|k| format!("s{i}.u{k}")).collect(),
        })
        .collect()
}

#[test]
fn stage_downscale_averages_aligned_stages() {
    let out = map_gunet(&stages(3, 2), 2, 2, Strategy::Uniform);
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].down[1], mix(&[("s0.d1", 0.5), ("s1.d1", 0.5)]));
    assert_eq!(out[0].up[0], mix(&[("s0.u0", 0.5), ("s1.u0", 0.5)]));
    assert_eq!(out[1].down[0], mix(&[("s2.d0", 1.0)]));
}

#[test]
fn stage_mapping_aligns_blocks_first() {
    // 1 stage of 4 blocks -> 2 stages of 2 blocks
    let out = map_gunet(&stages(1, 4), 2, 2, Strategy::Uniform);
    assert_eq!(out[1].down[0], mix(&[("s0.d0", 0.5), ("s0.d1", 0.5)]));
    assert_eq!(out[1].up[1], mix(&[("s0.u2", 0.5), ("s0.u3", 0.5)]));
}

#[test]
fn first_n_stage_growth_leaves_fresh_stages() {
    let out = map_gunet(&stages(1, 2), 3, 2, Strategy::FirstN);
    assert_eq!(out[0].down[0], mix(&[("s0.d0", 1.0)]));
    for s in &out[1..] {
        assert!(s.down.iter().chain(&s.up).all(|o| *o == BlockOrigin::Fresh));
    }
}

fn pretrained(config: ModelConfig, seed: u64) -> Checkpoint {
    Checkpoint::initial(config, seed).unwrap()
}

#[test]
fn same_config_uniform_is_bit_identical_on_gunet() {
    let src = pretrained(cfg(vec![2, 2], 2), 1);
    let (dst, report) = transplant(&src, &src.config, Strategy::Uniform, 9).unwrap();
    for (name, t) in dst.params.iter() {
        if name.starts_with("gunet.") {
            assert_eq!(t, src.params.get(name).unwrap(), "{name}");
        } else if t.shape().len() == 2 {
            assert_ne!(t, src.params.get(name).unwrap(), "{name} should be fresh");
        }
    }
    assert!(report.covers(dst.model().unwrap().layout()));
    let (copied, averaged, fresh) = report.counts();
    assert_eq!(averaged, 0);
    assert_eq!(copied + fresh, dst.params.len());
    assert!(report.anchored().iter().all(|n| n.starts_with("gunet.")));
}

#[test]
fn first_n_report_marks_new_stages_fresh() {
    let src = pretrained(cfg(vec![2], 2), 2);
    let tgt = cfg(vec![2, 2, 2], 2);
    let (_, report) = transplant(&src, &tgt, Strategy::FirstN, 3).unwrap();
    let per_block = gnb_suffixes(&tgt).unwrap().len();
    let fresh_gunet = report
        .entries
        .iter()
        .filter(|e| e.tensor.starts_with("gunet.stage") && e.provenance == Provenance::Fresh)
        .count();
    // two stages x (prE + prD) x m_gu blocks
    assert_eq!(fresh_gunet, 2 * 2 * 2 * per_block);
    assert!(report
        .entries
        .iter()
        .all(|e| !matches!(e.provenance, Provenance::Averaged { .. })));
}

#[test]
fn averaged_tensors_are_exact_means() {
    let mut c = cfg(vec![], 0);
    c.m_gu = 0;
    c.m_proc = 5;
    let src = pretrained(c.clone(), 4);
    c.m_proc = 2;
    let (dst, report) = transplant(&src, &c, Strategy::Uniform, 5).unwrap();
    let name = "processor.gnb1.edge_mlp.w0";
    let a = src.params.get("processor.gnb3.edge_mlp.w0").unwrap();
    let b = src.params.get("processor.gnb4.edge_mlp.w0").unwrap();
    let got = dst.params.get(name).unwrap();
    for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(got.data()) {
        assert_eq!(z, (0.5 * x as f64 + 0.5 * y as f64) as f32);
    }
    let entry = report.entries.iter().find(|e| e.tensor == name).unwrap();
    assert!(matches!(&entry.provenance, Provenance::Averaged { from } if from.len() == 2));
}

#[test]
fn transplant_is_deterministic_and_idempotent() {
    let src = pretrained(cfg(vec![2, 2], 2), 6);
    let tgt = cfg(vec![2, 2, 2], 3);
    let (a, ra) = transplant(&src, &tgt, Strategy::Uniform, 11).unwrap();
    let (b, rb) = transplant(&src, &tgt, Strategy::Uniform, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = transplant(&a, &tgt, Strategy::Uniform, 12).unwrap();
    for (name, t) in c.params.iter().filter(|(n, _)| n.starts_with("gunet.")) {
        assert_eq!(t, a.params.get(name).unwrap());
    }
}

#[test]
fn incompatible_widths_are_refused() {
    let src = pretrained(cfg(vec![2], 2), 7);
    let mut tgt = cfg(vec![2], 2);
    tgt.latent = 8;
    assert!(transplant(&src, &tgt, Strategy::Uniform, 0).is_err());
    let flat = ModelConfig {
        m_proc: 2,
        ..cfg(vec![], 0)
    };
    assert!(transplant(&src, &flat, Strategy::Uniform, 0).is_err());
}

#[test]
fn dim_may_change() {
    let src = pretrained(cfg(vec![2], 2), 8);
    let tgt = ModelConfig {
        dim: 3,
        ..cfg(vec![2], 2)
    };
    let (dst, _) = transplant(&src, &tgt, Strategy::Uniform, 0).unwrap();
    assert_eq!(dst.config.dim, 3);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut ck = pretrained(cfg(vec![2], 1), 9);
    ck.normalizers
        .output
        .mesh
        .update(&[0.1, 0.2, 0.30000000000000004, -1e-7])
        .unwrap();
    let mut opt = AdamState::new(&ck.params);
    opt.step = 7;
    opt.m[0].data_mut()[0] = 0.25;
    ck.optimizer = Some(opt);
    let mut first = Vec::new();
    ck.write_to(&mut first).unwrap();
    let back = Checkpoint::read_from(first.as_slice()).unwrap();
    assert_eq!(back, ck);
    let mut second = Vec::new();
    back.write_to(&mut second).unwrap();
    assert_eq!(first, second);
    assert_eq!(&first[..4], b"SGCK");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ck = pretrained(cfg(vec![2], 1), 10);
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::read_from(bad.as_slice()).is_err());
    let mut short = bytes.clone();
    short.pop();
    assert!(Checkpoint::read_from(short.as_slice()).is_err());
    bytes.push(0);
    assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
}

#[test]
fn penalty_at_equality_is_zero() {
    let ck = pretrained(cfg(vec![2], 1), 11);
    let anchor = Anchor::capture(&ck.params, ["gunet.bottom.gnb0.edge_mlp.w0"]).unwrap();
    let (p, g) = frobenius_penalty(&anchor, &ck.params).unwrap();
    assert_eq!(p, 0.0);
    assert!(g
        .get(ck.params.id("gunet.bottom.gnb0.edge_mlp.w0").unwrap())
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn scalar_penalty_and_gradient() {
    use crate::tensor::{InitKind, ParamSpec};
    let mut store = ParamStore::<f64>::new();
    let spec = ParamSpec {
        name: "w".into(),
        shape: vec![1],
        init: InitKind::Zeros,
    };
    store
        .insert(spec, Tensor::new(vec![1], vec![1.0]).unwrap())
        .unwrap();
    let anchor = Anchor::capture(&store, ["w"]).unwrap();
    store.tensor_mut(0).data_mut()[0] = 3.0;
    let (p, g) = frobenius_penalty(&anchor, &store).unwrap();
    assert_eq!(p, 4.0);
    assert_eq!(g.get(0).unwrap().data(), &[4.0]);
}
