//! Dataset → training → attack → metrics, in process, on a tiny model.

use proptest::prelude::*;

use mofit_core::attack::{queries_from_dataset, run_attack_suite, AttackRecord, SuiteConfig};
use mofit_core::data::{generate_dataset, Dataset, DatasetConfig, Split};
use mofit_core::diffusion::{eval_loss, ImageShape, NoiseSchedule};
use mofit_core::metrics::{auc, method_report, Orientation, ScoreTable};
use mofit_core::nn::{read_checkpoint, write_checkpoint, Architecture, CheckpointMeta, DenoiserModel};
use mofit_core::oracle::{LocalOracle, LossOracle};
use mofit_core::rng::{self, Purpose};
use mofit_core::train::{train, Example, TrainConfig};

fn dataset() -> Dataset {
    generate_dataset(&DatasetConfig {
        image: ImageShape::new(4, 4, 1),
        n_member: 6,
        n_holdout: 6,
        cond_dim: 6,
        seed: 3,
    })
}

fn arch() -> Architecture {
    Architecture {
        image: ImageShape::new(4, 4, 1),
        hidden: vec![16, 16],
        time_dim: 4,
        cond_dim: 6,
    }
}

fn trained(d: &Dataset, sched: &NoiseSchedule) -> DenoiserModel {
    let ex: Vec<Example> = d
        .members()
        .map(|s| Example {
            image: s.image.clone(),
            cond: d.condition(s).embedding,
        })
        .collect();
    let cfg = TrainConfig {
        steps: 200,
        batch_size: 6,
        master_seed: 5,
        ..Default::default()
    };
    let out = train(DenoiserModel::random(arch(), 5), &ex, sched, &cfg).unwrap();
    let k = out.losses.len() / 10;
    let head: f64 = out.losses[..k].iter().sum();
    let tail: f64 = out.losses[out.losses.len() - k..].iter().sum();
    assert!(tail < head, "training did not reduce the loss");
    out.model
}

fn suite() -> SuiteConfig {
    let mut s = SuiteConfig {
        master_seed: 11,
        ..Default::default()
    };
    s.surrogate.iters = 15;
    s.embedding.iters = 10;
    s
}

fn attack(model: &DenoiserModel, sched: &NoiseSchedule, d: &Dataset) -> Vec<AttackRecord> {
    let q = queries_from_dataset(d, 0.5, 11).unwrap();
    run_attack_suite(&LocalOracle::new(model, sched), &q, &suite()).unwrap()
}

#[test]
fn end_to_end_records_are_consistent() {
    let d = dataset();
    let sched = NoiseSchedule::default();
    let model = trained(&d, &sched);
    let recs = attack(&model, &sched, &d);
    assert_eq!(recs.len(), 12);
    let t = suite().surrogate.t_star;
    for (r, s) in recs.iter().zip(&d.samples) {
        assert!(r.ok(), "{:?}", r.error);
        assert_eq!((r.sample_id, r.split), (s.id, s.split));
        // recompute the reference losses without going through the oracle
        let eps = mofit_core::attack::target_noise(11, s.id, 0, 16);
        let lu = eval_loss(&model, &s.image, None, t, &eps, &sched).unwrap();
        let lg = eval_loss(&model, &s.image, Some(&d.condition(s).embedding), t, &eps, &sched).unwrap();
        assert_eq!(r.l_uncond, lu);
        assert_eq!(r.l_cond_gt, Some(lg));
        assert_eq!(r.score_clid_gt, Some(lg - lu));
        assert_eq!(r.score_mofit, r.l_cond_phi_star - r.l_uncond);
        assert_eq!(r.score_loss_baseline, r.l_cond_approx);
        assert!(r.surrogate_loss <= r.surrogate_trace[0]);
        assert!(r.embed_loss <= r.embed_trace[0]);
    }

    let table = ScoreTable::from_records(&recs);
    for col in [
        "score_mofit",
        "score_clid_gt",
        "score_clid_approx",
        "score_loss_baseline",
    ] {
        let c = table.column(col).unwrap();
        let hi = auc(&c.values, &table.labels, Orientation::MemberHigh).unwrap();
        let lo = auc(&c.values, &table.labels, Orientation::MemberLow).unwrap();
        assert!((hi + lo - 1.0).abs() < 1e-12, "{col}");
        let m = method_report(&table, col).unwrap();
        assert!((0.5..=1.0).contains(&m.asr));
    }
    let members = recs.iter().filter(|r| r.split == Split::Member).count();
    assert_eq!(members, 6);
}

#[test]
fn checkpoint_round_trip_reproduces_the_attack() {
    let d = dataset();
    let sched = NoiseSchedule::default();
    let model = trained(&d, &sched);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model, &CheckpointMeta::default()).unwrap();
    let (back, _) = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.param_hash(), model.param_hash());
    assert_eq!(attack(&model, &sched, &d), attack(&back, &sched, &d));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_agrees_with_direct_evaluation(seed in 0u64..1000, t in 1usize..=1000, cond in any::<bool>()) {
        let sched = NoiseSchedule::default();
        let model = DenoiserModel::random(arch(), seed);
        let oracle = LocalOracle::new(&model, &sched);
        let x = rng::uniform_vec(&mut rng::stream(seed, Purpose::Probe, 0, 0), 16, 1.0);
        let eps = rng::normal_vec(&mut rng::stream(seed, Purpose::Probe, 0, 1), 16);
        let c = rng::normal_vec(&mut rng::stream(seed, Purpose::Probe, 0, 2), 6);
        let c = cond.then_some(c.as_slice());
        let direct = eval_loss(&model, &x, c, t, &eps, &sched).unwrap();
        prop_assert_eq!(oracle.loss(&x, c, t, &eps).unwrap(), direct);
        prop_assert!(direct.is_finite() && direct >= 0.0);
    }
}
