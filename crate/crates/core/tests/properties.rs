mod common;

use common::{log_softmax_rows, random_matrix};
use dstl::corpus::{FeatureSequence, Utterance, Vocab};
use dstl::decode::{collapse, ctc_beam_search, ctc_greedy, edit_counts, train_ngram};
use dstl::distill::{segment_path, sparsify, top_k};
use dstl::losses::{ctc_loss, frame_ce_loss, frame_distill_loss, Posteriorgram, SparsePosterior, Teacher};
use dstl::nn::{
    average_checkpoints, clip_gradients, decoder_step, encode, Checkpoint, DecoderConfig, EncoderConfig, Matrix,
    ParamStore, Phase, Tensor,
};
use dstl::weaksup::{filter_metadata, MixSpec, MixedBatchSampler, Video};
use dstl::corpus::SourceTag;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix<f64> {
    random_matrix(&mut common::rng(seed), rows, cols, scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_output_length(t in 1usize..40, f in 1usize..5, layers in 1usize..3, seed in any::<u64>()) {
        let cfg = EncoderConfig { input_dim: 2, num_layers: layers, hidden_units: 3, subsample_factor: f, bidirectional: true };
        let mut p = ParamStore::<f64>::new();
        cfg.init_params(&mut p, &mut dstl::seed::rng(seed)).unwrap();
        let out = encode(&matrix(t, 2, seed, 1.0), &p, &cfg).unwrap();
        prop_assert_eq!(out.rows(), t.div_ceil(f));
        prop_assert_eq!(out.cols(), cfg.output_dim());
    }

    #[test]
    fn decoder_distribution_normalized(prefix in proptest::collection::vec(0u32..4, 0..5), t in 1usize..6, seed in any::<u64>()) {
        let cfg = DecoderConfig { vocab_size: 4, embed_dim: 3, hidden_units: 4, enc_dim: 5 };
        let mut p = ParamStore::<f64>::new();
        cfg.init_params(&mut p, &mut dstl::seed::rng(seed)).unwrap();
        let mut toks = vec![cfg.bos()];
        toks.extend(prefix);
        let probs = decoder_step(&toks, &matrix(t, 5, seed, 1.0), &p, &cfg).unwrap();
        prop_assert!(probs.iter().all(|&v| v >= 0.0));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clipped_norm_bounded(vals in proptest::collection::vec(-100.0f64..100.0, 1..30), max in 0.1f64..20.0, n in 1usize..5) {
        let mut g = ParamStore::new();
        g.insert("a", Tensor::new(vec![vals.len()], vals).unwrap()).unwrap();
        clip_gradients(&mut g, max, n).unwrap();
        prop_assert!(g.l2_norm() <= max + 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact(vals in proptest::collection::vec(any::<f32>(), 1..20), step in any::<u64>()) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![vals.len()], vals.clone()).unwrap()).unwrap();
        let ck = Checkpoint::new(p, step, Phase::TrainMain);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let got = &back.params.get("w").unwrap().data;
        prop_assert!(got.iter().zip(&vals).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn averaging_identical_checkpoints_is_identity(vals in proptest::collection::vec(-1e3f32..1e3, 1..10), n in 1usize..6) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![vals.len()], vals.clone()).unwrap()).unwrap();
        let cks: Vec<_> = (0..n).map(|i| Checkpoint::new(p.clone(), i as u64, Phase::TrainMain)).collect();
        let avg = average_checkpoints(&cks, n).unwrap();
        prop_assert_eq!(&avg.params.get("w").unwrap().data, &vals);
        prop_assert_eq!(avg.step, n as u64 - 1);
    }

    #[test]
    fn one_hot_teacher_matches_cross_entropy(t in 1usize..8, k in 2usize..6, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let lp = log_softmax_rows(&random_matrix(&mut rng, t, k, 3.0));
        let labels = common::random_labels(&mut rng, t, k as u32);
        let frames = labels.iter().map(|&l| vec![(l, 1.0)]).collect();
        let sparse = SparsePosterior { utt_id: "u".into(), k: 1, frames };
        let d = frame_distill_loss(Teacher::Sparse(&sparse), &lp, true).unwrap();
        let ce = frame_ce_loss(&lp, &labels).unwrap();
        prop_assert_eq!(d.loss, ce.loss);
        prop_assert_eq!(d.grad, ce.grad);
    }

    #[test]
    fn distillation_gap_non_negative(t in 1usize..8, k in 2usize..6, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let lp = log_softmax_rows(&random_matrix(&mut rng, t, k, 3.0));
        let teacher = common::random_posteriorgram(&mut rng, t, k);
        let d = frame_distill_loss(Teacher::Dense(&teacher), &lp, false).unwrap();
        prop_assert!(d.loss - d.teacher_entropy >= -1e-9);
        // the student equal to the teacher closes the gap
        let mut same = teacher.probs.clone();
        same.as_mut_slice().iter_mut().for_each(|v| *v = v.ln());
        let e = frame_distill_loss(Teacher::Dense(&teacher), &same, false).unwrap();
        prop_assert!((e.loss - e.teacher_entropy).abs() < 1e-6);
    }

    #[test]
    fn ctc_loss_non_negative_and_grad_rows_sum_to_zero(t in 1usize..10, k in 2usize..5, len in 0usize..4, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let blank = (k - 1) as u32;
        let labels = common::random_labels(&mut rng, len, blank);
        prop_assume!(dstl::losses::ctc_feasible(t, &labels));
        let lp = log_softmax_rows(&random_matrix(&mut rng, t, k, 3.0));
        let r = ctc_loss(&lp, &labels, blank).unwrap();
        prop_assert!(r.loss >= -1e-9);
        for row in r.grad.iter_rows() {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn beam_top1_bounded_by_saturating_beam(t in 1usize..7, k in 2usize..5, seed in any::<u64>()) {
        let lp = log_softmax_rows(&matrix(t, k, seed, 2.0));
        let blank = (k - 1) as u32;
        let exact = ctc_beam_search(&lp, 4096, None, 0.0).unwrap();
        let best = exact[0].score;
        prop_assert!((best + common::ctc_brute_force(&lp, &exact[0].tokens, blank)).abs() < 1e-9);
        for beam in [1, 2, 4, 8, 16] {
            let h = &ctc_beam_search(&lp, beam, None, 0.0).unwrap()[0];
            prop_assert!(h.score <= best + 1e-9, "beam {} score {} > {}", beam, h.score, best);
            prop_assert!(h.score <= -common::ctc_brute_force(&lp, &h.tokens, blank) + 1e-9);
        }
    }

    #[test]
    fn greedy_collapse_of_deterministic_path(path in proptest::collection::vec(0u32..4, 1..12)) {
        let rows: Vec<Vec<f64>> = path.iter().map(|&c| (0..4).map(|k| if k == c { 0.0 } else { f64::NEG_INFINITY }).collect()).collect();
        let lp = Matrix::from_rows(&rows).unwrap();
        prop_assert_eq!(ctc_greedy(&lp).unwrap(), collapse(&path, 3));
        prop_assert_eq!(&ctc_beam_search(&lp, 1, None, 0.0).unwrap()[0].tokens, &collapse(&path, 3));
    }

    #[test]
    fn wer_swaps_insertions_and_deletions(r in proptest::collection::vec(0u8..4, 0..10), h in proptest::collection::vec(0u8..4, 0..10)) {
        let a = edit_counts(&r, &h);
        let b = edit_counts(&h, &r);
        prop_assert_eq!(a.errors(), b.errors());
        prop_assert_eq!(a.subs + a.ins + a.dels, b.subs + b.dels + b.ins);
        prop_assert!(a.errors() >= r.len().abs_diff(h.len()));
    }

    #[test]
    fn ngram_scores_finite(corpus in proptest::collection::vec(proptest::collection::vec(0u32..5, 0..8), 1..6), order in 1usize..6, ctx in proptest::collection::vec(0u32..7, 0..8)) {
        let lm = train_ngram(&corpus, order).unwrap();
        for w in 0..=lm.eos() {
            prop_assert!(lm.log_score(&ctx, w).is_finite());
        }
    }

    #[test]
    fn segmentation_partitions_speech(path in proptest::collection::vec(prop_oneof![3 => Just(9u32), 1 => 0u32..3], 0..120), sub in 1usize..4, max in 1usize..60, ns in 1usize..40) {
        let frames = path.len() * sub;
        let r = segment_path("u", &path, 9, sub, frames, max, ns).unwrap();
        let mut last_end = 0;
        for s in &r.segments {
            prop_assert!(s.start_frame >= last_end);
            prop_assert!(s.end_frame > s.start_frame);
            prop_assert!(s.end_frame - s.start_frame <= max);
            prop_assert!(s.end_frame <= frames);
            last_end = s.end_frame;
        }
        // frames inside long blank runs belong to no segment
        let mut j = 0;
        while j < path.len() {
            if path[j] == 9 {
                let s = j;
                while j < path.len() && path[j] == 9 { j += 1; }
                if (j - s) * sub >= ns && j * sub <= frames {
                    for seg in &r.segments {
                        prop_assert!(seg.end_frame <= s * sub || seg.start_frame >= j * sub);
                    }
                }
            } else {
                j += 1;
            }
        }
    }

    #[test]
    fn topk_matches_full_sort(row in proptest::collection::vec(0.0f64..1.0, 1..10), k in 1usize..10) {
        let kept = top_k(&row, k);
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let want: Vec<f64> = sorted.into_iter().take(k).collect();
        prop_assert_eq!(kept.iter().map(|p| p.1).collect::<Vec<_>>(), want);
    }

    #[test]
    fn coverage_monotone_in_k(t in 1usize..6, c in 2usize..8, seed in any::<u64>()) {
        let post: Posteriorgram = common::random_posteriorgram(&mut common::rng(seed), t, c);
        let mut prev = 0.0;
        for k in 1..=c {
            let (_, cov) = sparsify("u", &post.probs, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&cov));
            prop_assert!(cov >= prev - 1e-12);
            prev = cov;
        }
        prop_assert!((prev - 1.0).abs() < 1e-9);
    }
}

fn video(id: &str, meta: String, hyp: &str, segs: usize) -> Video {
    Video {
        video_id: id.into(),
        segments: (0..segs)
            .map(|i| Utterance::new(FeatureSequence::new(format!("{id}-{i}"), Matrix::zeros(2, 2)).unwrap()))
            .collect(),
        metadata: meta,
        baseline_hyps: vec![hyp.to_string(); segs],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_idempotent_monotone_and_shared(
        specs in proptest::collection::vec((1usize..30, 0usize..3, 1usize..4), 1..8),
        lo in 1usize..20, hi in 20usize..60, widen in 0usize..10,
    ) {
        let vocab = Vocab::letters(8).unwrap();
        let videos: Vec<Video> = specs.iter().enumerate().map(|(i, &(len, hyp, segs))| {
            let meta: String = "ab cd ef gh ".repeat(8).chars().take(len).collect();
            let hyp = ["ab", "zz", "cd"][hyp];
            video(&format!("v{i}"), meta, hyp, segs)
        }).collect();
        let (kept, _) = filter_metadata(&videos, &vocab, lo, hi).unwrap();
        // sharing rule
        let mut by_video: BTreeMap<&str, Vec<&Vec<u32>>> = BTreeMap::new();
        for p in &kept {
            by_video.entry(p.parent_video_id.as_str()).or_default().push(&p.metadata_tokens);
        }
        for toks in by_video.values() {
            prop_assert!(toks.iter().all(|t| *t == toks[0]));
        }
        // idempotence: re-filtering the survivors keeps all of them
        let survivors: Vec<Video> = videos.iter().filter(|v| by_video.contains_key(v.video_id.as_str())).cloned().collect();
        let (again, _) = filter_metadata(&survivors, &vocab, lo, hi).unwrap();
        prop_assert_eq!(again.len(), kept.len());
        // widening the bounds never drops a kept video
        let (wide, _) = filter_metadata(&videos, &vocab, lo.saturating_sub(widen).max(1), hi + widen).unwrap();
        for p in &kept {
            prop_assert!(wide.iter().any(|w| w.segment.utt_id() == p.segment.utt_id()));
        }
    }

    #[test]
    fn sampler_batches_are_pure(a in 1usize..30, b in 1usize..30, r in 0.05f64..0.95, bs in 1usize..8, seed in any::<u64>()) {
        let sizes = BTreeMap::from([(SourceTag::SelfLabel, a), (SourceTag::Weak, b)]);
        let mix = MixSpec::new(&[(SourceTag::SelfLabel, r), (SourceTag::Weak, 1.0 - r)]).unwrap();
        let mut s = MixedBatchSampler::new(&sizes, mix, bs, seed).unwrap();
        for _ in 0..50 {
            let (tag, idx) = s.next_batch().unwrap();
            prop_assert!(!idx.is_empty() && idx.len() <= bs);
            prop_assert!(idx.iter().all(|&i| i < sizes[&tag]));
        }
    }
}
