use hybridvc::codecs::{decode_reference, encode_reference, CodecConfig, CodecId, Frame};
use hybridvc::container::{demux, framing_bytes, mux, ReferenceEntry, StreamMeta};
use hybridvc::neural::{bilinear_sample, Tensor};
use hybridvc::scenedetect::{cuts_from_scores, detect_cuts, select_references, RefPolicy};
use hybridvc::training::data::write_patch;
use hybridvc::training::Augment;
use proptest::prelude::*;

fn meta(frame_count: u32) -> StreamMeta {
    StreamMeta {
        lossy_codec_id: CodecId::MockLossy,
        ref_codec_default: CodecId::MockLossless,
        width: 64,
        height: 48,
        frame_count,
    }
}

fn codec_id() -> impl Strategy<Value = CodecId> {
    prop_oneof![Just(CodecId::MockLossless), Just(CodecId::ExternalLossless)]
}

/// Valid reference tables: unique indices below `frame_count`, non-empty payloads.
fn references() -> impl Strategy<Value = (u32, Vec<ReferenceEntry>)> {
    (1u32..400).prop_flat_map(|frames| {
        let entries = prop::collection::btree_map(0..frames, (codec_id(), prop::collection::vec(any::<u8>(), 1..64)), 1..6);
        (Just(frames), entries).prop_map(|(frames, map)| {
            let refs = map
                .into_iter()
                .map(|(frame_index, (codec_id, payload))| ReferenceEntry {
                    frame_index,
                    codec_id,
                    payload,
                })
                .collect();
            (frames, refs)
        })
    })
}

fn frame(w: usize, h: usize) -> impl Strategy<Value = Frame> {
    prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |rgb| Frame::from_rgb8(w, h, &rgb).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn container_round_trip(
        (frames, mut refs) in references(),
        lossy in prop::collection::vec(any::<u8>(), 0..256),
        shuffle in any::<u64>(),
    ) {
        let sorted = refs.clone();
        // mux takes references in any order
        let n = refs.len();
        refs.rotate_left((shuffle as usize) % n);
        let bytes = mux(&lossy, &refs, &meta(frames)).unwrap();
        prop_assert_eq!(&bytes, &mux(&lossy, &refs, &meta(frames)).unwrap());
        let back = demux(&bytes).unwrap();
        prop_assert_eq!(&back.lossy_bitstream, &lossy);
        prop_assert_eq!(&back.references, &sorted);
        prop_assert_eq!(back.meta, meta(frames));
        let payloads: usize = lossy.len() + sorted.iter().map(|r| r.payload.len()).sum::<usize>();
        prop_assert_eq!(bytes.len() - payloads, framing_bytes(n));
        prop_assert!(bytes.len() - payloads <= 64 + 24 * n);
    }

    #[test]
    fn truncated_containers_never_parse(
        (frames, refs) in references(),
        cut in any::<prop::sample::Index>(),
    ) {
        let bytes = mux(&[7, 7, 7], &refs, &meta(frames)).unwrap();
        let short = &bytes[..cut.index(bytes.len())];
        prop_assert!(demux(short).is_err());
    }

    #[test]
    fn lossless_reference_round_trip(f in (8usize..24, 8usize..24).prop_flat_map(|(w, h)| frame(w, h))) {
        let cfg = CodecConfig::mock_lossless();
        let payload = encode_reference(&f, &cfg).unwrap();
        let back = decode_reference(&payload, &cfg).unwrap();
        prop_assert_eq!(back.to_rgb8(), f.to_rgb8());
    }

    #[test]
    fn raising_the_threshold_never_adds_cuts(
        scores in prop::collection::vec(0.0f64..80.0, 1..120),
        mut thresholds in prop::collection::vec(1.0f64..80.0, 5),
        min_len in 1usize..20,
    ) {
        thresholds.sort_by(f64::total_cmp);
        let counts: Vec<usize> = thresholds.iter().map(|&t| cuts_from_scores(&scores, t, min_len).cut_indices.len()).collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?}", counts);
    }

    #[test]
    fn cuts_only_look_backwards(
        levels in prop::collection::vec(0u8..=255, 4..18),
        split in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let frames: Vec<Frame> = levels
            .iter()
            .map(|&v| { let v = v as f32 / 255.0; Frame::filled(16, 16, [v, 1.0 - v, v * v]).unwrap() })
            .collect();
        let t = split.index(frames.len());
        let mut permuted = frames.clone();
        let tail = &mut permuted[t + 1..];
        // deterministic shuffle of the frames after t
        let mut s = seed;
        for i in (1..tail.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            tail.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = detect_cuts(&frames, 20.0, 2).unwrap();
        let b = detect_cuts(&permuted, 20.0, 2).unwrap();
        let before = |c: &Vec<usize>| c.iter().copied().filter(|&i| i <= t).collect::<Vec<_>>();
        prop_assert_eq!(before(&a.cut_indices), before(&b.cut_indices));

        let refs = select_references(frames.len(), &a, RefPolicy::SceneCut);
        prop_assert_eq!(refs[0], 0);
        prop_assert!(refs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn augmentation_keeps_pairs_aligned(
        (x, c) in (frame(12, 12), frame(12, 12)),
        rotation in 0u8..4,
        flip in any::<bool>(),
    ) {
        let p = 12;
        let l2 = |aug: Augment| {
            let mut a = Tensor::zeros([1, 3, p, p]);
            let mut b = Tensor::zeros([1, 3, p, p]);
            write_patch(&x, 0, 0, p, aug, &mut a, 0);
            write_patch(&c, 0, 0, p, aug, &mut b, 0);
            let mut d: Vec<f64> = a.data().iter().zip(b.data()).map(|(u, v)| ((u - v) as f64).powi(2)).collect();
            // summation order changes with the permutation
            d.sort_by(f64::total_cmp);
            d.iter().sum::<f64>()
        };
        prop_assert_eq!(l2(Augment { rotation, flip }), l2(Augment::IDENTITY));
    }

    #[test]
    fn bilinear_sampling_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 30),
        b in prop::collection::vec(-1.0f64..1.0, 30),
        alpha in -2.0f64..2.0,
        y in -1.5f64..6.5,
        x in -1.5f64..5.5,
    ) {
        let ta = Tensor::from_vec([1, 1, 6, 5], a).unwrap();
        let tb = Tensor::from_vec([1, 1, 6, 5], b).unwrap();
        let mix = Tensor::from_vec([1, 1, 6, 5], ta.data().iter().zip(tb.data()).map(|(u, v)| alpha * u + v).collect()).unwrap();
        let lhs = bilinear_sample(&mix, 0, y, x)[0];
        let rhs = alpha * bilinear_sample(&ta, 0, y, x)[0] + bilinear_sample(&tb, 0, y, x)[0];
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}
