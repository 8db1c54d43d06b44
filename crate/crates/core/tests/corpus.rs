use proptest::prelude::*;
use swlm_core::corpus::{
    batchify, batchify_with_tail, tokenize_text, unigram_ppl, EncodedStream, Vocabulary, EOS, UNK,
};

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,3}"
}

#[test]
fn unigram_oracle_by_hand() {
    let train = EncodedStream { tokens: vec![0, 0, 1] };
    let eval = EncodedStream { tokens: vec![0, 1] };
    // counts+1 = [3, 2, 1] over 3 + 3
    let expected = ((-(3.0f64 / 6.0).ln() - (2.0f64 / 6.0).ln()) / 2.0).exp();
    assert!((unigram_ppl(&train, &eval, 3).unwrap() - expected).abs() < 1e-12);
}

proptest! {
    #[test]
    fn vocabulary_round_trips_known_words(words in proptest::collection::vec(word(), 1..80)) {
        let v = Vocabulary::build(&words, 1).unwrap();
        prop_assert_eq!(v.decode(&v.encode(&words)), words.clone());
        prop_assert!(v.id(UNK).is_some() && v.id(EOS).is_some());
        let total: u64 = v.counts().iter().sum();
        prop_assert_eq!(total as usize, words.len());
    }

    #[test]
    fn rare_words_decode_to_unk(words in proptest::collection::vec(word(), 1..80), min in 1u64..4) {
        let v = Vocabulary::build(&words, min).unwrap();
        for (w, back) in words.iter().zip(v.decode(&v.encode(&words))) {
            let c = words.iter().filter(|x| *x == w).count() as u64;
            prop_assert_eq!(back == *w, c >= min);
        }
    }

    #[test]
    fn lanes_are_contiguous(n in 2usize..400, b in 1usize..6, t in 1usize..9) {
        let stream = EncodedStream { tokens: (0..n).collect() };
        match batchify(&stream, b, t) {
            Err(_) => prop_assert!(n < b * t + 1),
            Ok(batches) => {
                let lane = (n - 1) / b;
                prop_assert_eq!(batches.len(), lane / t);
                for lane_idx in 0..b {
                    let seq: Vec<usize> = batches.iter().flat_map(|x| x.inputs[lane_idx].clone()).collect();
                    let tgt: Vec<usize> = batches.iter().flat_map(|x| x.targets[lane_idx].clone()).collect();
                    let start = lane_idx * lane;
                    prop_assert_eq!(seq, (start..start + (lane / t) * t).collect::<Vec<_>>());
                    prop_assert!(tgt.iter().zip(batches.iter().flat_map(|x| x.inputs[lane_idx].clone())).all(|(y, x)| *y == x + 1));
                }
            }
        }
    }

    #[test]
    fn tail_batching_scores_every_lane_position(n in 2usize..300, b in 1usize..5, t in 1usize..9) {
        prop_assume!(n > b);
        let stream = EncodedStream { tokens: (0..n).collect() };
        let batches = batchify_with_tail(&stream, b, t).unwrap();
        let scored: usize = batches.iter().map(|x| x.batch_size() * x.steps()).sum();
        prop_assert_eq!(scored, b * ((n - 1) / b));
    }

    #[test]
    fn every_nonempty_line_ends_with_eos(lines in proptest::collection::vec(proptest::collection::vec(word(), 0..5), 0..6)) {
        let text: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
        let toks = tokenize_text(&text);
        let eos = toks.iter().filter(|t| *t == EOS).count();
        prop_assert_eq!(eos, lines.iter().filter(|l| !l.is_empty()).count());
        prop_assert_eq!(toks.len(), lines.iter().map(|l| l.len()).sum::<usize>() + eos);
    }
}
