use std::collections::HashSet;

use genex_core::tokenizer::{layout_ids, InputSeqs, SegmentScheme, Vocab, BOS, EOS, PAD, SEP};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec("[a-f]{1,7}", 1..12)
}

proptest! {
    #[test]
    fn decode_inverts_tokenize_on_covered_text(corpus in words(), size in 20usize..80) {
        let text = corpus.join(" ");
        let vocab = Vocab::train([text.as_str()], size.max(5 + 12)).unwrap();
        let ids = vocab.encode_text(&text);
        prop_assert_eq!(vocab.decode(&ids).unwrap(), text);
    }

    #[test]
    fn tokenize_never_emits_structural_specials(corpus in words(), probe in "[a-z ]{0,30}") {
        let text = corpus.join(" ");
        let vocab = Vocab::train([text.as_str()], 40).unwrap();
        for piece in vocab.tokenize(&probe) {
            for id in [PAD, BOS, EOS, SEP] {
                prop_assert_ne!(Some(id), vocab.id(&piece));
            }
        }
    }

    #[test]
    fn occur_segments_mark_exactly_query_ids(
        q in proptest::collection::vec(5u32..15, 1..5),
        d in proptest::collection::vec(5u32..15, 1..20),
    ) {
        let qset: HashSet<u32> = q.iter().copied().collect();
        let InputSeqs::Joint(seq) = layout_ids(&q, &d, SegmentScheme::Occur).unwrap() else {
            unreachable!()
        };
        prop_assert_eq!(seq.ids.len(), seq.segments.len());
        for (id, s) in seq.ids.iter().zip(&seq.segments) {
            prop_assert_eq!(*s == 0, qset.contains(id));
        }
    }
}
