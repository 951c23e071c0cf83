use orderflow::feed::{generate_synthetic, GeneratorConfig, OrderEvent, Qty, Side};
use orderflow::lob::OrderBook;
use orderflow::reference::{book_equivalence, NaiveBook};
use proptest::prelude::*;

fn aggressive(events: usize) -> GeneratorConfig {
    GeneratorConfig {
        events,
        aggressive_probability: 0.1,
        max_offset_ticks: 4,
        ..GeneratorConfig::default()
    }
}

#[test]
fn generated_stream_matches_reference_book() {
    let events = generate_synthetic(&aggressive(20_000), 17).unwrap();
    assert_eq!(book_equivalence(&events), Ok(20_000));
}

#[test]
fn book_invariants_hold_after_every_event() {
    let events = generate_synthetic(&aggressive(5_000), 4).unwrap();
    let mut book = OrderBook::default();
    for ev in &events {
        let before = (book.best_bid(), book.best_ask());
        let delta = book.apply_event(ev).unwrap();
        book.check_invariants().unwrap();
        // mid moves only when a best price moves
        if delta.mid_changed() {
            assert_ne!(before, (book.best_bid(), book.best_ask()));
        }
        for side in [Side::Buy, Side::Sell] {
            if let Some(best) = book.best(side) {
                assert_eq!(book.relative_price(side, Some(best)), Ok(1));
            }
        }
    }
}

#[test]
fn snapshots_match_reference_top_levels() {
    let events = generate_synthetic(&aggressive(3_000), 8).unwrap();
    let mut book = OrderBook::default();
    let mut naive = NaiveBook::new();
    for ev in &events {
        book.apply_event(ev).unwrap();
        naive.apply(ev).unwrap();
        for depth in [1, 3, 5] {
            let snap = book.snapshot(depth);
            for (side, levels) in [(Side::Buy, &snap.bids), (Side::Sell, &snap.asks)] {
                let want = naive.levels(side);
                for (i, lvl) in levels.iter().enumerate() {
                    match want.get(i) {
                        Some(&(p, v, _)) => {
                            assert_eq!(
                                (lvl.price_ticks, lvl.volume.units(), lvl.padded),
                                (p, v, false)
                            )
                        }
                        None => assert!(lvl.padded && lvl.volume.is_zero()),
                    }
                }
            }
            assert!(snap
                .bids
                .windows(2)
                .all(|w| w[0].price_ticks > w[1].price_ticks));
            assert!(snap
                .asks
                .windows(2)
                .all(|w| w[0].price_ticks < w[1].price_ticks));
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Limit(bool, i64, u64),
    Market(bool, u64),
    Cancel(usize, u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (any::<bool>(), 95i64..106, 1u64..6).prop_map(|(b, p, s)| Op::Limit(b, p, s)),
        1 => (any::<bool>(), 1u64..10).prop_map(|(b, s)| Op::Market(b, s)),
        2 => (0usize..64, 1u64..4).prop_map(|(i, s)| Op::Cancel(i, s)),
    ]
}

proptest! {
    #[test]
    fn arbitrary_streams_match_reference(ops in proptest::collection::vec(op(), 1..120)) {
        let mut events = Vec::new();
        let mut ids: Vec<(String, Side, i64)> = Vec::new();
        for (i, op) in ops.into_iter().enumerate() {
            let seq = i as u64 + 1;
            let side = |b: bool| if b { Side::Buy } else { Side::Sell };
            let ev = match op {
                Op::Limit(b, p, s) => {
                    let id = format!("o{seq}");
                    ids.push((id.clone(), side(b), p));
                    OrderEvent::limit(seq as i64, seq, side(b), p, Qty(s), id)
                }
                Op::Market(b, s) => OrderEvent::market(seq as i64, seq, side(b), Qty(s), format!("m{seq}")),
                Op::Cancel(i, s) => {
                    if ids.is_empty() { continue; }
                    let (id, side, p) = ids[i % ids.len()].clone();
                    OrderEvent::cancel(seq as i64, seq, side, p, Qty(s), id)
                }
            };
            events.push(ev);
        }
        // rejected events (unknown ids, over-cancels, empty-book markets) must be rejected by both
        prop_assert_eq!(book_equivalence(&events), Ok(events.len()));
    }
}
