use crate::features::{
    flow_channels, snapshot_channels, Dataset, NormStats, Rows, Sample, SnapshotFeature, Split,
    Variant,
};
use crate::feed::Side;

use super::{LabelledSequence, NetError, Sequence};

/// Random access to labelled sequences.
pub trait SequenceSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> u8;
    fn sequence(&self, i: usize) -> Sequence;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labelled(&self, i: usize) -> LabelledSequence {
        LabelledSequence {
            sequence: self.sequence(i),
            label: self.label(i),
        }
    }
}

impl SequenceSource for [LabelledSequence] {
    fn len(&self) -> usize {
        <[LabelledSequence]>::len(self)
    }
    fn label(&self, i: usize) -> u8 {
        self[i].label
    }
    fn sequence(&self, i: usize) -> Sequence {
        self[i].sequence.clone()
    }
}

impl SequenceSource for Vec<LabelledSequence> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn label(&self, i: usize) -> u8 {
        self[i].label
    }
    fn sequence(&self, i: usize) -> Sequence {
        self[i].sequence.clone()
    }
}

/// Sequences cut lazily out of a dataset's shared row table.
///
/// Normalized per-row channels are computed once; windows overlap, so this
/// is far smaller than materializing every sample. `Bench1` market-order
/// rates depend on the whole window and are finished per sample from prefix
/// counts.
#[derive(Debug, Clone)]
pub struct DatasetSequences {
    window: usize,
    width: usize,
    row_width: usize,
    numeric: Vec<f64>,
    cats: Vec<[u8; 3]>,
    rates: Option<RateTable>,
    samples: Vec<Sample>,
}

#[derive(Debug, Clone)]
struct RateTable {
    buys: Vec<u32>,
    sells: Vec<u32>,
    bid_orders: Vec<u32>,
    ask_orders: Vec<u32>,
    mean: [f64; 2],
    sd: [f64; 2],
}

impl DatasetSequences {
    /// Samples of `split` (all samples when `None`), normalized with `norm`.
    pub fn new(
        ds: &Dataset,
        split: Option<Split>,
        norm: Option<&NormStats>,
    ) -> Result<Self, NetError> {
        let norm = norm.ok_or(NetError::MissingStats)?;
        let variant = ds.header.variant;
        let width = variant.numeric_channels(ds.header.depth);
        if norm.channels() != width {
            return Err(NetError::ShapeMismatch(format!(
                "normalization has {} channels, dataset has {width}",
                norm.channels()
            )));
        }
        let samples: Vec<Sample> = ds
            .samples
            .iter()
            .filter(|s| split.is_none() || s.split == split)
            .copied()
            .collect();
        let mut numeric = Vec::new();
        let mut cats = Vec::new();
        let mut rates = None;
        let row_width;
        match &ds.rows {
            Rows::Flow(rows) => {
                row_width = width;
                numeric.reserve(rows.len() * width);
                cats.reserve(rows.len());
                for r in rows {
                    match &r.feature {
                        Some(f) => {
                            let mut ch = flow_channels(f);
                            norm.apply(&mut ch);
                            numeric.extend_from_slice(&ch);
                            cats.push([f.kind.category() - 1, f.side.category() - 1, f.hour]);
                        }
                        // never inside a sample window
                        None => {
                            numeric.extend(std::iter::repeat_n(f64::NAN, width));
                            cats.push([0, 0, 0]);
                        }
                    }
                }
            }
            Rows::Book(rows) => {
                row_width = 4 * ds.header.depth;
                let base = NormStats {
                    mean: norm.mean[..row_width].to_vec(),
                    sd: norm.sd[..row_width].to_vec(),
                };
                numeric.reserve(rows.len() * row_width);
                for r in rows {
                    let f = SnapshotFeature {
                        snapshot: r.snapshot.clone(),
                        mid_half_ticks: r.mid_half_ticks,
                        mo_rate_buy: 0.0,
                        mo_rate_sell: 0.0,
                        variant: Variant::Bench2,
                    };
                    let mut ch = snapshot_channels(&f);
                    base.apply(&mut ch);
                    numeric.extend_from_slice(&ch);
                }
                if variant == Variant::Bench1 {
                    let mut buys = vec![0u32; rows.len() + 1];
                    let mut sells = vec![0u32; rows.len() + 1];
                    for (i, r) in rows.iter().enumerate() {
                        buys[i + 1] = buys[i] + u32::from(r.market_side == Some(Side::Buy));
                        sells[i + 1] = sells[i] + u32::from(r.market_side == Some(Side::Sell));
                    }
                    rates = Some(RateTable {
                        buys,
                        sells,
                        bid_orders: rows.iter().map(|r| r.best_bid_orders).collect(),
                        ask_orders: rows.iter().map(|r| r.best_ask_orders).collect(),
                        mean: [norm.mean[width - 2], norm.mean[width - 1]],
                        sd: [norm.sd[width - 2], norm.sd[width - 1]],
                    });
                }
            }
        }
        Ok(DatasetSequences {
            window: ds.header.window,
            width,
            row_width,
            numeric,
            cats,
            rates,
            samples,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

impl SequenceSource for DatasetSequences {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, i: usize) -> u8 {
        self.samples[i].label
    }

    fn sequence(&self, i: usize) -> Sequence {
        let end = self.samples[i].end;
        let start = end - self.window;
        let rows = start..end;
        let cats = if self.cats.is_empty() {
            Vec::new()
        } else {
            self.cats[rows.clone()].to_vec()
        };
        let numeric = match &self.rates {
            None => self.numeric[start * self.row_width..end * self.row_width].to_vec(),
            Some(rt) => {
                let buys = (rt.buys[end] - rt.buys[start]) as f64;
                let sells = (rt.sells[end] - rt.sells[start]) as f64;
                let rate = |count: f64, orders: u32| {
                    if orders == 0 {
                        0.0
                    } else {
                        count / orders as f64
                    }
                };
                let mut out = Vec::with_capacity(self.window * self.width);
                for r in rows {
                    out.extend_from_slice(
                        &self.numeric[r * self.row_width..(r + 1) * self.row_width],
                    );
                    out.push((rate(buys, rt.bid_orders[r]) - rt.mean[0]) / rt.sd[0]);
                    out.push((rate(sells, rt.ask_orders[r]) - rt.mean[1]) / rt.sd[1]);
                }
                out
            }
        };
        Sequence {
            steps: self.window,
            cats,
            numeric,
        }
    }
}
