use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureError, Split, SplitCounts};

/// Half-open `[start_ms, end_ms)` interval of event timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl TimeRange {
    pub fn new(start_ms: i64, end_ms: i64) -> Self {
        TimeRange { start_ms, end_ms }
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start_ms <= ts && ts < self.end_ms
    }

    pub fn is_empty(&self) -> bool {
        self.start_ms >= self.end_ms
    }

    fn overlaps(&self, other: &TimeRange) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.start_ms < other.end_ms
            && other.start_ms < self.end_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: TimeRange,
    pub validation: TimeRange,
    pub test: TimeRange,
}

impl SplitRanges {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| r.start_ms > r.end_ms) {
            return Err(FeatureError::UnorderedRanges);
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if all[i].overlaps(&all[j]) {
                    return Err(FeatureError::OverlappingRanges);
                }
            }
        }
        if self.train.end_ms > self.validation.start_ms
            || self.validation.end_ms > self.test.start_ms
        {
            return Err(FeatureError::UnorderedRanges);
        }
        Ok(())
    }

    pub fn classify(&self, ts: i64) -> Option<Split> {
        if self.train.contains(ts) {
            Some(Split::Train)
        } else if self.validation.contains(ts) {
            Some(Split::Validation)
        } else if self.test.contains(ts) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Tags every sample by the range holding its labelling timestamp, drops the
/// rest, and fits input normalization on the training split only.
pub fn split_by_date(mut dataset: Dataset, ranges: SplitRanges) -> Result<Dataset, FeatureError> {
    ranges.validate()?;
    let before = dataset.samples.len() as u64;
    for s in dataset.samples.iter_mut() {
        s.split = ranges.classify(s.event_ts);
    }
    dataset.samples.retain(|s| s.split.is_some());
    let count = |split| {
        dataset
            .samples
            .iter()
            .filter(|s| s.split == Some(split))
            .count() as u64
    };
    dataset.header.counts = SplitCounts {
        train: count(Split::Train),
        validation: count(Split::Validation),
        test: count(Split::Test),
        dropped: before - dataset.samples.len() as u64,
    };
    dataset.header.ranges = Some(ranges);
    dataset.fit_normalization();
    Ok(dataset)
}
