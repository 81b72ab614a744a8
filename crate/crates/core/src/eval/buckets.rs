//! Accuracy by response length (sentence count), in equal-width buckets.

use num_rational::Ratio;
use serde::Serialize;

use crate::eval::grade::{GradeError, Percent, QuestionResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepBucket {
    pub index: usize,
    /// Bucket spans `(lower, upper]`; the first bucket also includes `lower`.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub correct: usize,
    pub accuracy: Option<Percent>,
}

/// Bucket index for a sentence count. Values on a boundary go to the lower bucket.
fn bucket_of(count: usize, min: usize, max: usize, n_buckets: usize) -> usize {
    if max == min {
        return 0;
    }
    let position = Ratio::new((count - min) as u64 * n_buckets as u64, (max - min) as u64);
    (position.ceil().to_integer() as usize).saturating_sub(1).min(n_buckets - 1)
}

/// Splits answered questions into `n_buckets` equal-width sentence-count
/// ranges over `[min, max]` and reports accuracy per bucket. Questions whose
/// LLM call failed are left out.
pub fn bucket_by_steps(results: &[QuestionResult], n_buckets: usize) -> Result<Vec<StepBucket>, GradeError> {
    if n_buckets == 0 {
        return Err(GradeError::NoBuckets);
    }
    let answered: Vec<&QuestionResult> = results.iter().filter(|r| r.error.is_none()).collect();
    let min = answered.iter().map(|r| r.sentence_count).min().ok_or(GradeError::NoResponses)?;
    let max = answered.iter().map(|r| r.sentence_count).max().ok_or(GradeError::NoResponses)?;

    let width = (max - min) as f64 / n_buckets as f64;
    let mut buckets: Vec<StepBucket> = (0..n_buckets)
        .map(|i| StepBucket {
            index: i,
            lower: min as f64 + width * i as f64,
            upper: min as f64 + width * (i + 1) as f64,
            count: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    for r in answered {
        let bucket = &mut buckets[bucket_of(r.sentence_count, min, max, n_buckets)];
        bucket.count += 1;
        bucket.correct += usize::from(r.correct);
    }
    for bucket in &mut buckets {
        if bucket.count > 0 {
            bucket.accuracy = Some(Percent::of(bucket.correct, bucket.count));
        }
    }
    Ok(buckets)
}
