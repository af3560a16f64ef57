//! Forward-pass accounting for LLM re-rankers and the listwise sliding window.
//!
//! One prefill counts as one forward pass regardless of its length; each
//! generated token is one decode forward pass. The calibration pass of the
//! attention re-ranker counts as a full forward pass even when the document
//! prefix is served from a KV cache.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MalformedRanking;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ComplexityError {
    #[error("invalid window parameters: window {window}, stride {stride}")]
    InvalidWindowParams { window: usize, stride: usize },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("N must be at least 1")]
    EmptyCandidateList,
}

/// Half-open window `[start, end)` over the candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Windows in processing order: tail of the list first, head last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub n: usize,
    pub window: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_STRIDE: usize = 10;

pub fn sliding_window_schedule(n: usize, window: usize, stride: usize) -> Result<WindowSchedule, ComplexityError> {
    if stride == 0 || window < stride {
        return Err(ComplexityError::InvalidWindowParams { window, stride });
    }
    let windows = if n <= window {
        vec![Window { start: 0, end: n }]
    } else {
        let count = (n - window).div_ceil(stride) + 1;
        (0..count)
            .map(|i| {
                let end = n - i * stride;
                Window {
                    start: end.saturating_sub(window),
                    end,
                }
            })
            .collect()
    };
    Ok(WindowSchedule {
        n,
        window,
        stride,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowStats {
    pub windows: usize,
    pub malformed: usize,
}

/// Apply a listwise re-ranker window by window. `rerank` receives the current
/// window contents and returns 1-based identifiers in ranked order; a
/// malformed output leaves that window unchanged.
pub fn apply_sliding_window<T: Clone>(
    items: &[T],
    schedule: &WindowSchedule,
    mut rerank: impl FnMut(&[T]) -> Result<Vec<usize>, MalformedRanking>,
) -> (Vec<T>, WindowStats) {
    let mut current = items.to_vec();
    let mut stats = WindowStats::default();
    for w in &schedule.windows {
        stats.windows += 1;
        let slot = &current[w.start..w.end];
        match rerank(slot) {
            Ok(order) if order.len() == slot.len() => {
                let reordered: Vec<T> = order.iter().map(|&id| slot[id - 1].clone()).collect();
                current.splice(w.start..w.end, reordered);
            }
            _ => stats.malformed += 1,
        }
    }
    (current, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pointwise,
    PairwiseAllpairs,
    PairwiseSort,
    ListwiseWindow,
    Icr,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pointwise,
        Method::PairwiseAllpairs,
        Method::PairwiseSort,
        Method::ListwiseWindow,
        Method::Icr,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pointwise => "pointwise",
            Method::PairwiseAllpairs => "pairwise_allpairs",
            Method::PairwiseSort => "pairwise_sort",
            Method::ListwiseWindow => "listwise_window",
            Method::Icr => "icr",
        })
    }
}

impl FromStr for Method {
    type Err = ComplexityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| ComplexityError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    /// Generated tokens per pointwise or pairwise call.
    pub decode_per_call: u64,
    pub window: usize,
    pub stride: usize,
    /// Decode passes per listwise window; `None` means one per identifier in the window.
    pub decode_per_window: Option<u64>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            decode_per_call: 1,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            decode_per_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardPasses {
    pub prefill: u64,
    pub decode: u64,
    pub api_calls: u64,
}

impl ForwardPasses {
    pub fn total(&self) -> u64 {
        self.prefill + self.decode
    }
}

pub fn count_forward_passes(method: Method, n: usize, params: &CostParams) -> Result<ForwardPasses, ComplexityError> {
    if n == 0 {
        return Err(ComplexityError::EmptyCandidateList);
    }
    let n64 = n as u64;
    let per_call = |calls: u64| ForwardPasses {
        prefill: calls,
        decode: calls * params.decode_per_call,
        api_calls: calls,
    };
    Ok(match method {
        Method::Icr => ForwardPasses {
            prefill: 2,
            decode: 0,
            api_calls: 2,
        },
        Method::Pointwise => per_call(n64),
        Method::PairwiseAllpairs => per_call(n64 * (n64 - 1)),
        Method::PairwiseSort => {
            // comparison sort: about n·⌈log2 n⌉ comparisons
            let log = if n <= 1 {
                0
            } else {
                u64::from(usize::BITS - (n - 1).leading_zeros())
            };
            per_call(n64 * log)
        }
        Method::ListwiseWindow => {
            let schedule = sliding_window_schedule(n, params.window, params.stride)?;
            let decode = schedule
                .windows
                .iter()
                .map(|w| params.decode_per_window.unwrap_or(w.len() as u64))
                .sum();
            let calls = schedule.windows.len() as u64;
            ForwardPasses {
                prefill: calls,
                decode,
                api_calls: calls,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = sliding_window_schedule(100, 20, 10).unwrap();
        assert_eq!(s.windows.len(), 9);
        assert_eq!(s.windows[0], Window { start: 80, end: 100 });
        assert_eq!(s.windows[8], Window { start: 0, end: 20 });
        assert_eq!(
            sliding_window_schedule(15, 20, 10).unwrap().windows,
            vec![Window { start: 0, end: 15 }]
        );
        let s = sliding_window_schedule(25, 20, 10).unwrap();
        assert_eq!(
            s.windows,
            vec![Window { start: 5, end: 25 }, Window { start: 0, end: 15 }]
        );
    }

    #[test]
    fn schedule_errors() {
        assert!(sliding_window_schedule(10, 5, 0).is_err());
        assert!(sliding_window_schedule(10, 5, 6).is_err());
    }

    #[test]
    fn fp_examples() {
        let p = CostParams::default();
        assert_eq!(count_forward_passes(Method::Icr, 100, &p).unwrap().total(), 2);
        let lw = CostParams {
            decode_per_window: Some(20),
            ..p
        };
        assert_eq!(
            count_forward_passes(Method::ListwiseWindow, 100, &lw).unwrap().total(),
            189
        );
        assert_eq!(
            count_forward_passes(Method::ListwiseWindow, 100, &p).unwrap().total(),
            189
        );
        let pw = count_forward_passes(Method::Pointwise, 10, &p).unwrap();
        assert_eq!((pw.prefill, pw.decode, pw.total()), (10, 10, 20));
        assert_eq!(
            count_forward_passes(Method::PairwiseAllpairs, 4, &p).unwrap().api_calls,
            12
        );
        assert_eq!(count_forward_passes(Method::PairwiseSort, 8, &p).unwrap().api_calls, 24);
        assert_eq!(
            count_forward_passes(Method::Icr, 0, &p),
            Err(ComplexityError::EmptyCandidateList)
        );
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            "setwise".parse::<Method>(),
            Err(ComplexityError::UnknownMethod("setwise".into()))
        );
    }

    #[test]
    fn sliding_window_moves_best_to_front() {
        // relevance = value; a perfect listwise model sorts each window descending
        let items: Vec<u32> = (0..30).collect();
        let s = sliding_window_schedule(items.len(), 10, 5).unwrap();
        let (out, stats) = apply_sliding_window(&items, &s, |w| {
            let mut idx: Vec<usize> = (1..=w.len()).collect();
            idx.sort_by_key(|&i| std::cmp::Reverse(w[i - 1]));
            Ok(idx)
        });
        assert_eq!(stats.malformed, 0);
        assert_eq!(out[..5], [29, 28, 27, 26, 25]);
    }

    #[test]
    fn malformed_window_keeps_order() {
        let items = vec!['a', 'b', 'c'];
        let s = sliding_window_schedule(3, 20, 10).unwrap();
        let (out, stats) = apply_sliding_window(&items, &s, |_| Err(MalformedRanking("x".into())));
        assert_eq!(out, items);
        assert_eq!(stats.malformed, 1);
    }
}
