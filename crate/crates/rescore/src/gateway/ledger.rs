//! Fixed-point money and token/cost accounting.
//!
//! All currency is carried as integer micro-dollars so that per-request,
//! per-essay, and per-run rollups are exact sums — no float drift between a
//! run total and the sum of its parts.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// An amount of money in integer micro-dollars (1 USD = 1_000_000).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_micro_usd(micro: i64) -> Self {
        Money(micro)
    }

    /// Converts a USD amount, rounding to the nearest micro-dollar.
    pub fn from_usd(usd: f64) -> Self {
        Money((usd * 1_000_000.0).round() as i64)
    }

    pub fn micro_usd(self) -> i64 {
        self.0
    }

    pub fn as_usd(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    /// Four decimal places, e.g. `$0.0021`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / 1_000_000;
        // Round the fractional part to 4 places (half up on the dropped digits).
        let frac = (abs % 1_000_000 + 50) / 100;
        if frac == 10_000 {
            write!(f, "{sign}${}.0000", whole + 1)
        } else {
            write!(f, "{sign}${whole}.{frac:04}")
        }
    }
}

/// Token prices in micro-dollars per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_1k: Money,
    pub completion_per_1k: Money,
}

impl Pricing {
    pub const FREE: Pricing = Pricing {
        prompt_per_1k: Money::ZERO,
        completion_per_1k: Money::ZERO,
    };

    pub fn from_usd_per_1k(prompt: f64, completion: f64) -> Self {
        Pricing {
            prompt_per_1k: Money::from_usd(prompt),
            completion_per_1k: Money::from_usd(completion),
        }
    }
}

fn component_cost(tokens: u64, price_per_1k: Money) -> i64 {
    // Round half up in exact integer arithmetic.
    let raw = tokens as i128 * price_per_1k.micro_usd() as i128;
    ((raw + 500) / 1000) as i64
}

/// Cost of one response at the given prices.
pub fn estimate_cost(prompt_tokens: u64, completion_tokens: u64, pricing: Pricing) -> Money {
    Money::from_micro_usd(
        component_cost(prompt_tokens, pricing.prompt_per_1k)
            + component_cost(completion_tokens, pricing.completion_per_1k),
    )
}

/// Accounting entry for one completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestUsage {
    pub request_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essay_id: Option<u64>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_micro_usd: Money,
    pub latency_ms: u64,
}

/// Sum of usage over some scope (an essay, a run).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageRollup {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_micro_usd: Money,
    pub latency_ms: u64,
}

impl UsageRollup {
    pub fn absorb(&mut self, usage: &RequestUsage) {
        self.requests += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.cost_micro_usd += usage.cost_micro_usd;
        self.latency_ms += usage.latency_ms;
    }

    pub fn merge(&mut self, other: &UsageRollup) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.cost_micro_usd += other.cost_micro_usd;
        self.latency_ms += other.latency_ms;
    }
}

/// Per-request records with per-essay and per-run rollups that stay equal to
/// the sum of their parts by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    requests: Vec<RequestUsage>,
    per_essay: BTreeMap<u64, UsageRollup>,
    run: UsageRollup,
}

impl UsageLedger {
    pub fn record(&mut self, usage: RequestUsage) {
        if let Some(essay_id) = usage.essay_id {
            self.per_essay.entry(essay_id).or_default().absorb(&usage);
        }
        self.run.absorb(&usage);
        self.requests.push(usage);
    }

    pub fn requests(&self) -> &[RequestUsage] {
        &self.requests
    }

    pub fn per_essay(&self) -> &BTreeMap<u64, UsageRollup> {
        &self.per_essay
    }

    pub fn run_total(&self) -> UsageRollup {
        self.run
    }

    /// Recomputes both rollup levels from the raw records and checks they
    /// match the maintained ones: run total == Σ essay totals == Σ requests.
    pub fn conservation_holds(&self) -> bool {
        let mut from_requests = UsageRollup::default();
        for r in &self.requests {
            from_requests.absorb(r);
        }
        let mut from_essays = UsageRollup::default();
        for rollup in self.per_essay.values() {
            from_essays.merge(rollup);
        }
        // Requests without an essay id (none in practice) would sit only in
        // the run rollup; compare what is comparable.
        let essays_cover_all = self.requests.iter().all(|r| r.essay_id.is_some());
        from_requests == self.run && (!essays_cover_all || from_essays == self.run)
    }
}
