/// Work budgets shared by exhaustive and sampled code paths.
///
/// `enumeration_cap` bounds how many group elements may be materialized at
/// once, `work_cap` bounds elementary steps of brute-force loops, and
/// `sample_budget` is the default sample count when an operation falls back
/// from exhaustive to Monte Carlo evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub enumeration_cap: u128,
    pub work_cap: u128,
    pub sample_budget: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            enumeration_cap: 1 << 20,
            work_cap: 100_000_000,
            sample_budget: 100_000,
        }
    }
}

impl Budget {
    /// Budget with every cap raised by `factor`. Used by callers that have
    /// an explicit override (CLI flag or the GOWERSLAB_BUDGET variable).
    pub fn scaled(self, factor: u128) -> Self {
        Budget {
            enumeration_cap: self.enumeration_cap.saturating_mul(factor),
            work_cap: self.work_cap.saturating_mul(factor),
            sample_budget: self.sample_budget.saturating_mul(factor as u64),
        }
    }

    /// Apply the GOWERSLAB_BUDGET environment variable, interpreted as a
    /// replacement for `work_cap` (and as a floor for the enumeration cap).
    pub fn with_env_override(mut self) -> Self {
        if let Ok(raw) = std::env::var("GOWERSLAB_BUDGET") {
            if let Ok(cap) = raw.trim().parse::<u128>() {
                self.work_cap = cap;
                self.enumeration_cap = self.enumeration_cap.max(cap);
            }
        }
        self
    }

    pub fn check_enumeration(&self, needed: u128) -> crate::Result<()> {
        if needed > self.enumeration_cap {
            return Err(crate::Error::EnumerationCapExceeded {
                needed,
                cap: self.enumeration_cap,
            });
        }
        Ok(())
    }

    pub fn check_work(&self, needed: u128) -> crate::Result<()> {
        if needed > self.work_cap {
            return Err(crate::Error::WorkCapExceeded {
                needed,
                cap: self.work_cap,
            });
        }
        Ok(())
    }
}
