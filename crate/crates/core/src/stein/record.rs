use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inapplicable,
}

impl CheckStatus {
    /// Pass when `holds`; otherwise fail only if the premises apply.
    pub fn conditional(holds: bool, applicable: bool) -> Self {
        match (holds, applicable) {
            (true, _) => CheckStatus::Pass,
            (false, true) => CheckStatus::Fail,
            (false, false) => CheckStatus::Inapplicable,
        }
    }

    pub fn hard(holds: bool) -> Self {
        if holds {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn is_fail(self) -> bool {
        self == CheckStatus::Fail
    }
}

/// One verification outcome, serialized as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub instance: serde_json::Value,
    pub status: CheckStatus,
    /// Smallest `bound - value` seen; negative means violated.
    pub worst_slack: Option<f64>,
    /// Flat counts of a violating state.
    pub witness: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckRecord {
    pub fn new(check_id: impl Into<String>, instance: serde_json::Value, status: CheckStatus) -> Self {
        Self { check_id: check_id.into(), instance, status, worst_slack: None, witness: None, note: None }
    }

    pub fn slack(mut self, slack: f64) -> Self {
        self.worst_slack = slack.is_finite().then_some(slack);
        self
    }

    pub fn witness(mut self, witness: Option<Vec<u32>>) -> Self {
        self.witness = witness;
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}
