use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassList, Detection, Feature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// What a detected class means to the decision engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassRole {
    Ok { feature: String },
    Fault { feature: String },
    Ignore,
}

impl ClassRole {
    fn feature(&self) -> Option<&str> {
        match self {
            ClassRole::Ok { feature } | ClassRole::Fault { feature } => Some(feature),
            ClassRole::Ignore => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionPolicy {
    pub roles: BTreeMap<String, ClassRole>,
    /// Features that must be observed (ok or fault) for a can to pass.
    pub required_features: Vec<String>,
}

impl DecisionPolicy {
    /// Derives roles from `<feature>_ok` / `<feature>_fault` names; any other
    /// class is ignored. Required features are the three inspected ones.
    pub fn from_class_names(classes: &ClassList) -> Self {
        let roles = classes
            .names()
            .iter()
            .map(|name| {
                let role = if let Some(f) = name.strip_suffix("_ok") {
                    ClassRole::Ok { feature: f.into() }
                } else if let Some(f) = name.strip_suffix("_fault") {
                    ClassRole::Fault { feature: f.into() }
                } else {
                    ClassRole::Ignore
                };
                (name.clone(), role)
            })
            .collect();
        DecisionPolicy {
            roles,
            required_features: Feature::ALL
                .iter()
                .map(|f| f.as_str().to_string())
                .collect(),
        }
    }

    /// Every class must have a role and every required feature must be
    /// reachable by some class.
    pub fn validate_for(&self, classes: &ClassList) -> Result<()> {
        for name in classes.names() {
            if !self.roles.contains_key(name) {
                return Err(Error::Config(format!("class {name:?} has no policy role")));
            }
        }
        for f in &self.required_features {
            if !self.roles.values().any(|r| r.feature() == Some(f)) {
                return Err(Error::Config(format!(
                    "required feature {f:?} has no ok or fault class"
                )));
            }
        }
        Ok(())
    }
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        DecisionPolicy::from_class_names(&ClassList::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionVerdict {
    pub can_id: u64,
    pub decision: Decision,
    pub reasons: Vec<String>,
    /// Fault-role detections at or above the threshold.
    pub triggering: Vec<Detection>,
}

impl InspectionVerdict {
    pub fn accept(can_id: u64) -> Self {
        InspectionVerdict {
            can_id,
            decision: Decision::Accept,
            reasons: Vec::new(),
            triggering: Vec::new(),
        }
    }

    /// Adds a reason (once) and turns the verdict into a reject.
    pub fn add_reason(&mut self, reason: &str) {
        if !self.reasons.iter().any(|r| r == reason) {
            self.reasons.push(reason.to_string());
        }
        self.decision = Decision::Reject;
    }
}

pub fn missing_reason(feature: &str) -> String {
    format!("missing:{feature}")
}

/// Rejects a can when any fault-role class is detected with confidence at
/// least `threshold`, or when a required feature has no confident detection
/// at all. Fault reasons follow detection order; missing-feature reasons
/// follow the policy's feature order.
pub fn decide(
    can_id: u64,
    dets: &[Detection],
    policy: &DecisionPolicy,
    threshold: f64,
) -> Result<InspectionVerdict> {
    let mut verdict = InspectionVerdict::accept(can_id);
    let mut seen_features: Vec<&str> = Vec::new();

    for d in dets {
        let role = policy.roles.get(&d.label.name).ok_or_else(|| {
            Error::Config(format!(
                "detected class {:?} has no policy role",
                d.label.name
            ))
        })?;
        if d.confidence < threshold {
            continue;
        }
        if let Some(f) = role.feature() {
            seen_features.push(f);
        }
        if let ClassRole::Fault { .. } = role {
            verdict.add_reason(&d.label.name);
            verdict.triggering.push(d.clone());
        }
    }
    for f in &policy.required_features {
        if !seen_features.contains(&f.as_str()) {
            verdict.add_reason(&missing_reason(f));
        }
    }
    Ok(verdict)
}
