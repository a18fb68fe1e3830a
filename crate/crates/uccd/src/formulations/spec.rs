//! The `formulation` block of the problem document: which compiler to run,
//! the control structure, and its parameters.

use super::{CompileError, ControlStructure};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormulationKind {
    #[serde(rename = "det")]
    Det,
    #[serde(rename = "se")]
    Se,
    #[serde(rename = "scc")]
    Scc,
    #[serde(rename = "pr-w")]
    PrWeighted,
    #[serde(rename = "pr-c")]
    PrConstrained,
    #[serde(rename = "wcr")]
    Wcr,
    #[serde(rename = "fe")]
    Fe,
    #[serde(rename = "pcc")]
    Pcc,
}

impl FormulationKind {
    pub fn parse(tag: &str) -> Result<Self, CompileError> {
        serde_json::from_value(serde_json::Value::String(tag.to_string()))
            .map_err(|_| CompileError::BadParameter(format!("unknown formulation '{tag}'")))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Det => "det",
            Self::Se => "se",
            Self::Scc => "scc",
            Self::PrWeighted => "pr-w",
            Self::PrConstrained => "pr-c",
            Self::Wcr => "wcr",
            Self::Fe => "fe",
            Self::Pcc => "pcc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FormulationParams {
    /// Monte Carlo scenario count for stochastic formulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Target failure probability (SCC).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_f: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub p_f_overrides: BTreeMap<String, f64>,
    /// Mean/dispersion weight (PR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_w: Option<f64>,
    /// Constraint shift index (PR weighted form).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_s: Option<f64>,
    /// Allowable dispersion (PR constrained form).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sigma_a_overrides: BTreeMap<String, f64>,
    /// Target failure possibility (PCC).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_f: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pos_f_overrides: BTreeMap<String, f64>,
    /// Alpha levels for fuzzy propagation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<usize>,
    /// `saa` | `gaussian` (SCC) or `vertex` | `scenario_generation` (WCR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulationSpec {
    #[serde(rename = "type")]
    pub kind: FormulationKind,
    #[serde(default = "default_structure")]
    pub structure: ControlStructure,
    #[serde(default)]
    pub params: FormulationParams,
}

fn default_structure() -> ControlStructure {
    ControlStructure::Olsc
}

impl FormulationSpec {
    pub fn det() -> Self {
        Self {
            kind: FormulationKind::Det,
            structure: ControlStructure::Olsc,
            params: FormulationParams::default(),
        }
    }

    pub fn from_value(value: &serde_json::Value) -> Result<Self, CompileError> {
        serde_json::from_value(value.clone())
            .map_err(|e| CompileError::BadParameter(format!("formulation block: {e}")))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("formulation serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_document_block() {
        let v: serde_json::Value = serde_json::from_str(
            r#"{"type": "scc", "structure": "olmc",
                "params": {"p_f": 0.05, "mode": "gaussian", "samples": 64}}"#,
        )
        .unwrap();
        let spec = FormulationSpec::from_value(&v).unwrap();
        assert_eq!(spec.kind, FormulationKind::Scc);
        assert_eq!(spec.structure, ControlStructure::Olmc);
        assert_eq!(spec.params.p_f, Some(0.05));
    }

    #[test]
    fn rejects_unknown_formulation() {
        assert!(FormulationKind::parse("dro").is_err());
        assert!(FormulationKind::parse("wcr").is_ok());
    }
}
