//! Propagation rules and their assignment to graph nodes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Node, Source};
use crate::layer::LayerKind;

/// Stabilizer used by the default epsilon rule on pooling layers.
pub const POOLING_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule")]
pub enum Rule {
    /// Redistribute along positive weight contributions `a_i * max(w_ij, 0)`.
    #[serde(rename = "zplus")]
    ZPlus,
    /// Redistribute along `a_i * w_ij` with denominator `z_j + eps * sign(z_j)`.
    #[serde(rename = "epsilon")]
    Epsilon { epsilon: f64 },
    /// Bounded-input rule: contributions `x_i w_ij - low_c w_ij^+ - high_c w_ij^-`.
    /// Missing bounds fall back to the model's input bounds.
    #[serde(rename = "zbeta")]
    ZBeta {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low: Option<Vec<f32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        high: Option<Vec<f32>>,
    },
    #[serde(rename = "identity")]
    Identity,
    /// All relevance of a pooling window goes to its first maximal input.
    #[serde(rename = "winner_take_all")]
    WinnerTakeAll,
    /// Split a sum between its addends by their positive parts.
    #[serde(rename = "proportional_split")]
    ProportionalSplit,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::ZPlus => "zplus",
            Rule::Epsilon { .. } => "epsilon",
            Rule::ZBeta { .. } => "zbeta",
            Rule::Identity => "identity",
            Rule::WinnerTakeAll => "winner_take_all",
            Rule::ProportionalSplit => "proportional_split",
        }
    }

    pub fn zbeta_default() -> Self {
        Rule::ZBeta { low: None, high: None }
    }
}

/// Rule lookup: node-id overrides, then the input-layer rule (for linear
/// layers reading the clip), then per-kind rules.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationRuleSet {
    by_kind: BTreeMap<LayerKind, Rule>,
    by_node: BTreeMap<String, Rule>,
    input: Rule,
}

impl Default for PropagationRuleSet {
    fn default() -> Self {
        use LayerKind::*;
        let eps = Rule::Epsilon {
            epsilon: POOLING_EPSILON,
        };
        let by_kind = BTreeMap::from([
            (Conv3D, Rule::ZPlus),
            (Conv2DPerFrame, Rule::ZPlus),
            (TemporalDepthwiseConv, Rule::ZPlus),
            (Linear, Rule::ZPlus),
            (PerFrameHead, Rule::ZPlus),
            (ReLU, Rule::Identity),
            (BatchNorm, Rule::Identity),
            (SpatialMaxPool, Rule::WinnerTakeAll),
            (SpatialAvgPool, eps.clone()),
            (GlobalSpatialAvgPool, eps),
            (ResidualAdd, Rule::ProportionalSplit),
        ]);
        Self {
            by_kind,
            by_node: BTreeMap::new(),
            input: Rule::zbeta_default(),
        }
    }
}

/// Key of the input-layer rule in override files.
pub const INPUT_RULE_KEY: &str = "input";

impl PropagationRuleSet {
    pub fn set_kind(&mut self, kind: LayerKind, rule: Rule) -> &mut Self {
        self.by_kind.insert(kind, rule);
        self
    }

    pub fn set_node(&mut self, id: impl Into<String>, rule: Rule) -> &mut Self {
        self.by_node.insert(id.into(), rule);
        self
    }

    pub fn set_input(&mut self, rule: Rule) -> &mut Self {
        self.input = rule;
        self
    }

    pub fn kind_rule(&self, kind: LayerKind) -> &Rule {
        &self.by_kind[&kind]
    }

    pub fn input_rule(&self) -> &Rule {
        &self.input
    }

    /// Applies an override document on top of the defaults. Keys are layer
    /// kind names, node ids, or `"input"`.
    pub fn from_overrides(overrides: &BTreeMap<String, Rule>) -> Self {
        let mut set = Self::default();
        for (key, rule) in overrides {
            if key == INPUT_RULE_KEY {
                set.set_input(rule.clone());
            } else if let Some(kind) = LayerKind::from_name(key) {
                set.set_kind(kind, rule.clone());
            } else {
                set.set_node(key.clone(), rule.clone());
            }
        }
        set
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: BTreeMap<String, Rule> = serde_json::from_str(&text)
            .map_err(|e| Error::RuleConfig(format!("{}: {e}", path.display())))?;
        Ok(Self::from_overrides(&overrides))
    }

    /// Rejects node overrides naming nodes the model does not have.
    pub fn check_against(&self, model: &ModelGraph) -> Result<()> {
        for id in self.by_node.keys() {
            if model.node(id).is_none() {
                return Err(Error::RuleConfig(format!("no node named {id} in {}", model.name)));
            }
        }
        Ok(())
    }

    pub fn rule_for(&self, node: &Node) -> &Rule {
        if let Some(rule) = self.by_node.get(&node.id) {
            return rule;
        }
        let reads_input = node.inputs.contains(&Source::Input);
        if reads_input && is_linear_kind(node.layer.kind()) {
            return &self.input;
        }
        &self.by_kind[&node.layer.kind()]
    }
}

/// Kinds computing a weighted sum of their inputs.
pub fn is_linear_kind(kind: LayerKind) -> bool {
    matches!(
        kind,
        LayerKind::Conv3D
            | LayerKind::Conv2DPerFrame
            | LayerKind::TemporalDepthwiseConv
            | LayerKind::Linear
            | LayerKind::PerFrameHead
            | LayerKind::SpatialAvgPool
            | LayerKind::GlobalSpatialAvgPool
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_layer_kinds() {
        let set = PropagationRuleSet::default();
        assert_eq!(set.kind_rule(LayerKind::Conv3D), &Rule::ZPlus);
        assert_eq!(set.kind_rule(LayerKind::Linear), &Rule::ZPlus);
        assert_eq!(
            set.kind_rule(LayerKind::SpatialAvgPool),
            &Rule::Epsilon { epsilon: 1e-9 }
        );
        assert_eq!(set.kind_rule(LayerKind::SpatialMaxPool), &Rule::WinnerTakeAll);
        assert_eq!(set.kind_rule(LayerKind::BatchNorm), &Rule::Identity);
        assert_eq!(set.kind_rule(LayerKind::ResidualAdd), &Rule::ProportionalSplit);
        assert_eq!(set.input_rule(), &Rule::zbeta_default());
    }

    #[test]
    fn override_document_parses() {
        let doc = r#"{
            "SpatialMaxPool": {"rule": "epsilon", "epsilon": 1e-9},
            "conv1": {"rule": "zplus"},
            "input": {"rule": "zbeta", "low": [0.0], "high": [1.0]}
        }"#;
        let overrides: BTreeMap<String, Rule> = serde_json::from_str(doc).unwrap();
        let set = PropagationRuleSet::from_overrides(&overrides);
        assert_eq!(
            set.kind_rule(LayerKind::SpatialMaxPool),
            &Rule::Epsilon { epsilon: 1e-9 }
        );
        assert_eq!(set.by_node["conv1"], Rule::ZPlus);
        assert_eq!(
            set.input_rule(),
            &Rule::ZBeta {
                low: Some(vec![0.0]),
                high: Some(vec![1.0])
            }
        );
    }

    #[test]
    fn unknown_rule_name_is_rejected() {
        let doc = r#"{"Conv3D": {"rule": "alpha_beta"}}"#;
        assert!(serde_json::from_str::<BTreeMap<String, Rule>>(doc).is_err());
    }
}
