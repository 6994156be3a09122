//! The hyperparameter surface shared by the CLI, the harness and any
//! embedding pipeline. JSON keys are the field names; unknown keys are
//! rejected.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::ffn::{InjectionConfig, InjectionMode, LayerGate};
use crate::ot::{Epsilon, SinkhornParams};
use crate::patch::{CostSpace, DEFAULT_PATCH_COUNT, DEFAULT_TAU};
use crate::reduction::DEFAULT_TOP_Q;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforcementConfig {
    pub top_q: usize,
    pub tau: f64,
    /// `"auto"`, an absolute number, or `{"relative": factor}`.
    #[serde(with = "epsilon_serde")]
    pub epsilon: Epsilon,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// 1-indexed inclusive layer range. When absent the reference range is
    /// rescaled to the decoder depth.
    pub layer_gate: Option<LayerGate>,
    pub injection_mode: InjectionMode,
    /// Defaults to the FFN's own activation.
    pub injection_activation: Option<Activation>,
    pub patch_count: usize,
    /// Injection at a layer only fires when the normalized entropy of the
    /// logit-lens distribution exceeds this value.
    pub uncertainty_threshold: Option<f64>,
    pub cost_space: CostSpace,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    pub seed: u64,
}

impl Default for ReinforcementConfig {
    fn default() -> Self {
        let sk = SinkhornParams::default();
        Self {
            top_q: DEFAULT_TOP_Q,
            tau: DEFAULT_TAU,
            epsilon: Epsilon::auto(),
            sinkhorn_max_iter: sk.max_iter,
            sinkhorn_tol: sk.tol,
            layer_gate: None,
            injection_mode: InjectionMode::AllRows,
            injection_activation: None,
            patch_count: DEFAULT_PATCH_COUNT,
            uncertainty_threshold: None,
            cost_space: CostSpace::Hidden,
            threads: None,
            seed: 0,
        }
    }
}

impl ReinforcementConfig {
    pub const KEYS: [&'static str; 13] = [
        "top_q",
        "tau",
        "epsilon",
        "sinkhorn_max_iter",
        "sinkhorn_tol",
        "layer_gate",
        "injection_mode",
        "injection_activation",
        "patch_count",
        "uncertainty_threshold",
        "cost_space",
        "threads",
        "seed",
    ];

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::finish(serde_json::from_str(text))
    }

    /// Parses and validates a key/value mapping with the JSON keys.
    pub fn from_map(map: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        Self::finish(serde_json::from_value(serde_json::Value::Object(
            map.clone(),
        )))
    }

    fn finish(parsed: serde_json::Result<Self>) -> Result<Self> {
        let cfg = parsed.map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown field") {
                Error::Parameter(format!("{msg}; valid keys: {}", Self::KEYS.join(", ")))
            } else {
                Error::Parameter(format!("config: {msg}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_q == 0 {
            return Err(Error::Parameter("top_q must be at least 1".into()));
        }
        if !self.tau.is_finite() {
            return Err(Error::Parameter(format!(
                "tau must be finite, got {}",
                self.tau
            )));
        }
        self.epsilon.validate()?;
        if self.sinkhorn_max_iter == 0 {
            return Err(Error::Parameter(
                "sinkhorn_max_iter must be at least 1".into(),
            ));
        }
        if !(self.sinkhorn_tol.is_finite() && self.sinkhorn_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "sinkhorn_tol must be positive, got {}",
                self.sinkhorn_tol
            )));
        }
        if let Some(t) = self.uncertainty_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Parameter(format!(
                    "uncertainty_threshold must lie in [0, 1], got {t}"
                )));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Parameter("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sinkhorn_params(&self) -> SinkhornParams {
        SinkhornParams {
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
        }
    }

    /// Resolves the gate and activation defaults for a concrete decoder.
    pub fn injection(&self, layers: usize, ffn_activation: Activation) -> InjectionConfig {
        InjectionConfig {
            mode: self.injection_mode,
            activation: self.injection_activation.unwrap_or(ffn_activation),
            gate: self
                .layer_gate
                .unwrap_or_else(|| LayerGate::default_for(layers)),
        }
    }
}

mod epsilon_serde {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Named(String),
        Absolute(f64),
        Relative { relative: f64 },
    }

    pub fn serialize<S: Serializer>(e: &Epsilon, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *e {
            Epsilon::Relative(f) if f == Epsilon::AUTO_FACTOR => Repr::Named("auto".into()),
            Epsilon::Relative(f) => Repr::Relative { relative: f },
            Epsilon::Absolute(v) => Repr::Absolute(v),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Epsilon, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Named(n) if n == "auto" => Ok(Epsilon::auto()),
            Repr::Named(n) => Err(serde::de::Error::custom(format!(
                "epsilon must be \"auto\", a number or {{\"relative\": x}}, got \"{n}\""
            ))),
            Repr::Absolute(v) => Ok(Epsilon::Absolute(v)),
            Repr::Relative { relative } => Ok(Epsilon::Relative(relative)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings() {
        let c = ReinforcementConfig::default();
        assert_eq!(c.top_q, 100);
        assert_eq!(c.tau, 0.06);
        assert_eq!(c.patch_count, 12);
        assert_eq!(c.epsilon, Epsilon::Relative(0.1));
        assert_eq!(c.sinkhorn_max_iter, 1000);
        assert_eq!(c.sinkhorn_tol, 1e-6);
        assert_eq!(c.uncertainty_threshold, None);
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(
            ReinforcementConfig::from_json("{}").unwrap(),
            ReinforcementConfig::default()
        );
    }

    #[test]
    fn parses_every_key() {
        let c = ReinforcementConfig::from_json(
            r#"{"top_q": 8, "tau": 0.1, "epsilon": 0.05, "sinkhorn_max_iter": 50,
                "sinkhorn_tol": 1e-8, "layer_gate": [2, 4], "injection_mode": "retained_rows",
                "injection_activation": "softmax_rowwise", "patch_count": 3,
                "uncertainty_threshold": 0.75, "cost_space": "projector", "threads": 2, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(c.epsilon, Epsilon::Absolute(0.05));
        assert_eq!(c.layer_gate, Some(LayerGate::new(2, 4).unwrap()));
        assert_eq!(c.injection_mode, InjectionMode::RetainedRows);
        assert_eq!(c.injection_activation, Some(Activation::SoftmaxRowwise));
        assert_eq!(c.cost_space, CostSpace::Projector);
        let rel = ReinforcementConfig::from_json(r#"{"epsilon": {"relative": 0.01}}"#).unwrap();
        assert_eq!(rel.epsilon, Epsilon::Relative(0.01));
    }

    #[test]
    fn json_round_trip() {
        for eps in [
            Epsilon::auto(),
            Epsilon::Absolute(0.2),
            Epsilon::Relative(0.03),
        ] {
            let c = ReinforcementConfig {
                epsilon: eps,
                layer_gate: Some(LayerGate::new(1, 3).unwrap()),
                ..Default::default()
            };
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(ReinforcementConfig::from_json(&text).unwrap(), c);
        }
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ReinforcementConfig::from_json(r#"{"topq": 3}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("topq"), "{err}");
        for k in ReinforcementConfig::KEYS {
            assert!(err.contains(k), "{err} lacks {k}");
        }
    }

    #[test]
    fn rejects_invalid_values() {
        for doc in [
            r#"{"top_q": 0}"#,
            r#"{"epsilon": 0}"#,
            r#"{"epsilon": "sometimes"}"#,
            r#"{"layer_gate": [5, 2]}"#,
            r#"{"sinkhorn_tol": 0}"#,
            r#"{"uncertainty_threshold": 1.5}"#,
            r#"{"threads": 0}"#,
        ] {
            assert!(ReinforcementConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn injection_defaults_follow_decoder() {
        let c = ReinforcementConfig::default();
        let inj = c.injection(12, Activation::GeluTanh);
        assert_eq!(inj.activation, Activation::GeluTanh);
        assert_eq!(inj.gate, LayerGate::default_for(12));
    }
}
