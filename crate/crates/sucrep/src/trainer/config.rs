//! Training configuration and its flat `key = value` file format.
//! Unknown keys are rejected so stale configs fail loudly.

use super::TrainError;
use crate::grid::FeatureMode;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    None,
    Byol,
    ByolGamma,
    Tra,
    Fb,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Byol => "byol",
            Method::ByolGamma => "byol_gamma",
            Method::Tra => "tra",
            Method::Fb => "fb",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "none" => Ok(Method::None),
            "byol" => Ok(Method::Byol),
            "byol_gamma" => Ok(Method::ByolGamma),
            "tra" => Ok(Method::Tra),
            "fb" => Ok(Method::Fb),
            other => Err(TrainError::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossF {
    Ce,
    L2,
}

impl LossF {
    pub fn as_str(self) -> &'static str {
        match self {
            LossF::Ce => "ce",
            LossF::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "ce" => Ok(LossF::Ce),
            "l2" => Ok(LossF::L2),
            other => Err(TrainError::Config(format!("unknown loss_f {other:?}"))),
        }
    }
}

/// Which embedding the actor receives for the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalEmbed {
    /// Encoder output of the goal (default everywhere).
    Phi,
    /// Forward-predictor output of the encoded goal; only valid without
    /// action conditioning.
    Psi,
}

impl GoalEmbed {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalEmbed::Phi => "phi",
            GoalEmbed::Psi => "psi",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "phi" => Ok(GoalEmbed::Phi),
            "psi" => Ok(GoalEmbed::Psi),
            other => Err(TrainError::Config(format!("unknown goal_embed {other:?}"))),
        }
    }
}

/// Full configuration for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub method: Method,
    pub loss_f: LossF,
    pub action_conditioned: bool,
    pub bidirectional: bool,
    pub tau: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub record_every: usize,
    pub features: FeatureMode,
    pub encoder_hidden: Vec<usize>,
    /// 0 means "use the feature dimension".
    pub encoder_out: usize,
    pub actor_hidden: Vec<usize>,
    pub goal_embed: GoalEmbed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 0.99,
            method: Method::ByolGamma,
            loss_f: LossF::Ce,
            action_conditioned: true,
            bidirectional: true,
            tau: 1.0,
            batch_size: 256,
            steps: 20_000,
            ensemble_size: 2,
            seed: 0,
            lr: 3e-4,
            record_every: 100,
            features: FeatureMode::OneHot,
            encoder_hidden: vec![64, 64],
            encoder_out: 0,
            actor_hidden: vec![128, 128],
            goal_embed: GoalEmbed::Phi,
        }
    }
}

impl TrainConfig {
    /// Method-appropriate defaults: the TD bootstrap wants a slow target
    /// (tau 0.005) and action conditioning, the contrastive variant runs
    /// action-free, the base self-predictive one is forward-only.
    pub fn for_method(method: Method) -> Self {
        let mut cfg = Self {
            method,
            ..Self::default()
        };
        match method {
            Method::Fb => {
                cfg.tau = 0.005;
                cfg.bidirectional = false;
            }
            Method::Tra => {
                cfg.action_conditioned = false;
                cfg.bidirectional = false;
            }
            Method::Byol => {
                cfg.action_conditioned = false;
                cfg.bidirectional = false;
            }
            _ => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.alpha < 0.0 {
            return Err(TrainError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(TrainError::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TrainError::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.ensemble_size < 1 {
            return Err(TrainError::Config("ensemble_size must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2".into()));
        }
        if self.lr < 0.0 {
            return Err(TrainError::Config("lr must be nonnegative".into()));
        }
        if self.record_every == 0 {
            return Err(TrainError::Config("record_every must be positive".into()));
        }
        if self.bidirectional && matches!(self.method, Method::Tra | Method::Fb) {
            return Err(TrainError::Config(format!(
                "bidirectional prediction is not defined for method {}",
                self.method
            )));
        }
        if self.goal_embed == GoalEmbed::Psi && self.action_conditioned {
            return Err(TrainError::Config(
                "goal_embed = psi requires action_conditioned = false".into(),
            ));
        }
        Ok(())
    }

    /// Flat string map, the canonical serialized form.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("alpha", format!("{}", self.alpha));
        put("gamma", format!("{}", self.gamma));
        put("method", self.method.as_str().into());
        put("loss_f", self.loss_f.as_str().into());
        put("action_conditioned", format!("{}", self.action_conditioned));
        put("bidirectional", format!("{}", self.bidirectional));
        put("tau", format!("{}", self.tau));
        put("batch_size", format!("{}", self.batch_size));
        put("steps", format!("{}", self.steps));
        put("ensemble_size", format!("{}", self.ensemble_size));
        put("seed", format!("{}", self.seed));
        put("lr", format!("{}", self.lr));
        put("record_every", format!("{}", self.record_every));
        put(
            "features",
            match self.features {
                FeatureMode::OneHot => "onehot".into(),
                FeatureMode::Xy => "xy".into(),
            },
        );
        put("encoder_hidden", join_list(&self.encoder_hidden));
        put("encoder_out", format!("{}", self.encoder_out));
        put("actor_hidden", join_list(&self.actor_hidden));
        put("goal_embed", self.goal_embed.as_str().into());
        map
    }

    /// Parses the flat `key = value` text form; `#` starts a comment.
    /// Unknown keys are errors. The method's defaults apply to anything the
    /// file does not pin.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrainError::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            entries.push((key.trim().to_string(), value.trim().to_string(), lineno + 1));
        }
        let mut cfg = Self::default();
        for (key, value, _) in &entries {
            if key == "method" {
                cfg = Self::for_method(Method::parse(value)?);
            }
        }
        for (key, value, lineno) in &entries {
            let fail = |what: &str| TrainError::Config(format!("line {lineno}: bad {what} {value:?}"));
            match key.as_str() {
                "alpha" => cfg.alpha = value.parse().map_err(|_| fail("alpha"))?,
                "gamma" => cfg.gamma = value.parse().map_err(|_| fail("gamma"))?,
                "method" => {}
                "loss_f" => cfg.loss_f = LossF::parse(value)?,
                "action_conditioned" => {
                    cfg.action_conditioned = value.parse().map_err(|_| fail("action_conditioned"))?
                }
                "bidirectional" => cfg.bidirectional = value.parse().map_err(|_| fail("bidirectional"))?,
                "tau" => cfg.tau = value.parse().map_err(|_| fail("tau"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| fail("batch_size"))?,
                "steps" => cfg.steps = value.parse().map_err(|_| fail("steps"))?,
                "ensemble_size" => cfg.ensemble_size = value.parse().map_err(|_| fail("ensemble_size"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| fail("seed"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| fail("lr"))?,
                "record_every" => cfg.record_every = value.parse().map_err(|_| fail("record_every"))?,
                "features" => {
                    cfg.features = match value.as_str() {
                        "onehot" => FeatureMode::OneHot,
                        "xy" => FeatureMode::Xy,
                        _ => return Err(fail("features")),
                    }
                }
                "encoder_hidden" => cfg.encoder_hidden = parse_list(value).map_err(|_| fail("encoder_hidden"))?,
                "encoder_out" => cfg.encoder_out = value.parse().map_err(|_| fail("encoder_out"))?,
                "actor_hidden" => cfg.actor_hidden = parse_list(value).map_err(|_| fail("actor_hidden"))?,
                "goal_embed" => cfg.goal_embed = GoalEmbed::parse(value)?,
                other => {
                    return Err(TrainError::Config(format!("line {lineno}: unknown key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes to the text form accepted by [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn join_list(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>, std::num::ParseIntError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}
