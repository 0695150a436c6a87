use serde::{Deserialize, Serialize};

use crate::inference::ProfileKind;
use crate::model::EventType;

/// A behavior a simulated human can perform. Each one maps to one or two
/// physical interactions with a storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimAction {
    /// Put a carried own object into one of the human's own bins.
    Divest,
    /// Put a carried own object into somebody else's bin.
    DivestOtherBin,
    /// Take back an own object from wherever it lies.
    Collect,
    /// Take an own object out of one bin and put it into another.
    Move,
    /// Take somebody else's object.
    TakeOther,
    /// Decide to leave one divested object behind at exit.
    Leave,
    /// Take a product off a shelf.
    Pick,
    /// Put a carried product back on its own shelf.
    Return,
    /// Put a carried product on a shelf it does not belong to.
    Misplace,
}

impl SimAction {
    pub fn profile(self) -> ProfileKind {
        match self {
            SimAction::Pick | SimAction::Return | SimAction::Misplace => ProfileKind::Retail,
            _ => ProfileKind::Airport,
        }
    }
}

/// Which kind of hand-event corruption to apply when one is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandNoise {
    /// Missed and spurious, chosen with equal probability.
    #[default]
    Both,
    Missed,
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub profile: ProfileKind,
    pub seed: u64,
    pub n_video_trackers: usize,
    pub n_humans: usize,
    pub n_storages: usize,
    pub n_objects: usize,
    pub max_level_concurrency: usize,
    pub event_list: Vec<EventType>,
    pub event_pdf: Vec<f64>,
    pub action_list: Vec<SimAction>,
    pub action_pdf: Vec<f64>,
    pub max_interaction: usize,
    pub noisy_hand_event_pdf: f64,
    pub hand_noise: HandNoise,
    pub noisy_obj_detect_prob: f64,
    pub max_noisy_content_perc: f64,
    /// Window the snapshot cadence is sized for.
    pub noise_filter_window: usize,
    /// Logical ticks between consecutive generated events.
    pub tick: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid simulator config: {0}")]
pub struct InvalidConfig(pub String);

impl Default for SimConfig {
    fn default() -> Self {
        Self::airport()
    }
}

const PDF_TOLERANCE: f64 = 1e-9;

impl SimConfig {
    pub fn airport() -> Self {
        Self {
            profile: ProfileKind::Airport,
            seed: 1,
            n_video_trackers: 4,
            n_humans: 50,
            n_storages: 50,
            n_objects: 200,
            max_level_concurrency: 20,
            event_list: EventType::ALL.to_vec(),
            event_pdf: vec![0.1, 0.1, 0.3, 0.3, 0.05, 0.05, 0.1],
            action_list: vec![
                SimAction::Divest,
                SimAction::DivestOtherBin,
                SimAction::Collect,
                SimAction::Move,
                SimAction::TakeOther,
                SimAction::Leave,
            ],
            action_pdf: vec![0.4, 0.05, 0.3, 0.1, 0.05, 0.1],
            max_interaction: 6,
            noisy_hand_event_pdf: 0.0,
            hand_noise: HandNoise::Both,
            noisy_obj_detect_prob: 0.0,
            max_noisy_content_perc: 0.0,
            noise_filter_window: 5,
            tick: 10,
        }
    }

    pub fn retail() -> Self {
        Self {
            profile: ProfileKind::Retail,
            n_humans: 40,
            n_storages: 10,
            n_objects: 120,
            max_level_concurrency: 30,
            action_list: vec![SimAction::Pick, SimAction::Return, SimAction::Misplace],
            action_pdf: vec![0.6, 0.25, 0.15],
            ..Self::airport()
        }
    }

    pub fn for_profile(profile: ProfileKind) -> Self {
        match profile {
            ProfileKind::Airport => Self::airport(),
            ProfileKind::Retail => Self::retail(),
        }
    }

    /// Probability weight of `ty` in the event distribution.
    pub fn event_weight(&self, ty: EventType) -> f64 {
        self.event_list.iter().zip(&self.event_pdf).filter(|(t, _)| **t == ty).map(|(_, p)| *p).sum()
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let bad = |m: String| Err(InvalidConfig(m));
        check_pdf("event", self.event_list.len(), &self.event_pdf)?;
        check_pdf("action", self.action_list.len(), &self.action_pdf)?;
        for (name, p) in [
            ("noisy_hand_event_pdf", self.noisy_hand_event_pdf),
            ("noisy_obj_detect_prob", self.noisy_obj_detect_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..=100.0).contains(&self.max_noisy_content_perc) {
            return bad(format!("max_noisy_content_perc = {} is outside [0, 100]", self.max_noisy_content_perc));
        }
        if let Some(a) = self.action_list.iter().find(|a| a.profile() != self.profile) {
            return bad(format!("action {a:?} does not belong to the {} profile", self.profile.name()));
        }
        if self.n_video_trackers == 0 {
            return bad("n_video_trackers must be at least 1".into());
        }
        if self.noise_filter_window == 0 {
            return bad("noise_filter_window must be at least 1".into());
        }
        if self.tick < 2 {
            return bad("tick must be at least 2 so injected events fit between generated ones".into());
        }
        let needed = match self.profile {
            // A passenger and all of their bins must fit at once.
            ProfileKind::Airport => 1 + self.n_storages.div_ceil(self.n_humans.max(1)),
            // The clerk, every shelf and one shopper.
            ProfileKind::Retail => self.n_storages + 2,
        };
        if self.n_humans > 0 && self.max_level_concurrency < needed {
            return bad(format!(
                "max_level_concurrency = {} is below the {needed} entities one visit needs",
                self.max_level_concurrency
            ));
        }
        if self.profile == ProfileKind::Retail && self.n_humans > 0 && self.n_storages == 0 {
            return bad("a retail store needs at least one shelf".into());
        }
        Ok(())
    }
}

fn check_pdf(name: &str, len: usize, pdf: &[f64]) -> Result<(), InvalidConfig> {
    if len != pdf.len() {
        return Err(InvalidConfig(format!("{name}_list has {len} entries but {name}_pdf has {}", pdf.len())));
    }
    if let Some(p) = pdf.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(InvalidConfig(format!("{name}_pdf entry {p} is not a probability")));
    }
    let sum: f64 = pdf.iter().sum();
    if (sum - 1.0).abs() > PDF_TOLERANCE {
        return Err(InvalidConfig(format!("{name}_pdf sums to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::airport().validate().unwrap();
        SimConfig::retail().validate().unwrap();
    }

    #[test]
    fn pdf_must_sum_to_one() {
        let mut c = SimConfig::airport();
        c.action_pdf[0] += 1e-6;
        assert!(c.validate().unwrap_err().0.contains("sums to"));
        c.action_pdf[0] -= 1e-6 - 1e-12;
        c.validate().unwrap();
    }

    #[test]
    fn probabilities_and_percentages_bounded() {
        let mut c = SimConfig::airport();
        c.noisy_obj_detect_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = SimConfig::airport();
        c.max_noisy_content_perc = 101.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn actions_must_match_profile() {
        let mut c = SimConfig::airport();
        c.action_list[0] = SimAction::Pick;
        assert!(c.validate().unwrap_err().0.contains("Pick"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = SimConfig::retail();
        let text = toml::to_string(&c).unwrap();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
