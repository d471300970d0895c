use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// The fixed block roles used to pick a detailing prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryId {
    Sensor,
    SignalConditioning,
    Amplification,
    Filtering,
    OtherConditioning,
    DirectMeasurement,
    AnalogueDigitalConverter,
    DigitalProcessing,
    Others,
}

impl CategoryId {
    pub const ALL: [CategoryId; 9] = [
        CategoryId::Sensor,
        CategoryId::SignalConditioning,
        CategoryId::Amplification,
        CategoryId::Filtering,
        CategoryId::OtherConditioning,
        CategoryId::DirectMeasurement,
        CategoryId::AnalogueDigitalConverter,
        CategoryId::DigitalProcessing,
        CategoryId::Others,
    ];

    /// Human-facing name, as listed to the model.
    pub fn name(self) -> &'static str {
        match self {
            CategoryId::Sensor => "Sensor",
            CategoryId::SignalConditioning => "Signal conditioning",
            CategoryId::Amplification => "Amplification",
            CategoryId::Filtering => "Filtering",
            CategoryId::OtherConditioning => "Other conditioning",
            CategoryId::DirectMeasurement => "Direct measurement",
            CategoryId::AnalogueDigitalConverter => "Analogue-digital converter",
            CategoryId::DigitalProcessing => "Digital processing",
            CategoryId::Others => "Others",
        }
    }

    /// Stable identifier used in file names and template ids.
    pub fn slug(self) -> &'static str {
        match self {
            CategoryId::Sensor => "sensor",
            CategoryId::SignalConditioning => "signal_conditioning",
            CategoryId::Amplification => "amplification",
            CategoryId::Filtering => "filtering",
            CategoryId::OtherConditioning => "other_conditioning",
            CategoryId::DirectMeasurement => "direct_measurement",
            CategoryId::AnalogueDigitalConverter => "analogue_digital_converter",
            CategoryId::DigitalProcessing => "digital_processing",
            CategoryId::Others => "others",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("ALL is exhaustive")
    }

    /// Forgiving match for model replies: case, punctuation and spelling
    /// variants such as "analog-to-digital converter" or "ADC".
    pub fn parse_lenient(text: &str) -> Option<CategoryId> {
        let key: String = text
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let key = key.replace("analog", "analogue").replace("analogueue", "analogue");
        match key.as_str() {
            "sensor" | "sensors" => Some(CategoryId::Sensor),
            "signalconditioning" => Some(CategoryId::SignalConditioning),
            "amplification" | "amplifier" => Some(CategoryId::Amplification),
            "filtering" | "filter" => Some(CategoryId::Filtering),
            "otherconditioning" => Some(CategoryId::OtherConditioning),
            "directmeasurement" => Some(CategoryId::DirectMeasurement),
            "analoguedigitalconverter" | "analoguetodigitalconverter" | "adc" => {
                Some(CategoryId::AnalogueDigitalConverter)
            }
            "digitalprocessing" => Some(CategoryId::DigitalProcessing),
            "others" | "other" => Some(CategoryId::Others),
            _ => None,
        }
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for CategoryId {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        CategoryId::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s) || c.slug() == s)
            .ok_or_else(|| UnknownCategory(String::from(s)))
    }
}
