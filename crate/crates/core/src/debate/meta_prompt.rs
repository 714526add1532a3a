use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Role;

/// A few-shot demonstration: what the image shows, what the mask covers, and a
/// worked pro/con assessment of the mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub caption: String,
    pub object_description: String,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub task_description: String,
    pub max_rounds: u32,
    pub exemplars: Vec<Exemplar>,
}

pub const DEFAULT_TASK: &str = "You are taking part in a review of candidate pseudo labels for \
camouflaged object detection. Camouflaged objects blend into their surroundings through \
similar colour, texture or pattern. Each candidate is a binary mask produced by a promptable \
segmentation model from a few point prompts placed on annotator scribbles. Decide whether the \
highlighted mask covers one complete camouflaged object with a faithful outline, so that it can \
be used as a training label.";

pub const DEFAULT_MAX_ROUNDS: u32 = 2;

/// Bundled demonstrations.
pub fn default_exemplars() -> Vec<Exemplar> {
    vec![
        Exemplar {
            caption: "A brown moth resting on tree bark with a similar mottled pattern.".into(),
            object_description: "The mask covers the moth body and both wings; the outline \
follows the wing edges."
                .into(),
            reasoning: "Pro: the masked region has a clear discriminability cue, a slightly \
smoother texture than the bark, and its boundary clarity is good because the outline hugs the \
wing tips without spilling onto the bark. Con: the antennae are missing, but they are thin and \
their absence barely changes the region. Conclusion: the mask is a faithful label."
                .into(),
        },
        Exemplar {
            caption: "A flatfish lying on a sandy seabed, partly covered by sand.".into(),
            object_description: "The mask covers a large patch of seabed that includes the fish \
and a wide band of sand around it."
                .into(),
            reasoning: "Pro: the fish is inside the mask, so the object is found. Con: \
discriminability is poor because most masked pixels are sand that looks exactly like the \
background, and boundary clarity is poor because the outline follows no visible edge of the \
fish. Conclusion: the mask would teach the detector to segment sand and should be discarded."
                .into(),
        },
        Exemplar {
            caption: "A green katydid among leaves of the same colour.".into(),
            object_description: "The mask covers one leaf next to the insect and a thin sliver \
of its hind leg."
                .into(),
            reasoning: "Pro: a part of the leg is included. Con: the main region is a leaf, so \
discriminability between the masked object and the real target is absent; boundary clarity \
is misleading because the sharp leaf edge is not the insect outline. Conclusion: the mask \
marks the wrong object and should be discarded."
                .into(),
        },
    ]
}

pub fn build_meta_prompt(
    exemplars: Vec<Exemplar>,
    task_text: impl Into<String>,
    max_rounds: u32,
) -> Result<MetaPrompt> {
    if exemplars.is_empty() {
        return Err(Error::Config("meta prompt needs at least one exemplar".into()));
    }
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be >= 1".into()));
    }
    for (i, ex) in exemplars.iter().enumerate() {
        if ex.caption.trim().is_empty()
            || ex.object_description.trim().is_empty()
            || ex.reasoning.trim().is_empty()
        {
            return Err(Error::Config(format!("exemplar {} has an empty field", i + 1)));
        }
        let lower = ex.reasoning.to_lowercase();
        if !(lower.contains("discriminab") && lower.contains("boundar")) {
            return Err(Error::Config(format!(
                "exemplar {} reasoning must address discriminability and boundary clarity",
                i + 1
            )));
        }
    }
    let task_description = task_text.into();
    if task_description.trim().is_empty() {
        return Err(Error::Config("task description is empty".into()));
    }
    Ok(MetaPrompt {
        task_description,
        max_rounds,
        exemplars,
    })
}

impl MetaPrompt {
    pub fn default_prompt() -> Self {
        build_meta_prompt(default_exemplars(), DEFAULT_TASK, DEFAULT_MAX_ROUNDS)
            .expect("bundled exemplars are valid")
    }

    pub fn with_max_rounds(mut self, max_rounds: u32) -> Result<Self> {
        if max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        self.max_rounds = max_rounds;
        Ok(self)
    }

    /// Shared preamble every agent receives.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# Task\n");
        out.push_str(self.task_description.trim());
        out.push_str("\n\n# Debate rules\n");
        out.push_str(&format!(
            "- The debate lasts {} round(s). In every round the affirmative debater speaks first and the negative debater answers.\n",
            self.max_rounds
        ));
        out.push_str("- Ground every claim in the image and the highlighted mask, and respond to the arguments already made.\n");
        out.push_str("- Weigh discriminability (does the mask isolate the object from a similar background?) and boundary clarity (does the outline follow the object edge?).\n");
        out.push_str("- The judge reads the whole debate and ends with one final line, either \"VERDICT: RETAIN\" or \"VERDICT: DISCARD\".\n");
        out.push_str("\n# Demonstrations\n");
        for (i, ex) in self.exemplars.iter().enumerate() {
            out.push_str(&format!("\n## Example {}\n", i + 1));
            out.push_str(&format!("Image caption: {}\n", ex.caption.trim()));
            out.push_str(&format!("Masked object: {}\n", ex.object_description.trim()));
            out.push_str(&format!("Reasoning: {}\n", ex.reasoning.trim()));
        }
        out
    }
}

pub(crate) fn role_instruction(role: Role, round: u32, max_rounds: u32) -> String {
    match role {
        Role::Affirmative => format!(
            "You are the affirmative debater (round {round} of {max_rounds}). Argue that the highlighted mask should be kept as a pseudo label."
        ),
        Role::Negative => format!(
            "You are the negative debater (round {round} of {max_rounds}). Argue that the highlighted mask should be rejected as a pseudo label."
        ),
        Role::Judge => "You are the judge. Weigh both sides of the complete debate, explain your \
decision, and finish with a final line that is exactly \"VERDICT: RETAIN\" or \"VERDICT: DISCARD\"."
            .to_string(),
    }
}
