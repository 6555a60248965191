//! Prompt templates. All builders are pure and byte-deterministic.

use crate::perceiver::ScenePercept;
use crate::selector::Demonstration;
use crate::world::Task;

pub const RECOGNITION_CUE: &str = "Goal: The target object is: ";
pub const LOCATION_EXAMPLE: &str =
    "Example:\nQuestion: Where does a microwave can usually appear in a house? Answer: kitchen.\n";
pub const LOCATION_CUE: &str = " can usually appear in a house? Answer: ";
pub const SCENE_PREFIX: &str = "At this step, I am in ";
pub const SCENE_SEPARATOR: &str = ", I can see ";

/// `Task: {instruction}\nGoal: The target object is: `
pub fn gosp_recognition_prompt(task: &Task) -> String {
    format!("Task: {}\n{RECOGNITION_CUE}", task.instruction.trim())
}

pub fn gosp_location_prompt(target_object: &str) -> String {
    format!(
        "{LOCATION_EXAMPLE}Question: Where does a {}{LOCATION_CUE}",
        target_object.trim()
    )
}

/// `At this step, I am in {room}, I can see {a, b, c}.`
pub fn scene_line(percept: &ScenePercept) -> String {
    let seen = if percept.objects.is_empty() {
        "nothing".to_string()
    } else {
        percept.objects.join(", ")
    };
    format!("{SCENE_PREFIX}{}{SCENE_SEPARATOR}{seen}.", percept.room)
}

fn step_line(i: usize, text: &str) -> String {
    format!("Step {i}: {}.", text.trim().trim_end_matches('.').trim_end())
}

/// The selected fine-grained example, one `Step i:` line per step.
pub fn demonstration_block(demo: &Demonstration) -> String {
    let mut out = format!("Example:\nTask: {}", demo.low_level_instruction.trim());
    for (i, s) in demo.steps.iter().enumerate() {
        out.push('\n');
        out.push_str(&step_line(i + 1, s));
    }
    out
}

/// The task followed by the steps planned so far and an open `Step n: ` cue.
pub fn continuation_block(instruction: &str, steps: &[String]) -> String {
    let mut out = format!("Task: {}", instruction.trim());
    for (i, s) in steps.iter().enumerate() {
        out.push('\n');
        out.push_str(&step_line(i + 1, s));
    }
    out.push_str(&format!("\nStep {}: ", steps.len() + 1));
    out
}

pub fn sodp_prompt(percept: &ScenePercept, demo: &Demonstration, instruction: &str, steps: &[String]) -> String {
    [
        scene_line(percept),
        demonstration_block(demo),
        continuation_block(instruction, steps),
    ]
    .join("\n")
}

/// Scene-free planning prompt. It never includes earlier steps, so it is the
/// same at every timestep of an episode.
pub fn static_prompt(demo: &Demonstration, instruction: &str) -> String {
    [demonstration_block(demo), continuation_block(instruction, &[])].join("\n")
}
