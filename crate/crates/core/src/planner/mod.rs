//! Goal-oriented and scene-oriented planning.
//!
//! The planner owns the assembled instruction: the original high-level
//! instruction, a one-off goal sentence, and step instructions appended each
//! time the scene planner fires. Segments are never edited once written.

pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm_client::{default_stops, CompletionParams, FinishReason, LmClient, LmError, LmRequest};
use crate::perceiver::ScenePercept;
use crate::selector::Demonstration;
use crate::world::Task;

/// Longest step text kept from a completion, in words.
pub const MAX_STEP_WORDS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("goal planning failed: {0}")]
    GospFailure(String),
    #[error("next step index {got} does not follow {existing} existing steps")]
    IndexMismatch { existing: usize, got: usize },
}

pub type Result<T, E = PlannerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalPlan {
    pub target_object: String,
    pub target_room: String,
    pub sentence: String,
}

impl GoalPlan {
    pub fn new(target_object: &str, target_room: &str) -> Self {
        Self {
            target_object: target_object.to_string(),
            target_room: target_room.to_string(),
            sentence: format!(
                "Goal: The target object is a {target_object}. It is usually in a {target_room}."
            ),
        }
    }
}

/// `W = [W_I, W_G, W_S]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInstruction {
    hli: String,
    goal: Option<GoalPlan>,
    steps: Vec<String>,
}

impl AssembledInstruction {
    pub fn new(hli: &str, goal: Option<GoalPlan>) -> Self {
        Self {
            hli: hli.trim().to_string(),
            goal,
            steps: Vec::new(),
        }
    }

    pub fn hli(&self) -> &str {
        &self.hli
    }

    pub fn goal(&self) -> Option<&GoalPlan> {
        self.goal.as_ref()
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn latest_step(&self) -> Option<&str> {
        self.steps.last().map(String::as_str)
    }

    /// Returns a new state with `step` appended.
    pub fn with_step(&self, step: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.steps.push(step.into());
        next
    }

    /// `{W_I} {W_G} Step 1: {s1}. Step 2: {s2}. ...`
    pub fn render(&self) -> String {
        let mut out = self.hli.clone();
        if let Some(g) = &self.goal {
            out.push(' ');
            out.push_str(&g.sentence);
        }
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(" Step {}: {s}.", i + 1));
        }
        out
    }
}

/// One prompt/completion round trip, logged verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub completion: String,
    pub finish_reason: FinishReason,
}

/// Cleans a raw completion into a single step text. An empty result means
/// the model produced nothing usable.
pub fn parse_completion(raw: &str) -> String {
    parse_completion_with(raw, &default_stops())
}

pub fn parse_completion_with(raw: &str, stops: &[String]) -> String {
    let mut cut = raw.find('\n').unwrap_or(raw.len());
    for s in stops.iter().filter(|s| !s.is_empty()) {
        if let Some(i) = raw.find(s.as_str()) {
            cut = cut.min(i);
        }
    }
    let words: Vec<&str> = raw[..cut].split_whitespace().take(MAX_STEP_WORDS).collect();
    let mut text = words.join(" ");
    while text.ends_with('.') || text.ends_with(char::is_whitespace) {
        text.pop();
    }
    text
}

/// Sends a prompt, retrying once when the reply is empty or flagged as an
/// error. Returns the parsed text, or `None` if both attempts were empty.
fn query(lm: &dyn LmClient, prompt: String, params: CompletionParams, log: &mut Vec<Exchange>) -> Result<Option<String>> {
    let req = LmRequest::new(prompt, params);
    for _ in 0..2 {
        let resp = lm.complete(&req)?;
        log.push(Exchange {
            prompt: req.prompt.clone(),
            completion: resp.text.clone(),
            finish_reason: resp.finish_reason,
        });
        if resp.finish_reason != FinishReason::Error {
            let parsed = parse_completion_with(&resp.text, &req.params.stop);
            if !parsed.is_empty() {
                return Ok(Some(parsed));
            }
        }
    }
    Ok(None)
}

/// Target recognition then location inference, as two independent prompts.
pub fn run_gosp_logged(task: &Task, lm: &dyn LmClient, log: &mut Vec<Exchange>) -> Result<GoalPlan> {
    let target = query(lm, prompts::gosp_recognition_prompt(task), CompletionParams::gosp(), log)?
        .ok_or_else(|| PlannerError::GospFailure("empty target object".into()))?;
    let room = query(lm, prompts::gosp_location_prompt(&target), CompletionParams::gosp(), log)?
        .ok_or_else(|| PlannerError::GospFailure("empty target room".into()))?;
    Ok(GoalPlan::new(&target, &room))
}

pub fn run_gosp(task: &Task, lm: &dyn LmClient) -> Result<GoalPlan> {
    run_gosp_logged(task, lm, &mut Vec::new())
}

pub fn build_sodp_prompt(
    percept: &ScenePercept,
    demo: &Demonstration,
    state: &AssembledInstruction,
    task: &Task,
    next_step_index: usize,
) -> Result<String> {
    check_index(state, next_step_index)?;
    Ok(prompts::sodp_prompt(percept, demo, &task.instruction, state.steps()))
}


fn check_index(state: &AssembledInstruction, next: usize) -> Result<()> {
    if next != state.steps().len() + 1 {
        return Err(PlannerError::IndexMismatch {
            existing: state.steps().len(),
            got: next,
        });
    }
    Ok(())
}

/// Result of one scene-planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct SodpOutcome {
    pub state: AssembledInstruction,
    /// Parsed step, `None` when the model returned nothing usable twice.
    pub step: Option<String>,
    pub exchanges: Vec<Exchange>,
}

fn plan_step(prompt: String, state: &AssembledInstruction, lm: &dyn LmClient) -> Result<SodpOutcome> {
    let mut exchanges = Vec::new();
    let step = query(lm, prompt, CompletionParams::sodp(), &mut exchanges)?;
    let state = match &step {
        Some(s) => state.with_step(s.clone()),
        None => state.clone(),
    };
    Ok(SodpOutcome { state, step, exchanges })
}

/// Plans the next step from the current scene and appends it.
pub fn run_sodp(
    percept: &ScenePercept,
    demo: &Demonstration,
    state: &AssembledInstruction,
    task: &Task,
    lm: &dyn LmClient,
) -> Result<SodpOutcome> {
    let prompt = build_sodp_prompt(percept, demo, state, task, state.steps().len() + 1)?;
    plan_step(prompt, state, lm)
}

/// Plans a step from the fixed scene-free prompt and appends it.
pub fn run_static(
    demo: &Demonstration,
    state: &AssembledInstruction,
    task: &Task,
    lm: &dyn LmClient,
) -> Result<SodpOutcome> {
    plan_step(prompts::static_prompt(demo, &task.instruction), state, lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm_client::{GroundTruthOracle, LmResponse, ScriptedOracle};
    use crate::world::{gen_world, GeneratorConfig};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const HLI: &str = "Empty the washing machine on level one";

    fn task() -> Task {
        Task {
            id: "t".into(),
            instruction: HLI.into(),
            target_object_category: "washing machine".into(),
            goal_node_ids: vec!["g".into()],
            target_object_ids: vec!["o".into()],
            start_node: "s".into(),
            max_steps: 15,
        }
    }

    fn bedroom() -> ScenePercept {
        ScenePercept {
            node_id: "n".into(),
            room: "bedroom".into(),
            room_scores: vec![],
            objects: vec!["bed".into(), "lamp".into(), "pillow".into()],
            object_scores: vec![],
        }
    }

    fn demo() -> Demonstration {
        Demonstration {
            id: "d".into(),
            low_level_instruction: "Walk out of the bedroom and wait by the stairs".into(),
            steps: vec!["Walk out of the bedroom".into(), "Wait by the stairs".into()],
        }
    }

    struct Counting<L> {
        inner: L,
        calls: AtomicUsize,
    }

    impl<L: LmClient> LmClient for Counting<L> {
        fn complete(&self, req: &LmRequest) -> std::result::Result<LmResponse, LmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(req)
        }
    }

    fn counting<L>(inner: L) -> Counting<L> {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn gosp_worked_example() {
        let lm = counting(ScriptedOracle::new([
            ("The target object is: ", "washing machine"),
            ("Where does a washing machine", "laundry room"),
        ]));
        let plan = run_gosp(&task(), &lm).unwrap();
        assert_eq!(plan.target_object, "washing machine");
        assert_eq!(plan.target_room, "laundry room");
        assert_eq!(plan.sentence, "Goal: The target object is a washing machine. It is usually in a laundry room.");
        assert_eq!(lm.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn gosp_normalizes_padding() {
        let lm = ScriptedOracle::new([("The target object is: ", "washing machine"), ("Where does", " kitchen \n")]);
        assert_eq!(run_gosp(&task(), &lm).unwrap().target_room, "kitchen");
    }

    #[test]
    fn gosp_failure_after_retry() {
        let lm = counting(ScriptedOracle::new([("The target object is: ", "washing machine")]));
        let mut log = Vec::new();
        let err = run_gosp_logged(&task(), &lm, &mut log).unwrap_err();
        assert!(matches!(err, PlannerError::GospFailure(_)));
        assert_eq!(lm.calls.load(Ordering::SeqCst), 3);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn gosp_with_ground_truth_oracle() {
        let (g, tasks) = gen_world(5, &GeneratorConfig::default()).unwrap();
        for t in &tasks {
            let lm = GroundTruthOracle::new(&g, t).unwrap();
            let plan = run_gosp(t, &lm).unwrap();
            assert_eq!(plan.target_room, g.node(&t.goal_node_ids[0]).unwrap().room);
            assert_eq!(plan.target_object, t.target_object_category);
        }
    }

    #[test]
    fn sodp_prompt_parts() {
        let state = AssembledInstruction::new(HLI, None);
        let p = build_sodp_prompt(&bedroom(), &demo(), &state, &task(), 1).unwrap();
        let first = p.lines().next().unwrap();
        assert_eq!(first, "At this step, I am in bedroom, I can see bed, lamp, pillow.");
        assert!(p.ends_with("Task: Empty the washing machine on level one\nStep 1: "));
        assert!(matches!(
            build_sodp_prompt(&bedroom(), &demo(), &state, &task(), 2),
            Err(PlannerError::IndexMismatch { existing: 0, got: 2 })
        ));
        let state = state.with_step("Exit the bedroom");
        let p = build_sodp_prompt(&bedroom(), &demo(), &state, &task(), 2).unwrap();
        assert!(p.ends_with("Step 1: Exit the bedroom.\nStep 2: "), "{p:?}");
    }

    #[test]
    fn sodp_appends_steps() {
        let lm = counting(ScriptedOracle::new([("Step 1: Exit the bedroom.\nStep 2: ", "go down the stairs"), ("I can see", "Exit the bedroom.")]));
        let goal = GoalPlan::new("washing machine", "laundry room");
        let s0 = AssembledInstruction::new(HLI, Some(goal));
        let out = run_sodp(&bedroom(), &demo(), &s0, &task(), &lm).unwrap();
        assert_eq!(out.state.steps(), &["Exit the bedroom".to_string()]);
        assert_eq!(out.exchanges.len(), 1);
        let out2 = run_sodp(&bedroom(), &demo(), &out.state, &task(), &lm).unwrap();
        assert_eq!(out2.state.steps(), &["Exit the bedroom".to_string(), "go down the stairs".to_string()]);
        assert_eq!(out2.state.hli(), s0.hli());
        assert_eq!(out2.state.goal(), s0.goal());
        assert_eq!(
            out2.state.render(),
            "Empty the washing machine on level one \
             Goal: The target object is a washing machine. It is usually in a laundry room. \
             Step 1: Exit the bedroom. Step 2: go down the stairs."
        );
        assert_eq!(lm.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn sodp_empty_is_skipped_after_one_retry() {
        let lm = counting(ScriptedOracle::new([("I can see", "   ")]));
        let s0 = AssembledInstruction::new(HLI, None);
        let out = run_sodp(&bedroom(), &demo(), &s0, &task(), &lm).unwrap();
        assert_eq!(out.step, None);
        assert_eq!(out.state, s0);
        assert_eq!(lm.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn render_without_goal() {
        let s = AssembledInstruction::new(" Clean the sink ", None);
        assert_eq!(s.render(), "Clean the sink");
        assert_eq!(s.with_step("Go to the kitchen").render(), "Clean the sink Step 1: Go to the kitchen.");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_completion("laundry room\nQuestion: ..."), "laundry room");
        assert_eq!(parse_completion("  Exit the bedroom.  "), "Exit the bedroom");
        assert_eq!(parse_completion("kitchen. Question: where"), "kitchen");
        assert_eq!(parse_completion("Go  to\tthe hallway"), "Go to the hallway");
        assert_eq!(parse_completion("\nanything"), "");
        let ramble: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
        let parsed = parse_completion(&ramble.join(" "));
        assert_eq!(parsed.split(' ').count(), 30);
        assert_eq!(parsed, ramble[..30].join(" "));
    }

    proptest! {
        #[test]
        fn parse_is_idempotent(raw in "[a-zA-Z .\n\t:]{0,200}") {
            let once = parse_completion(&raw);
            prop_assert_eq!(parse_completion(&once), once.clone());
            prop_assert!(once.split_whitespace().count() <= MAX_STEP_WORDS);
        }

        #[test]
        fn rendered_state_only_grows(steps in prop::collection::vec("[a-z ]{1,20}", 0..8)) {
            let mut state = AssembledInstruction::new(HLI, Some(GoalPlan::new("sink", "kitchen")));
            let mut prev = state.render();
            for s in steps {
                state = state.with_step(parse_completion(&s));
                let cur = state.render();
                prop_assert!(cur.starts_with(&prev));
                prop_assert!(cur.starts_with(HLI));
                prop_assert!(cur.contains(&state.goal().unwrap().sentence));
                prev = cur;
            }
        }
    }
}
