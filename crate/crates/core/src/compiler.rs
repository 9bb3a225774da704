//! Trace → ActionPlan compilation.
//!
//! Expansion per action kind:
//!
//! * click: `resolve, click, wait_idle, record_target`
//! * click-all: `resolve(scope), click_each_and_return(links)`, the latter
//!   waiting and recording after every link
//! * repeat-click: `loop(resolve, click, wait_idle, record_target)` bounded by
//!   the action's max_iterations
//!
//! Everything is preceded by a single `navigate` to the capture target.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::trace::{validate_trace, ActionKind, OnMissing, Selector, Trace, Until, UrlPattern};

/// Placeholder in the first navigate step, replaced by the concrete URL.
pub const TARGET_URL: &str = "{url}";
/// Upper bound on any wait for network quiet.
pub const WAIT_CAP_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot compile trace: {0}")]
pub struct CompileError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StepOp {
    Navigate {
        url: String,
    },
    Resolve {
        selector: Selector,
        binding: String,
        on_missing: OnMissing,
    },
    Click {
        binding: String,
    },
    ClickEachAndReturn {
        scope: String,
        links: Selector,
        quiet_ms: u64,
        cap_ms: u64,
        category: String,
    },
    Loop {
        body: Vec<PlanStep>,
        /// Binding whose state decides `until`; produced by the body's resolve.
        probe: String,
        until: Until,
        max_iterations: u32,
    },
    WaitIdle {
        quiet_ms: u64,
        cap_ms: u64,
    },
    RecordTarget {
        binding: String,
        category: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanStep {
    /// Index of the trace action this step came from; `None` for the
    /// initial navigate.
    pub action: Option<usize>,
    #[serde(flatten)]
    pub op: StepOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionPlan {
    pub trace_id: String,
    pub compiled_for: String,
    pub steps: Vec<PlanStep>,
}

fn step(action: usize, op: StepOp) -> PlanStep {
    PlanStep {
        action: Some(action),
        op,
    }
}

fn need<'a>(sel: &'a Option<Selector>, what: &str, i: usize) -> Result<&'a Selector, CompileError> {
    sel.as_ref()
        .ok_or_else(|| CompileError(format!("action {i} has no {what}")))
}

/// Compiles a validated trace. Pure: the plan depends only on `trace`.
pub fn compile(trace: &Trace) -> Result<ActionPlan, CompileError> {
    if let Some(f) = validate_trace(trace).errors().next() {
        return Err(CompileError(format!("{}: {}", f.field, f.message)));
    }
    let mut steps = vec![PlanStep {
        action: None,
        op: StepOp::Navigate {
            url: TARGET_URL.to_string(),
        },
    }];
    for (i, a) in trace.actions.iter().enumerate() {
        let category = trace.category(i).to_string();
        let binding = format!("a{i}");
        let wait = StepOp::WaitIdle {
            quiet_ms: a.wait_after_ms,
            cap_ms: WAIT_CAP_MS,
        };
        match a.kind {
            ActionKind::Click => {
                steps.push(step(
                    i,
                    StepOp::Resolve {
                        selector: need(&a.selector, "selector", i)?.clone(),
                        binding: binding.clone(),
                        on_missing: a.on_missing,
                    },
                ));
                steps.push(step(i, StepOp::Click { binding: binding.clone() }));
                steps.push(step(i, wait));
                steps.push(step(i, StepOp::RecordTarget { binding, category }));
            }
            ActionKind::ClickAll => {
                steps.push(step(
                    i,
                    StepOp::Resolve {
                        selector: need(&a.scope_selector, "scope_selector", i)?.clone(),
                        binding: binding.clone(),
                        on_missing: a.on_missing,
                    },
                ));
                steps.push(step(
                    i,
                    StepOp::ClickEachAndReturn {
                        scope: binding,
                        links: need(&a.link_selector, "link_selector", i)?.clone(),
                        quiet_ms: a.wait_after_ms,
                        cap_ms: WAIT_CAP_MS,
                        category,
                    },
                ));
            }
            ActionKind::RepeatClick => {
                let until = a
                    .until
                    .ok_or_else(|| CompileError(format!("action {i} has no until")))?;
                let body = vec![
                    step(
                        i,
                        StepOp::Resolve {
                            selector: need(&a.selector, "selector", i)?.clone(),
                            binding: binding.clone(),
                            on_missing: a.on_missing,
                        },
                    ),
                    step(i, StepOp::Click { binding: binding.clone() }),
                    step(i, wait),
                    step(
                        i,
                        StepOp::RecordTarget {
                            binding: binding.clone(),
                            category,
                        },
                    ),
                ];
                steps.push(step(
                    i,
                    StepOp::Loop {
                        body,
                        probe: binding,
                        until,
                        max_iterations: a.effective_max_iterations(),
                    },
                ));
            }
        }
    }
    let plan = ActionPlan {
        trace_id: trace.id.clone(),
        compiled_for: trace.url_pattern.as_str().to_string(),
        steps,
    };
    plan.check(trace.actions.len())?;
    Ok(plan)
}

impl ActionPlan {
    pub fn pattern(&self) -> UrlPattern {
        UrlPattern::new(self.compiled_for.clone())
    }

    /// Plan with the target placeholder replaced by `url`.
    pub fn bind(&self, url: &str) -> ActionPlan {
        let mut plan = self.clone();
        for s in &mut plan.steps {
            if let StepOp::Navigate { url: u } = &mut s.op {
                if u == TARGET_URL {
                    *u = url.to_string();
                }
            }
        }
        plan
    }

    /// Verifies structural invariants: leading navigate, bindings defined
    /// before use, non-empty loop bodies, and every action represented.
    pub fn check(&self, action_count: usize) -> Result<(), CompileError> {
        match self.steps.first() {
            Some(PlanStep {
                op: StepOp::Navigate { .. },
                ..
            }) => {}
            _ => return Err(CompileError("plan must start with navigate".into())),
        }
        let mut bound = HashSet::new();
        let mut seen = HashSet::new();
        check_steps(&self.steps, &mut bound, &mut seen)?;
        if let Some(missing) = (0..action_count).find(|i| !seen.contains(i)) {
            return Err(CompileError(format!("action {missing} has no steps")));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# plan for trace {} ({})", self.trace_id, self.compiled_for);
        render_steps(&self.steps, 0, &mut out);
        out
    }
}

fn check_steps(
    steps: &[PlanStep],
    bound: &mut HashSet<String>,
    seen: &mut HashSet<usize>,
) -> Result<(), CompileError> {
    let use_of = |b: &String, bound: &HashSet<String>| {
        if bound.contains(b) {
            Ok(())
        } else {
            Err(CompileError(format!("binding {b} used before resolve")))
        }
    };
    for s in steps {
        if let Some(a) = s.action {
            seen.insert(a);
        }
        match &s.op {
            StepOp::Resolve { binding, .. } => {
                bound.insert(binding.clone());
            }
            StepOp::Click { binding } | StepOp::RecordTarget { binding, .. } => use_of(binding, bound)?,
            StepOp::ClickEachAndReturn { scope, .. } => use_of(scope, bound)?,
            StepOp::Loop {
                body,
                max_iterations,
                ..
            } => {
                if body.is_empty() {
                    return Err(CompileError("empty loop body".into()));
                }
                if *max_iterations == 0 {
                    return Err(CompileError("loop without iterations".into()));
                }
                check_steps(body, bound, seen)?;
            }
            StepOp::Navigate { .. } | StepOp::WaitIdle { .. } => {}
        }
    }
    Ok(())
}

fn render_steps(steps: &[PlanStep], depth: usize, out: &mut String) {
    for s in steps {
        let indent = "  ".repeat(depth);
        let origin = s.action.map(|a| format!("[{a}] ")).unwrap_or_default();
        let _ = writeln!(out, "{indent}{origin}{}", s.op);
        if let StepOp::Loop { body, .. } = &s.op {
            render_steps(body, depth + 1, out);
        }
    }
}

impl fmt::Display for StepOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepOp::Navigate { url } => write!(f, "navigate {url}"),
            StepOp::Resolve {
                selector,
                binding,
                on_missing,
            } => write!(f, "resolve {selector} -> {binding} (on_missing={})", on_missing.as_str()),
            StepOp::Click { binding } => write!(f, "click {binding}"),
            StepOp::ClickEachAndReturn {
                scope,
                links,
                quiet_ms,
                cap_ms,
                category,
            } => write!(
                f,
                "click_each_and_return {links} in {scope} wait_idle({quiet_ms},{cap_ms}) record[{category}]"
            ),
            StepOp::Loop {
                probe,
                until,
                max_iterations,
                ..
            } => write!(f, "loop until {} on {probe} max {max_iterations}", until.as_str()),
            StepOp::WaitIdle { quiet_ms, cap_ms } => write!(f, "wait_idle({quiet_ms},{cap_ms})"),
            StepOp::RecordTarget { binding, category } => {
                write!(f, "record_target {binding} [{category}]")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Provenance, TraceAction};
    use chrono::DateTime;

    fn trace(actions: Vec<TraceAction>) -> Trace {
        let mut t = Trace::new(
            "t",
            UrlPattern::new("https://h/*"),
            Provenance {
                created_on: "https://h/x".into(),
                user_agent: "UA".into(),
                created_at: DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z").unwrap(),
                curator: None,
            },
        );
        t.actions = actions;
        t
    }

    fn ops(plan: &ActionPlan) -> Vec<&'static str> {
        plan.steps
            .iter()
            .map(|s| match s.op {
                StepOp::Navigate { .. } => "navigate",
                StepOp::Resolve { .. } => "resolve",
                StepOp::Click { .. } => "click",
                StepOp::ClickEachAndReturn { .. } => "click_each_and_return",
                StepOp::Loop { .. } => "loop",
                StepOp::WaitIdle { .. } => "wait_idle",
                StepOp::RecordTarget { .. } => "record_target",
            })
            .collect()
    }

    #[test]
    fn single_click_expansion() {
        let plan = compile(&trace(vec![TraceAction::click(Selector::id("go"))])).unwrap();
        assert_eq!(ops(&plan), ["navigate", "resolve", "click", "wait_idle", "record_target"]);
        assert_eq!(
            plan.steps[3].op,
            StepOp::WaitIdle {
                quiet_ms: 2000,
                cap_ms: 60_000
            }
        );
    }

    #[test]
    fn repeat_click_expansion() {
        let plan = compile(&trace(vec![TraceAction::repeat_click(
            Selector::id("next"),
            Until::MaxOnly,
            Some(3),
        )]))
        .unwrap();
        assert_eq!(ops(&plan), ["navigate", "loop"]);
        let StepOp::Loop {
            body,
            max_iterations,
            ..
        } = &plan.steps[1].op
        else {
            panic!("expected loop");
        };
        assert_eq!(*max_iterations, 3);
        let body_ops: Vec<_> = body.iter().map(|s| s.op.to_string()).collect();
        assert!(body_ops[0].starts_with("resolve"));
        assert_eq!(body_ops[1], "click a0");
        assert!(body_ops[2].starts_with("wait_idle"));
        assert!(body_ops[3].starts_with("record_target"));
    }

    #[test]
    fn click_all_expansion_and_categories() {
        let mut t = trace(vec![TraceAction::click_all(Selector::id("files"), Selector::css("a.file"))]);
        t.categories.insert(0, "files".into());
        let plan = compile(&t).unwrap();
        assert_eq!(ops(&plan), ["navigate", "resolve", "click_each_and_return"]);
        assert!(matches!(&plan.steps[2].op, StepOp::ClickEachAndReturn { category, .. } if category == "files"));
    }

    #[test]
    fn deterministic_and_bound() {
        let t = trace(vec![
            TraceAction::click(Selector::id("a")),
            TraceAction::repeat_click(Selector::class("n"), Until::ElementDisabled, None),
        ]);
        let a = compile(&t).unwrap();
        assert_eq!(a, compile(&t).unwrap());
        let bound = a.bind("https://h/page");
        assert_eq!(
            bound.steps[0].op,
            StepOp::Navigate {
                url: "https://h/page".into()
            }
        );
        assert!(a.render().contains("loop until element-disabled on a1 max 1000"));
    }

    #[test]
    fn invalid_trace_rejected() {
        let mut a = TraceAction::click_all(Selector::id("s"), Selector::css("a"));
        a.link_selector = None;
        assert!(compile(&trace(vec![a])).is_err());
    }
}
