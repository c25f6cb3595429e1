//! Checking planner actions against tool signatures.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{RegistrySnapshot, SemanticType, TypeSignature};
use crate::action::{Action, ArgValue, CallMode, GroupId};

/// Why an action was refused. The `Display` text is what the planner sees.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ValidationFailure {
    #[error("unknown tool `{tool}`")]
    UnknownTool { tool: String },
    #[error("{tool}: missing required parameter `{param}`")]
    MissingParam { tool: String, param: String },
    #[error("{tool}: parameter `{param}` expects {expected}, got {found}")]
    TypeMismatch { tool: String, param: String, expected: String, found: String },
    #[error("{tool}: arguments are {chars} characters, limit is {limit}")]
    OversizeInput { tool: String, chars: usize, limit: usize },
}

/// An action whose arguments have been bound to names and coerced to the
/// declared types, in signature order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedAction {
    pub action: Action,
    pub args: IndexMap<String, ArgValue>,
}

impl ValidatedAction {
    pub fn tool(&self) -> &str {
        &self.action.tool
    }

    pub fn group(&self) -> GroupId {
        self.action.group
    }

    pub fn mode(&self) -> CallMode {
        self.action.mode
    }

    pub fn args_json(&self) -> serde_json::Value {
        serde_json::Value::Object(self.args.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
    }
}

fn describe(value: &ArgValue) -> String {
    match value {
        ArgValue::Bool(b) => format!("boolean {b}"),
        ArgValue::Int(i) => format!("integer {i}"),
        ArgValue::Num(n) => format!("number {n}"),
        ArgValue::Str(s) => {
            let shown: String = s.chars().take(40).collect();
            if shown.len() < s.len() {
                format!("string {shown:?}…")
            } else {
                format!("string {shown:?}")
            }
        }
        ArgValue::List(items) => format!("list of {} strings", items.len()),
    }
}

/// Coerces `value` to `ty`. Returns `None` when no lossless reading exists.
pub fn coerce(value: &ArgValue, ty: SemanticType) -> Option<ArgValue> {
    match (ty, value) {
        (SemanticType::String, ArgValue::Str(_)) => Some(value.clone()),
        (SemanticType::String, ArgValue::Int(i)) => Some(ArgValue::Str(i.to_string())),
        (SemanticType::String, ArgValue::Num(n)) => Some(ArgValue::Str(n.to_string())),
        (SemanticType::String, ArgValue::Bool(b)) => Some(ArgValue::Str(b.to_string())),
        (SemanticType::Integer, ArgValue::Int(_)) => Some(value.clone()),
        (SemanticType::Integer, ArgValue::Num(n)) if n.fract() == 0.0 && n.abs() < 9.0e15 => {
            Some(ArgValue::Int(*n as i64))
        }
        (SemanticType::Integer, ArgValue::Str(s)) => s.trim().parse::<i64>().ok().map(ArgValue::Int),
        (SemanticType::Number, ArgValue::Num(_)) => Some(value.clone()),
        (SemanticType::Number, ArgValue::Int(i)) => Some(ArgValue::Num(*i as f64)),
        (SemanticType::Number, ArgValue::Str(s)) => {
            s.trim().parse::<f64>().ok().filter(|n| n.is_finite()).map(ArgValue::Num)
        }
        (SemanticType::Boolean, ArgValue::Bool(_)) => Some(value.clone()),
        (SemanticType::Boolean, ArgValue::Str(s)) => match s.trim() {
            "true" => Some(ArgValue::Bool(true)),
            "false" => Some(ArgValue::Bool(false)),
            _ => None,
        },
        (SemanticType::ListOfString, ArgValue::List(_)) => Some(value.clone()),
        (SemanticType::ListOfString, ArgValue::Str(s)) => Some(ArgValue::List(vec![s.clone()])),
        _ => None,
    }
}

/// Binds and coerces `action` against `signature`.
pub fn validate_against(action: &Action, signature: &TypeSignature) -> Result<ValidatedAction, ValidationFailure> {
    let tool = &action.tool;
    let mut bound: IndexMap<String, ArgValue> = IndexMap::new();
    let mut positional = 0usize;
    for arg in &action.args {
        let (name, spec) = match &arg.name {
            Some(name) => match signature.param(name) {
                Some(spec) => (name.clone(), spec),
                None => {
                    return Err(ValidationFailure::TypeMismatch {
                        tool: tool.clone(),
                        param: name.clone(),
                        expected: "no such parameter".into(),
                        found: describe(&arg.value),
                    })
                }
            },
            None => {
                let Some(spec) = signature.params.get(positional) else {
                    return Err(ValidationFailure::TypeMismatch {
                        tool: tool.clone(),
                        param: format!("#{}", positional + 1),
                        expected: "no such parameter".into(),
                        found: describe(&arg.value),
                    });
                };
                positional += 1;
                (spec.name.clone(), spec)
            }
        };
        if bound.contains_key(&name) {
            return Err(ValidationFailure::TypeMismatch {
                tool: tool.clone(),
                param: name,
                expected: "a single value".into(),
                found: "the parameter given twice".into(),
            });
        }
        let Some(value) = coerce(&arg.value, spec.ty) else {
            return Err(ValidationFailure::TypeMismatch {
                tool: tool.clone(),
                param: name,
                expected: spec.ty.to_string(),
                found: describe(&arg.value),
            });
        };
        bound.insert(name, value);
    }
    for spec in &signature.params {
        if spec.required && !bound.contains_key(&spec.name) {
            return Err(ValidationFailure::MissingParam { tool: tool.clone(), param: spec.name.clone() });
        }
    }
    // Restore signature order so rendering and payloads are deterministic.
    let mut ordered = IndexMap::with_capacity(bound.len());
    for spec in &signature.params {
        if let Some(value) = bound.swap_remove(&spec.name) {
            ordered.insert(spec.name.clone(), value);
        }
    }
    let validated = ValidatedAction { action: action.clone(), args: ordered };
    if let Some(limit) = signature.max_input_chars {
        let chars = validated.args_json().to_string().chars().count();
        if chars > limit {
            return Err(ValidationFailure::OversizeInput { tool: tool.clone(), chars, limit });
        }
    }
    Ok(validated)
}

/// Validates against whatever the snapshot says about `action.tool`.
///
/// Removed and quarantined tools still validate: their unavailability is
/// reported by the dispatcher so the planner sees a tool-unavailable result.
pub fn validate_action(action: &Action, snapshot: &RegistrySnapshot) -> Result<ValidatedAction, ValidationFailure> {
    let Some(tool) = snapshot.get(&action.tool) else {
        return Err(ValidationFailure::UnknownTool { tool: action.tool.clone() });
    };
    validate_against(action, &tool.descriptor.signature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Argument;
    use crate::registry::{ParamSpec, Registry, ToolDescriptor};
    use proptest::prelude::*;

    fn pdf_registry() -> Registry {
        let registry = Registry::new();
        registry
            .register_tool(
                ToolDescriptor::new("PDFParser", "local://pdf").with_max_parallel(4).with_signature(
                    TypeSignature::new(
                        vec![
                            ParamSpec::required("page", SemanticType::Integer),
                            ParamSpec::required("query", SemanticType::String),
                        ],
                        SemanticType::String,
                    )
                    .with_max_input_chars(8000),
                ),
            )
            .unwrap();
        registry
    }

    #[test]
    fn accepts_the_golden_call() {
        let registry = pdf_registry();
        let action = Action::new(
            "PDFParser",
            vec![
                Argument::named("page", ArgValue::Int(45)),
                Argument::named("query", ArgValue::Str("ARR Q1 2014".into())),
            ],
        );
        let validated = validate_action(&action, &registry.snapshot()).unwrap();
        assert_eq!(validated.args["page"], ArgValue::Int(45));
        assert_eq!(validated.args_json().to_string(), r#"{"page":45,"query":"ARR Q1 2014"}"#);
    }

    #[test]
    fn binds_positional_arguments_in_order() {
        let registry = pdf_registry();
        let action = Action::new(
            "PDFParser",
            vec![Argument::positional(ArgValue::Str("45".into())), Argument::positional(ArgValue::Str("q".into()))],
        );
        let validated = validate_action(&action, &registry.snapshot()).unwrap();
        assert_eq!(validated.args["page"], ArgValue::Int(45));
    }

    #[test]
    fn rejects_words_for_integers() {
        let registry = pdf_registry();
        let action = Action::new(
            "PDFParser",
            vec![
                Argument::named("page", ArgValue::Str("forty-five".into())),
                Argument::named("query", ArgValue::Str("q".into())),
            ],
        );
        match validate_action(&action, &registry.snapshot()) {
            Err(ValidationFailure::TypeMismatch { param, expected, .. }) => {
                assert_eq!(param, "page");
                assert_eq!(expected, "integer");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown() {
        let registry = pdf_registry();
        let missing = Action::new("PDFParser", vec![Argument::named("page", ArgValue::Int(1))]);
        assert_eq!(
            validate_action(&missing, &registry.snapshot()),
            Err(ValidationFailure::MissingParam { tool: "PDFParser".into(), param: "query".into() })
        );
        let unknown = Action::new("Calculator", vec![]);
        assert_eq!(
            validate_action(&unknown, &registry.snapshot()),
            Err(ValidationFailure::UnknownTool { tool: "Calculator".into() })
        );
    }

    #[test]
    fn oversize_input_is_measured_on_serialized_arguments() {
        let registry = pdf_registry();
        // {"page":1,"query":"<q>"} is 21 characters of framing around q.
        let framing = r#"{"page":1,"query":""}"#.chars().count();
        let query = "x".repeat(12_000 - framing);
        let action = Action::new(
            "PDFParser",
            vec![Argument::named("page", ArgValue::Int(1)), Argument::named("query", ArgValue::Str(query))],
        );
        assert_eq!(
            validate_action(&action, &registry.snapshot()),
            Err(ValidationFailure::OversizeInput { tool: "PDFParser".into(), chars: 12_000, limit: 8_000 })
        );
    }

    fn arb_value() -> impl Strategy<Value = ArgValue> {
        prop_oneof![
            any::<bool>().prop_map(ArgValue::Bool),
            any::<i64>().prop_map(ArgValue::Int),
            any::<f64>().prop_map(ArgValue::Num),
            proptest::collection::vec(any::<u8>(), 0..64)
                .prop_map(|bytes| ArgValue::Str(String::from_utf8_lossy(&bytes).into_owned())),
            proptest::collection::vec(".*", 0..4).prop_map(ArgValue::List),
        ]
    }

    proptest! {
        #[test]
        fn validation_is_total(args in proptest::collection::vec((proptest::option::of("[a-z]{1,6}"), arb_value()), 0..6)) {
            let registry = pdf_registry();
            let action = Action::new(
                "PDFParser",
                args.into_iter().map(|(name, value)| Argument { name, value }).collect(),
            );
            // Either outcome is fine; it must not panic.
            let _ = validate_action(&action, &registry.snapshot());
        }
    }
}
