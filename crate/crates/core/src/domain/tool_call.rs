use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// One structured tool invocation recognized in model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: Map<String, Value>,
    pub call_index: usize,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, arguments: Map<String, Value>, call_index: usize) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments,
            call_index,
        }
    }

    pub fn arg(&self, name: &str) -> Option<&Value> {
        self.arguments.get(name)
    }

    pub fn arg_str(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).and_then(Value::as_str)
    }
}
