//! Chat wire format: trajectories as chat-completions message lists.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::environment::parse_feedback;
use crate::error::{Error, Result};
use crate::query::{ToolQuery, ToolResult};
use crate::rollout::{think_text, RoundRecord, ToolPhase, Trajectory};
use crate::universe::{ItemId, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// Message content: plain text, or a structured tool result (verbose format).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Content {
    Text(String),
    Structured(Value),
}

impl Content {
    /// Text form; structured content is rendered with wire separators.
    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        match self {
            Content::Text(s) => s.as_str().into(),
            Content::Structured(v) => crate::pyjson::to_string(v).into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    pub arguments: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub function: FunctionCall,
}

/// Field order follows the wire layout: `role, tool_call_id, name, content,
/// tool_calls`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub content: Content,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
}

impl ChatMessage {
    pub fn text(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            tool_call_id: None,
            name: None,
            content: Content::Text(content.into()),
            tool_calls: None,
        }
    }

    /// The text a token counter sees: content plus any tool-call names and
    /// arguments.
    pub fn counted_text(&self) -> String {
        let mut s = self.content.text().into_owned();
        for c in self.tool_calls.iter().flatten() {
            s.push_str(&c.function.name);
            s.push_str(&c.function.arguments);
        }
        s
    }

    /// The same message with structured content flattened to text, as sent
    /// to endpoints that only accept string content.
    pub fn stringified(&self) -> ChatMessage {
        ChatMessage {
            content: Content::Text(self.content.text().into_owned()),
            ..self.clone()
        }
    }
}

pub fn system_message(prompt: &str) -> ChatMessage {
    ChatMessage::text(Role::System, prompt)
}

pub fn answer_text(name: &str) -> String {
    format!("<answer>{name}</answer>")
}

/// Messages of one round: `[assistant tool call, tool result, assistant
/// guess, user feedback]`, or just the last two for the opening round.
pub fn round_messages(tool_name: &str, r: &RoundRecord) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(4);
    if let Some(phase) = &r.tool {
        out.push(ChatMessage {
            role: Role::Assistant,
            tool_call_id: None,
            name: None,
            content: Content::Text(think_text(tool_name)),
            tool_calls: Some(vec![ToolCall {
                id: phase.call_id.clone(),
                kind: "function".into(),
                function: FunctionCall {
                    name: tool_name.into(),
                    arguments: phase.query.to_arguments(),
                },
            }]),
        });
        let content = match &phase.result {
            ToolResult::Concise(c) => Content::Text(c.render()),
            ToolResult::Verbose(v) => Content::Structured(serde_json::to_value(v).expect("plain data")),
        };
        out.push(ChatMessage {
            role: Role::Tool,
            tool_call_id: Some(phase.call_id.clone()),
            name: Some(tool_name.into()),
            content,
            tool_calls: None,
        });
    }
    out.push(ChatMessage::text(Role::Assistant, answer_text(&r.guess)));
    out.push(ChatMessage::text(Role::User, r.feedback.render()));
    out
}

pub fn serialize_trajectory(t: &Trajectory) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(1 + 4 * t.rounds.len());
    out.push(system_message(&t.system_prompt));
    for r in &t.rounds {
        out.extend(round_messages(&t.tool_name, r));
    }
    out
}

/// Message index of the first message of round `index` (1-based) in a
/// serialized trajectory.
pub fn round_start(index: usize) -> usize {
    if index <= 1 {
        1
    } else {
        3 + 4 * (index - 2)
    }
}

/// Message indices of the tool result and the feedback of a round.
pub fn tool_message_index(index: usize) -> Option<usize> {
    (index >= 2).then(|| round_start(index) + 1)
}

pub fn feedback_message_index(index: usize) -> usize {
    if index <= 1 {
        2
    } else {
        round_start(index) + 3
    }
}

/// Number of whole rounds in a message list of the serialized layout.
pub fn rounds_in(messages: usize) -> usize {
    if messages < 3 {
        0
    } else {
        1 + (messages - 3) / 4
    }
}

/// A parsed message list: everything a trajectory holds except metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub system_prompt: String,
    pub tool_name: Option<String>,
    pub rounds: Vec<RoundRecord>,
}

fn at(index: usize, message: impl Into<String>) -> Error {
    Error::Transcript {
        index,
        message: message.into(),
    }
}

pub fn extract_answer_tag(text: &str) -> Option<&str> {
    let start = text.rfind("<answer>")? + "<answer>".len();
    let len = text[start..].find("</answer>")?;
    Some(&text[start..start + len])
}

/// Parses a message list in the serialized layout back into rounds. With a
/// universe, guessed names resolve to ids and section kinds come from its
/// schema; without one, ids are left as `#0`.
pub fn parse_transcript(messages: &[ChatMessage], u: Option<&Universe>) -> Result<Transcript> {
    let first = messages.first().ok_or_else(|| at(0, "empty message list"))?;
    if first.role != Role::System {
        return Err(at(0, "first message must be the system prompt"));
    }
    let schema = u.map(|u| u.schema());
    let mut tool_name = None;
    let mut rounds = Vec::new();
    let mut i = 1;
    while i < messages.len() {
        let mut tool = None;
        if messages[i].role == Role::Assistant && messages[i].tool_calls.is_some() {
            let call = &messages[i].tool_calls.as_ref().unwrap();
            let [call] = call.as_slice() else {
                return Err(at(i, "expected exactly one tool call"));
            };
            tool_name.get_or_insert_with(|| call.function.name.clone());
            let query: ToolQuery =
                serde_json::from_str(&call.function.arguments).map_err(|e| at(i, format!("bad arguments: {e}")))?;
            let reply = messages.get(i + 1).ok_or_else(|| at(i + 1, "missing tool result"))?;
            if reply.role != Role::Tool || reply.tool_call_id.as_deref() != Some(call.id.as_str()) {
                return Err(at(i + 1, "expected the tool result for the preceding call"));
            }
            let result: ToolResult = match &reply.content {
                Content::Text(s) => serde_json::from_str(s),
                Content::Structured(v) => serde_json::from_value(v.clone()),
            }
            .map_err(|e| at(i + 1, format!("bad tool result: {e}")))?;
            tool = Some(ToolPhase {
                call_id: call.id.clone(),
                query,
                result,
            });
            i += 2;
        }
        let guess_msg = messages.get(i).ok_or_else(|| at(i, "missing guess"))?;
        if guess_msg.role != Role::Assistant {
            return Err(at(i, "expected an assistant guess"));
        }
        let guess = extract_answer_tag(&guess_msg.content.text())
            .ok_or_else(|| at(i, "guess without <answer> tag"))?
            .to_string();
        let fb_msg = messages.get(i + 1).ok_or_else(|| at(i + 1, "missing feedback"))?;
        if fb_msg.role != Role::User {
            return Err(at(i + 1, "expected user feedback"));
        }
        let feedback = parse_feedback(&fb_msg.content.text(), schema).map_err(|e| match e {
            Error::Transcript { message, .. } => at(i + 1, message),
            other => other,
        })?;
        let guess_id = u.and_then(|u| u.by_name(&guess)).map_or(ItemId(0), |it| it.id);
        rounds.push(RoundRecord {
            index: feedback.round,
            tool,
            guess_id,
            guess,
            feedback,
        });
        i += 2;
    }
    Ok(Transcript {
        system_prompt: first.content.text().into_owned(),
        tool_name,
        rounds,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureViolation {
    pub index: usize,
    pub message: String,
}

/// Checks chat-completions structure: a single leading system message, tool
/// messages answering pending calls of the preceding assistant message, and
/// every call answered before the conversation moves on.
pub fn validate_chat_structure(messages: &[ChatMessage]) -> Vec<StructureViolation> {
    let mut out = Vec::new();
    let mut flag = |index: usize, message: &str| {
        out.push(StructureViolation {
            index,
            message: message.into(),
        })
    };
    if messages.first().map(|m| m.role) != Some(Role::System) {
        flag(0, "conversation must open with a system message");
    }
    let mut pending: HashSet<String> = HashSet::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, m) in messages.iter().enumerate() {
        if m.role != Role::Tool && !pending.is_empty() {
            flag(i, "tool calls left unanswered");
            pending.clear();
        }
        match m.role {
            Role::System if i > 0 => flag(i, "system message after the start"),
            Role::Tool => match &m.tool_call_id {
                Some(id) if pending.remove(id) => {}
                Some(_) => flag(i, "tool message does not answer a pending call"),
                None => flag(i, "tool message without tool_call_id"),
            },
            Role::Assistant => {
                for c in m.tool_calls.iter().flatten() {
                    if c.kind != "function" {
                        flag(i, "tool call type must be \"function\"");
                    }
                    if !seen_ids.insert(c.id.clone()) {
                        flag(i, "duplicate tool call id");
                    }
                    pending.insert(c.id.clone());
                }
            }
            _ => {
                if m.tool_calls.is_some() {
                    flag(i, "only assistant messages may carry tool calls");
                }
            }
        }
        if i > 0 && m.role == messages[i - 1].role && m.role != Role::Tool {
            flag(i, "consecutive messages with the same role");
        }
    }
    if !pending.is_empty() {
        flag(messages.len(), "tool calls left unanswered at the end");
    }
    out
}
