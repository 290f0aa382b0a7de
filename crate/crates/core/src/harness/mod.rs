//! Chat serialization, answer scoring, endpoint evaluation and reports.

pub mod answer;
pub mod chat;
pub mod eval;
pub mod report;

pub use answer::{extract_answer, score, Extracted};
pub use chat::{
    parse_transcript, serialize_trajectory, validate_chat_structure, ChatMessage, Content, Role, ToolCall,
};
pub use eval::{run_eval, EvalConfig, EvalResult};
pub use report::{aggregate, Report};
