use serde::{Deserialize, Serialize};

use crate::envs::ActionId;

const OPEN: &str = "<action>";
const CLOSE: &str = "</action>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    MissingTags,
    NotInteger,
    OutOfRange,
}

/// Body of the first complete `<action>...</action>` pair: the first closing
/// tag together with the nearest opening tag before it.
fn first_tagged(raw: &str) -> Option<&str> {
    let mut search_from = 0;
    while let Some(rel) = raw[search_from..].find(CLOSE) {
        let close = search_from + rel;
        if let Some(open) = raw[..close].rfind(OPEN) {
            return Some(&raw[open + OPEN.len()..close]);
        }
        search_from = close + CLOSE.len();
    }
    None
}

/// Extracts the advised action index from a tutor reply.
pub fn parse_action(raw: &str, action_count: usize) -> Result<ActionId, ParseFailure> {
    let body = first_tagged(raw).ok_or(ParseFailure::MissingTags)?.trim();
    let digits = body.strip_prefix(['+', '-']).unwrap_or(body);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseFailure::NotInteger);
    }
    if body.starts_with('-') && digits.bytes().any(|b| b != b'0') {
        return Err(ParseFailure::OutOfRange);
    }
    match digits.parse::<usize>() {
        Ok(n) if n < action_count => Ok(ActionId(n)),
        // overflow is still a well-formed integer, just far out of range
        _ => Err(ParseFailure::OutOfRange),
    }
}
