use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

/// Speech-act type of a message. Decoding rejects anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Performative {
    Request,
    Agree,
    Refuse,
    Inform,
    Failure,
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Performative::Request => "REQUEST",
            Performative::Agree => "AGREE",
            Performative::Refuse => "REFUSE",
            Performative::Inform => "INFORM",
            Performative::Failure => "FAILURE",
        })
    }
}

impl FromStr for Performative {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown performative {s:?}"))
    }
}

/// A delivered message. `content` is a JSON document; `seq` counts messages
/// from `sender` to `receiver`, starting at 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub performative: Performative,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub conversation_id: String,
    pub content: String,
    pub seq: u64,
}

impl Message {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Decodes the content as `T`.
    pub fn payload<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_str(&self.content)
    }

    /// The `reason` field of a FAILURE or REFUSE payload, if any.
    pub fn reason(&self) -> Option<String> {
        let v: serde_json::Value = serde_json::from_str(&self.content).ok()?;
        v.get("reason")?.as_str().map(str::to_string)
    }
}

/// A message before the platform stamps sender and sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub performative: Performative,
    pub receiver: AgentId,
    pub conversation_id: String,
    pub content: String,
}

impl Outgoing {
    pub fn new<T: Serialize + ?Sized>(
        performative: Performative,
        receiver: impl Into<AgentId>,
        conversation_id: impl Into<String>,
        payload: &T,
    ) -> Self {
        Outgoing {
            performative,
            receiver: receiver.into(),
            conversation_id: conversation_id.into(),
            content: serde_json::to_string(payload).expect("payload serializes"),
        }
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

impl From<&AgentId> for AgentId {
    fn from(id: &AgentId) -> Self {
        id.clone()
    }
}
