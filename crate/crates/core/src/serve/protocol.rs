use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Prediction, ServeError, Session, SessionConfig, DEFAULT_STRIDE};
use crate::keypoint::{KeypointFrame, LayoutSpec, Point3, MISSING};
use crate::model::Model;

/// WebSocket close codes used by the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloseCode {
    Layout = 4001,
    BadValue = 4002,
    ProtocolOrder = 4003,
}

impl CloseCode {
    pub fn code(self) -> u16 {
        self as u16
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Close {
    pub code: CloseCode,
    pub reason: String,
}

impl Close {
    fn new(code: CloseCode, reason: impl Into<String>) -> Self {
        Self {
            code,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Close {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.code.code(), self.reason)
    }
}

impl From<ServeError> for Close {
    fn from(e: ServeError) -> Self {
        Self::new(e.close_code(), e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Hello {
        layout: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    Frame {
        t: i64,
        lm: Vec<[Option<f64>; 3]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Ready {
        classes: Vec<String>,
        window: usize,
        stride: usize,
    },
    Prediction {
        window_end: i64,
        label: String,
        probs: Vec<f64>,
        latency_ms: f64,
    },
}

impl From<Prediction> for ServerMsg {
    fn from(p: Prediction) -> Self {
        Self::Prediction {
            window_end: p.window_end,
            label: p.label,
            probs: p.probs,
            latency_ms: p.latency_ms,
        }
    }
}

impl ServerMsg {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Protocol state for one connection: a `hello` must come first, then
/// any number of `frame` messages.
#[derive(Debug)]
pub struct Connection {
    model: Arc<Model>,
    window: usize,
    session: Option<Session>,
}

impl Connection {
    pub fn new(model: Arc<Model>, window: usize) -> Self {
        Self {
            model,
            window,
            session: None,
        }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// Handles one text message. `Err` means the connection must close
    /// with the given code.
    pub fn on_text(&mut self, text: &str) -> Result<Option<ServerMsg>, Close> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Close::new(CloseCode::ProtocolOrder, format!("not JSON: {e}")))?;
        let kind = value
            .get("type")
            .and_then(|t| t.as_str())
            .unwrap_or_default()
            .to_string();
        if kind != "hello" && kind != "frame" {
            return Err(Close::new(
                CloseCode::ProtocolOrder,
                format!("unknown message type {kind:?}"),
            ));
        }
        let msg: ClientMsg = serde_json::from_value(value).map_err(|e| {
            let code = if kind == "frame" {
                CloseCode::BadValue
            } else {
                CloseCode::ProtocolOrder
            };
            Close::new(code, format!("malformed {kind}: {e}"))
        })?;
        match msg {
            ClientMsg::Hello { layout, stride } => {
                if self.session.is_some() {
                    return Err(Close::new(CloseCode::ProtocolOrder, "duplicate hello"));
                }
                let layout = LayoutSpec::by_name(&layout).map_err(|e| Close::new(CloseCode::Layout, e.to_string()))?;
                let cfg = SessionConfig {
                    window: self.window,
                    stride: stride.unwrap_or(DEFAULT_STRIDE),
                };
                if cfg.stride == 0 {
                    return Err(Close::new(CloseCode::BadValue, "stride must be at least 1"));
                }
                let session = Session::new(self.model.clone(), layout, cfg)?;
                self.session = Some(session);
                Ok(Some(ServerMsg::Ready {
                    classes: self.model.class_names.clone(),
                    window: cfg.window,
                    stride: cfg.stride,
                }))
            }
            ClientMsg::Frame { t, lm } => {
                let session = self
                    .session
                    .as_mut()
                    .ok_or_else(|| Close::new(CloseCode::ProtocolOrder, "frame before hello"))?;
                let points = lm
                    .iter()
                    .map(|p| match p {
                        [Some(x), Some(y), Some(z)] => Ok([*x, *y, *z]),
                        [None, None, None] => Ok(MISSING),
                        _ => Err(Close::new(
                            CloseCode::BadValue,
                            format!("t={t}: partially missing landmark"),
                        )),
                    })
                    .collect::<Result<Vec<Point3>, _>>()?;
                let frame = KeypointFrame::new(t, points, session.layout().clone()).map_err(ServeError::from)?;
                Ok(session.handle_frame(&frame)?.map(ServerMsg::from))
            }
        }
    }
}
