//! Server-side stand-in for a remote client: a registered node whose
//! traffic arrives as serialized envelopes.

use serde_json::{json, Value};

use super::{topics, Bus, BusError, BusMessage, Endpoint, NodeHandle, BUS_NODE_ID};

pub(crate) struct Proxy {
    pub handle: NodeHandle,
}

pub(crate) fn parse_envelope(text: &str) -> Result<BusMessage, BusError> {
    let env: BusMessage = serde_json::from_str(text).map_err(|e| BusError::ProtocolError(e.to_string()))?;
    if env.topic.is_empty() {
        return Err(BusError::ProtocolError("empty topic".into()));
    }
    Ok(env)
}

pub(crate) fn control(topic: &str, payload: Value) -> BusMessage {
    BusMessage { topic: topic.into(), seq: 0, timestamp_ms: 0, node_id: BUS_NODE_ID.into(), payload }
}

impl Proxy {
    /// Registers the proxy from the client's first envelope. A `bus/hello`
    /// names the node and is answered with `bus/welcome`; anything else
    /// registers an anonymous node and is processed normally.
    pub fn open(bus: &Bus, default_name: &str, first: &str) -> Result<(Proxy, Option<BusMessage>), BusError> {
        let env = parse_envelope(first)?;
        if env.topic == topics::BUS_HELLO {
            let name = if env.node_id.is_empty() { default_name } else { env.node_id.as_str() };
            let proxy = Proxy { handle: bus.register_fresh(name)? };
            let welcome = proxy.welcome();
            return Ok((proxy, Some(welcome)));
        }
        let proxy = Proxy { handle: bus.register_fresh(default_name)? };
        let reply = proxy.dispatch(env)?;
        Ok((proxy, reply))
    }

    fn welcome(&self) -> BusMessage {
        control(topics::BUS_WELCOME, json!({ "node_id": self.handle.node_id() }))
    }

    pub fn handle_text(&self, text: &str) -> Result<Option<BusMessage>, BusError> {
        self.dispatch(parse_envelope(text)?)
    }

    fn dispatch(&self, env: BusMessage) -> Result<Option<BusMessage>, BusError> {
        let topic_arg = || {
            env.payload
                .get("topic")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| BusError::ProtocolError(format!("{} needs a `topic` string", env.topic)))
        };
        match env.topic.as_str() {
            topics::BUS_HELLO => Ok(Some(self.welcome())),
            topics::BUS_SUBSCRIBE => {
                let t = topic_arg()?;
                self.handle.subscribe(&t)?;
                Ok(Some(control(topics::BUS_SUBSCRIBED, json!({ "topic": t }))))
            }
            topics::BUS_UNSUBSCRIBE => {
                let t = topic_arg()?;
                self.handle.unsubscribe(&t)?;
                Ok(Some(control(topics::BUS_UNSUBSCRIBED, json!({ "topic": t }))))
            }
            t if topics::is_control(t) => Err(BusError::ProtocolError(format!("{t} is reserved for the server"))),
            // the proxy re-stamps seq and node_id: the client's own counter
            // is not trusted, and ordering is preserved by the single reader
            _ => self.handle.publish(&env.topic, env.payload).map(|_| None),
        }
    }
}
