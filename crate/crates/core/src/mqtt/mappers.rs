use crate::sul::{ActionKind, ConcreteAction, Mapper, WillSpec};

pub const SIMPLE: &str = "simple";
pub const TWO_CLIENT_RETAINED_WILL: &str = "two-client-retained-will";
pub const MAPPER_NAMES: [&str; 2] = [SIMPLE, TWO_CLIENT_RETAINED_WILL];

/// Topic of the will registered by `ConnectWill2`.
pub const WILL_TOPIC: &str = "c2_will";

fn publish(client: usize, topic: &str, payload: &str, retain: bool) -> ConcreteAction {
    ConcreteAction::new(
        client,
        ActionKind::Publish {
            topic: topic.to_string(),
            payload: payload.as_bytes().to_vec(),
            retain,
        },
    )
}

/// One client on topic `t` with payload `m`.
pub fn simple() -> Mapper {
    let topic = || "t".to_string();
    Mapper::new(
        SIMPLE,
        1,
        vec![
            (
                "Connect".into(),
                ConcreteAction::new(0, ActionKind::Connect { will: None }),
            ),
            (
                "Disconnect".into(),
                ConcreteAction::new(0, ActionKind::Disconnect),
            ),
            (
                "TcpClose".into(),
                ConcreteAction::new(0, ActionKind::TcpClose),
            ),
            (
                "Subscribe".into(),
                ConcreteAction::new(0, ActionKind::Subscribe { topic: topic() }),
            ),
            (
                "Unsubscribe".into(),
                ConcreteAction::new(0, ActionKind::Unsubscribe { topic: topic() }),
            ),
            ("Publish".into(), publish(0, "t", "m", false)),
            ("PublishRetained".into(), publish(0, "t", "m", true)),
        ],
    )
}

/// Client 1 watches `c2_will`; client 2 connects with the retained will `bye`
/// on that topic and can publish or clear a retained message there.
pub fn two_client_retained_will() -> Mapper {
    let topic = || WILL_TOPIC.to_string();
    let will = WillSpec {
        topic: topic(),
        payload: b"bye".to_vec(),
        retain: true,
    };
    Mapper::new(
        TWO_CLIENT_RETAINED_WILL,
        2,
        vec![
            (
                "Connect1".into(),
                ConcreteAction::new(0, ActionKind::Connect { will: None }),
            ),
            (
                "Subscribe1".into(),
                ConcreteAction::new(0, ActionKind::Subscribe { topic: topic() }),
            ),
            (
                "Unsubscribe1".into(),
                ConcreteAction::new(0, ActionKind::Unsubscribe { topic: topic() }),
            ),
            (
                "Disconnect1".into(),
                ConcreteAction::new(0, ActionKind::Disconnect),
            ),
            (
                "ConnectWill2".into(),
                ConcreteAction::new(1, ActionKind::Connect { will: Some(will) }),
            ),
            (
                "Disconnect2".into(),
                ConcreteAction::new(1, ActionKind::Disconnect),
            ),
            (
                "TcpClose2".into(),
                ConcreteAction::new(1, ActionKind::TcpClose),
            ),
            ("PublishRetained2".into(), publish(1, WILL_TOPIC, "m", true)),
            ("DeleteRetained2".into(), publish(1, WILL_TOPIC, "", true)),
        ],
    )
}

pub fn by_name(name: &str) -> Option<Mapper> {
    match name {
        SIMPLE => Some(simple()),
        TWO_CLIENT_RETAINED_WILL => Some(two_client_retained_will()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_sizes() {
        assert_eq!(simple().inputs().len(), 7);
        assert_eq!(two_client_retained_will().inputs().len(), 9);
        assert_eq!(two_client_retained_will().client_count(), 2);
    }

    #[test]
    fn lookup_by_name() {
        for name in MAPPER_NAMES {
            assert_eq!(by_name(name).unwrap().name(), name);
        }
        assert!(by_name("fancy").is_none());
    }
}
