use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mqlearn::mqtt::{mappers, serve, sim_sul, tcp_sul, MutantId};
use mqlearn::sul::{Sul, SulError, CONNECTION_CLOSED, EMPTY};

const TIMEOUT: Duration = Duration::from_millis(20);

#[test]
fn connect_gets_connack() {
    let server = serve(MutantId::Reference, "127.0.0.1:0").unwrap();
    let mut sul = tcp_sul(&server.local_addr().to_string(), mappers::simple(), TIMEOUT).unwrap();
    sul.reset().unwrap();
    assert_eq!(sul.step("Connect").unwrap(), "C_Ack");
}

#[test]
fn broker_close_is_observed_until_reset() {
    let server = serve(MutantId::Reference, "127.0.0.1:0").unwrap();
    let mut sul = tcp_sul(&server.local_addr().to_string(), mappers::simple(), TIMEOUT).unwrap();
    sul.reset().unwrap();
    assert_eq!(sul.step("Connect").unwrap(), "C_Ack");
    assert_eq!(sul.step("Connect").unwrap(), CONNECTION_CLOSED);
    assert_eq!(sul.step("Subscribe").unwrap(), CONNECTION_CLOSED);
    sul.reset().unwrap();
    assert_eq!(sul.step("Connect").unwrap(), "C_Ack");
}

#[test]
fn silence_is_empty() {
    let server = serve(MutantId::Reference, "127.0.0.1:0").unwrap();
    let mut sul = tcp_sul(&server.local_addr().to_string(), mappers::simple(), TIMEOUT).unwrap();
    sul.reset().unwrap();
    assert_eq!(sul.step("Connect").unwrap(), "C_Ack");
    assert_eq!(sul.step("Publish").unwrap(), EMPTY);
}

#[test]
fn ignored_second_connect_times_out() {
    let server = serve(MutantId::IgnoreSecondConnect, "127.0.0.1:0").unwrap();
    let mut sul = tcp_sul(&server.local_addr().to_string(), mappers::simple(), TIMEOUT).unwrap();
    assert_eq!(
        sul.query(&["Connect".to_string(), "Connect".to_string()])
            .unwrap(),
        vec!["C_Ack".to_string(), EMPTY.to_string()]
    );
}

#[test]
fn unreachable_broker_is_a_transport_error() {
    let addr = {
        let server = serve(MutantId::Reference, "127.0.0.1:0").unwrap();
        server.local_addr().to_string()
    };
    let mut sul = tcp_sul(&addr, mappers::simple(), TIMEOUT).unwrap();
    let err = sul.query(&["Connect".to_string()]).unwrap_err();
    assert!(matches!(err, SulError::Transport(_)), "{err:?}");
}

#[test]
fn served_brokers_match_simulation() {
    let mapper = mappers::two_client_retained_will();
    let inputs = mapper.inputs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mutant in [MutantId::Reference, MutantId::NoRetainedResendOnResubscribe] {
        let server = serve(mutant, "127.0.0.1:0").unwrap();
        let mut tcp = tcp_sul(&server.local_addr().to_string(), mapper.clone(), TIMEOUT).unwrap();
        let mut sim = sim_sul(mutant, mapper.clone());
        for _ in 0..25 {
            let len = rng.gen_range(1..=8);
            let word: Vec<String> = (0..len)
                .map(|_| inputs[rng.gen_range(0..inputs.len())].clone())
                .collect();
            assert_eq!(
                tcp.query(&word).unwrap(),
                sim.query(&word).unwrap(),
                "{mutant}: {word:?}"
            );
        }
    }
}
