#[path = "support/wire.rs"]
mod wire;

#[test]
fn every_opcode_is_covered() {
    assert_eq!(wire::opcodes(&wire::vectors()), (1..=9).collect::<Vec<u8>>());
}

#[test]
fn server_matches_recorded_responses() {
    assert_eq!(wire::check_server(&wire::vectors()), Ok(25));
}

#[test]
fn client_emits_recorded_requests() {
    assert_eq!(wire::check_client(&wire::vectors()), Ok(25));
}
