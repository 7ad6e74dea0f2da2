use brunet::arch::Arch;
use brunet::gradcheck::suite::{network_case, op_cases, CaseResult, TOLERANCE};
use brunet::Mode;

fn assert_pass(r: &CaseResult) {
    eprintln!("{}: {:?}", r.name, r.report);
    assert!(r.passed(), "{} exceeds {TOLERANCE}: {:?}", r.name, r.report);
}

#[test]
fn every_op() {
    let cases = op_cases().unwrap();
    assert_eq!(cases.len(), 13);
    cases.iter().for_each(assert_pass);
}

#[test]
fn brunet_network_train() {
    assert_pass(&network_case(Arch::BruNet, Mode::Train).unwrap());
}

#[test]
fn brunet_network_infer() {
    assert_pass(&network_case(Arch::BruNet, Mode::Infer).unwrap());
}

#[test]
fn unet_network() {
    assert_pass(&network_case(Arch::UNet, Mode::Train).unwrap());
}
