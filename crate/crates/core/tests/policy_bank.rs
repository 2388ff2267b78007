mod common;

use common::*;
use lmpvc_core::policy::{load_registry, parse_policy_file, Policy, PolicyError, PolicyRegistry};
use proptest::prelude::*;

#[test]
fn bundled_policies_round_trip() {
    for name in ["handover", "pick", "parts_check", "bolts_check", "full_check"] {
        let text = read_fixture(&format!("policies/{name}.policy"));
        let p = parse_policy_file(&text).unwrap();
        let again = parse_policy_file(&p.serialize()).unwrap();
        assert!(p.same_structure(&again), "{name}");
        assert_eq!(again.serialize(), p.serialize(), "{name}");
    }
}

#[test]
fn handover_file_is_already_canonical() {
    let text = read_fixture("policies/handover.policy");
    assert_eq!(parse_policy_file(&text).unwrap().serialize(), text);
}

#[test]
fn shared_imports_appear_once_in_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let mut reg = PolicyRegistry::empty(None);
    let handover = parse_policy_file(&read_fixture("policies/handover.policy")).unwrap();
    reg.add(handover, dir.path().join("handover.policy")).unwrap();
    let pause = Policy::new(
        "pause",
        vec!["time".into(), "math".into()],
        "def pause(robot):\n    time.sleep(math.sqrt(4))\n",
        "pause",
        "wait a moment",
    )
    .unwrap();
    reg.add(pause, dir.path().join("pause.policy")).unwrap();
    let ext = reg.prompt_extension();
    assert_eq!(ext.matches("import time").count(), 1);
    assert_eq!(ext.matches("import math").count(), 1);
    assert!(ext.find("import").unwrap() < ext.find("# define function").unwrap());
}

#[test]
fn broken_policy_file_does_not_block_the_rest() {
    let bank = policy_bank(&[]);
    std::fs::write(bank.dir.path().join("pick.policy"), "def pick(robot):\n    robot.go()\n").unwrap();
    let reg = load_registry(&bank.registry).unwrap();
    assert_eq!(reg.errors().len(), 1);
    assert_eq!(reg.errors()[0].name, "pick");
    assert!(reg.get("pick").is_none());
    assert!(reg.get("handover").is_some());
    assert!(!reg.prompt_extension().contains("pick up the object below"));
}

#[test]
fn disabled_policies_leave_prompt_and_bindings() {
    let bank = policy_bank(&[]);
    let mut reg = load_registry(&bank.registry).unwrap();
    reg.set_enabled("handover", false).unwrap();
    assert!(!reg.prompt_extension().contains("give me the held item"));
    assert!(!reg.known_names().contains("handover"));
    let reloaded = load_registry(&bank.registry).unwrap();
    assert!(!reloaded.entry("handover").unwrap().enabled);
    reg.set_enabled("handover", true).unwrap();
    assert!(reg.known_names().contains("handover"));
}

#[test]
fn conflicting_function_names_are_rejected() {
    let bank = policy_bank(&[]);
    let mut reg = load_registry(&bank.registry).unwrap();
    let clash = Policy::new("again", vec![], "def check_parts(robot):\n    robot.go()\n", "check_parts", "again please").unwrap();
    let err = reg.add(clash, "again.policy".into()).unwrap_err();
    assert!(matches!(err, PolicyError::Conflict { ref function, .. } if function == "check_parts"), "{err}");
    let dup = parse_policy_file(&read_fixture("policies/pick.policy")).unwrap();
    assert!(matches!(reg.add(dup, "pick2.policy".into()), Err(PolicyError::NameTaken(_))));
}

#[test]
fn removal_keeps_the_file() {
    let bank = policy_bank(&[]);
    let mut reg = load_registry(&bank.registry).unwrap();
    reg.remove("pick").unwrap();
    assert!(bank.dir.path().join("pick.policy").exists());
    assert!(load_registry(&bank.registry).unwrap().entry("pick").is_none());
    assert!(matches!(reg.remove("pick"), Err(PolicyError::Unknown(_))));
}

const RESERVED: &[&str] = &[
    "and", "as", "assert", "break", "class", "continue", "def", "del", "elif", "else", "except", "for", "from",
    "global", "if", "import", "in", "is", "lambda", "not", "or", "pass", "return", "try", "while", "with", "yield",
    "robot", "math", "time", "range", "round", "abs", "min", "max", "len", "str", "int", "float", "print",
];

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}(_[a-z0-9]{1,5}){0,2}".prop_filter("reserved", |s| !RESERVED.contains(&s.as_str()))
}

fn statement() -> impl Strategy<Value = String> {
    prop_oneof![
        (-1000i32..1000).prop_map(|n| format!("x = {n}")),
        "[a-zA-Z ,!]{0,20}".prop_map(|s| format!("robot.say(\"{s}\")")),
        (1u8..5).prop_map(|n| format!("for i in range({n}):\n        robot.open_hand()")),
        Just("waypoint = robot.get_pose()\n    waypoint.position.z -= 0.05\n    robot.add_waypoint(waypoint)\n    robot.go()".to_string()),
    ]
}

proptest! {
    #[test]
    fn generated_policies_round_trip(
        entry in ident(),
        helper in ident(),
        stmts in proptest::collection::vec(statement(), 1..4),
        hint_words in proptest::collection::vec("[a-z]{1,8}", 1..5)
            .prop_filter("reserved", |w| w.len() > 1 || !RESERVED.contains(&w[0].as_str())),
        with_time in any::<bool>(),
    ) {
        prop_assume!(helper != entry);
        let hint = hint_words.join(" ");
        let alias = hint_words.join("_");
        prop_assume!(alias != entry && alias != helper);
        let body = format!(
            "def {helper}(robot):\n    {}\n\ndef {entry}(robot):\n    {helper}(robot)\n",
            stmts.join("\n    ")
        );
        let imports = if with_time { vec!["time".to_string()] } else { vec![] };
        let p = Policy::new(&entry, imports, &body, &entry, &hint).unwrap();
        let text = p.serialize();
        let back = parse_policy_file(&text).unwrap();
        prop_assert!(p.same_structure(&back));
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(back.alias_function, alias);
    }
}
