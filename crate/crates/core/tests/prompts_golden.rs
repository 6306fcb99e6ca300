//! Golden-file tests pinning the prompt templates byte-for-byte.

use crisis_core::prompting::{
    build_few_shot, build_zero_shot, ChatMessage, Demonstration, ZERO_SHOT_SYSTEM,
};
use crisis_core::schema::{parse_prediction, EventType, HumanitarianLabel};
use crisis_core::strategies::assemble_rag_prompt;
use crisis_core::vindex::{EntryMeta, Neighbor};
use sha2::{Digest, Sha256};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn zero_shot_system_matches_golden_bytes() {
    assert_eq!(ZERO_SHOT_SYSTEM, golden("zero_shot_system.txt"));
}

#[test]
fn zero_shot_system_checksum_is_frozen() {
    let digest = Sha256::digest(ZERO_SHOT_SYSTEM.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(
        hex,
        "911b2141aa9761d2d958881ad846c8f22acd7f345c5aed887d8327b201c2a055"
    );
}

#[test]
fn zero_shot_prompt_shape() {
    let messages = build_zero_shot("Roads into the valley are gone, send help").unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0].content, ZERO_SHOT_SYSTEM);
    assert_eq!(
        messages[1].content,
        "Tweet: Roads into the valley are gone, send help"
    );
}

#[test]
fn five_demo_transcript_matches_golden() {
    let demos = vec![
        Demonstration {
            tweet: "Powerful Ecuador quake kills at least 235".into(),
            humanitarian: HumanitarianLabel::InjuredOrDeadPeople,
            event: EventType::Earthquake,
        },
        Demonstration {
            tweet: "Over 3000 families moved to shelters as the river keeps rising".into(),
            humanitarian: HumanitarianLabel::DisplacedPeopleAndEvacuations,
            event: EventType::Flood,
        },
        Demonstration {
            tweet: "Keep N95 masks on, smoke levels remain hazardous".into(),
            humanitarian: HumanitarianLabel::CautionAndAdvice,
            event: EventType::Fire,
        },
        Demonstration {
            tweet: "Praying for everyone in the path of this storm".into(),
            humanitarian: HumanitarianLabel::SympathyAndSupport,
            event: EventType::Hurricane,
        },
        Demonstration {
            tweet: "We urgently need drinking water and baby formula in Ward 4".into(),
            humanitarian: HumanitarianLabel::RequestsOrUrgentNeeds,
            event: EventType::Flood,
        },
    ];
    let built = build_few_shot(&demos, "Roads into the valley are gone, send help").unwrap();
    let expected: Vec<ChatMessage> =
        serde_json::from_str(&golden("few_shot_transcript.json")).unwrap();
    assert_eq!(built, expected);

    // Every assistant turn honors the strict output contract.
    for m in &built {
        if matches!(m.role, crisis_core::prompting::Role::Assistant) {
            parse_prediction(&m.content).unwrap();
        }
    }
}

#[test]
fn rag_prompt_matches_golden() {
    let neighbor = |pos: usize, tweet: &str, label: HumanitarianLabel| Neighbor {
        position: pos,
        score: 0.9 - pos as f64 * 0.1,
        meta: EntryMeta {
            tweet_id: format!("{pos}"),
            tweet: tweet.into(),
            label,
            event: EventType::Earthquake,
            corpus_position: pos,
        },
    };
    let neighbors = vec![
        neighbor(
            0,
            "Main bridge to the valley collapsed, access cut off",
            HumanitarianLabel::InfrastructureAndUtilityDamage,
        ),
        neighbor(
            1,
            "Need tarps and blankets before the rain returns",
            HumanitarianLabel::RequestsOrUrgentNeeds,
        ),
        neighbor(
            2,
            "Hearts with Nepal today and every day",
            HumanitarianLabel::SympathyAndSupport,
        ),
    ];
    let messages = assemble_rag_prompt(
        &neighbors,
        "The old stone bridge is gone, villages cut off",
        4096,
    )
    .unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0].content, ZERO_SHOT_SYSTEM);
    // The golden file carries one authoring-time trailing newline.
    let expected = golden("rag_prompt_user.txt");
    assert_eq!(messages[1].content, expected.trim_end_matches('\n'));
}
