use sentipipe_web::{evaluate_with, normalize_with, reformulate_with};

#[test]
fn normalizes_with_default_and_custom_steps() {
    assert_eq!(
        normalize_with("Смотри http://x.ru @user ))", "").unwrap(),
        normalize_with("Смотри http://x.ru @user ))", " ").unwrap()
    );
    let out = normalize_with("Смотри http://x.ru", "").unwrap();
    assert!(!out.contains("http"), "{out}");
    assert!(normalize_with("x", "bogus_step").is_err());
}

#[test]
fn targeted_pair_encoding() {
    let v = reformulate_with("Сбербанк снова радует", "Сбербанк", "pair_qa", 32).unwrap();
    assert!(v.sentence_a.contains("MASK"), "{:?}", v.sentence_a);
    assert_eq!(v.sentence_b.as_deref(), Some("What do you think about MASK?"));
    assert_eq!(v.tokens.first().map(String::as_str), Some("[CLS]"));
    assert_eq!(v.tokens.last().map(String::as_str), Some("[SEP]"));
    assert_eq!(v.tokens.len(), v.ids.len());
    assert!(v.mask.iter().all(|&m| m));
    let first_sep = v.tokens.iter().position(|t| t == "[SEP]").unwrap();
    assert!(v.segments[..=first_sep].iter().all(|&s| s == 0));
    assert!(v.segments[first_sep + 1..].iter().all(|&s| s == 1));
}

#[test]
fn general_single_has_one_segment() {
    let v = reformulate_with("всё отлично", "", "single", 16).unwrap();
    assert!(v.sentence_a.starts_with("MASK = "), "{}", v.sentence_a);
    assert!(v.sentence_b.is_none());
    assert!(v.segments.iter().all(|&s| s == 0));
    assert!(reformulate_with("x", "", "nope", 16).is_err());
    assert!(reformulate_with("Сбербанк", "Сбербанк", "pair_nli", 4).is_err());
}

#[test]
fn evaluates_label_lists() {
    let text = evaluate_with("1 1 -1 0", "positive,negative,-1,0").unwrap();
    assert!(text.contains("0.75") || text.contains("75"), "{text}");
    assert!(evaluate_with("1 1", "1").is_err());
    assert!(evaluate_with("1", "maybe").is_err());
}
