//! Typed parsing of provider responses.

use crate::corpus::truncate_to_five_words;
use crate::gateway::prompt::{bracket_after, bracketed_segments, extract_quoted_value, split_comma_list};
use crate::gateway::{GatewayError, NarrativeDraft, UserInterestProfile};

/// Extracts up to three bracketed theme phrases, each truncated to five
/// words. A response with no bracketed segment is a parse error.
pub fn parse_theme_response(text: &str) -> Result<Vec<String>, GatewayError> {
    let phrases: Vec<String> = bracketed_segments(text)
        .into_iter()
        .filter(|p| !p.is_empty())
        .take(3)
        .map(|p| truncate_to_five_words(&p))
        .collect();
    if phrases.is_empty() {
        return Err(GatewayError::ResponseParse {
            expected: "at least one bracketed topic".into(),
            response: text.to_string(),
        });
    }
    Ok(phrases)
}

/// Reads categories after "news about", topics after "especially", and
/// supporting ids after "According to". At least one category or topic must
/// be present.
pub fn parse_profile_response(text: &str) -> Result<UserInterestProfile, GatewayError> {
    let categories = bracket_after(text, "news about")
        .map(|v| split_comma_list(&v))
        .unwrap_or_default();
    let topics = bracket_after(text, "especially")
        .map(|v| split_comma_list(&v))
        .unwrap_or_default();
    let supporting = bracket_after(text, "According to")
        .map(|v| split_comma_list(&v))
        .unwrap_or_default();
    if categories.is_empty() && topics.is_empty() {
        return Err(GatewayError::ResponseParse {
            expected: "bracketed categories or topics".into(),
            response: text.to_string(),
        });
    }
    Ok(UserInterestProfile {
        user_key: String::new(),
        categories,
        topics,
        supporting,
    })
}

/// Parses the quoted-key record form; `title` and `abstract` are required,
/// `category` and `topic`/`topics` default to empty. Surrounding prose is
/// tolerated.
pub fn parse_narrative_response(text: &str) -> Result<NarrativeDraft, GatewayError> {
    let title = extract_quoted_value(text, "title").filter(|t| !t.trim().is_empty());
    let abstract_text = extract_quoted_value(text, "abstract").filter(|a| !a.trim().is_empty());
    let (Some(title), Some(abstract_text)) = (title, abstract_text) else {
        return Err(GatewayError::ResponseParse {
            expected: "quoted title and abstract fields".into(),
            response: text.to_string(),
        });
    };
    let category = extract_quoted_value(text, "category").unwrap_or_default();
    let topics = extract_quoted_value(text, "topics")
        .or_else(|| extract_quoted_value(text, "topic"))
        .map(|v| split_comma_list(&v))
        .unwrap_or_default();
    Ok(NarrativeDraft {
        title,
        category,
        topics,
        abstract_text,
        raw: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theme_parse_extracts_ordered_phrases() {
        let phrases = parse_theme_response(
            "This news is related to [Trump's decision on Syria], [Kurds and PKK].",
        )
        .unwrap();
        assert_eq!(phrases, vec!["Trump's decision on Syria", "Kurds and PKK"]);
    }

    #[test]
    fn theme_parse_keeps_first_three_and_truncates_long_phrases() {
        let phrases = parse_theme_response("[a][b][c][d]").unwrap();
        assert_eq!(phrases, vec!["a", "b", "c"]);
        let long = parse_theme_response("[one two three four five six seven]").unwrap();
        assert_eq!(long, vec!["one two three four five"]);
    }

    #[test]
    fn theme_parse_rejects_bracketless_text() {
        assert!(matches!(
            parse_theme_response("no brackets here"),
            Err(GatewayError::ResponseParse { .. })
        ));
    }

    #[test]
    fn profile_parse_reads_all_three_groups() {
        let profile = parse_profile_response(
            "According to [News 1, News 2, News 3, News 4], this user is interested in news \
             about [sports], especially [Lionel Messi, World Cup final, Argentina's victory in \
             the World Cup].",
        )
        .unwrap();
        assert_eq!(profile.categories, vec!["sports"]);
        assert_eq!(
            profile.topics,
            vec![
                "Lionel Messi",
                "World Cup final",
                "Argentina's victory in the World Cup"
            ]
        );
        assert_eq!(profile.supporting, vec!["News 1", "News 2", "News 3", "News 4"]);
    }

    #[test]
    fn profile_parse_tolerates_missing_supporting_clause() {
        let profile =
            parse_profile_response("interested in news about [politics], especially [courts]")
                .unwrap();
        assert!(profile.supporting.is_empty());
        assert_eq!(profile.categories, vec!["politics"]);
    }

    #[test]
    fn profile_parse_rejects_bracketless_text() {
        assert!(matches!(
            parse_profile_response("nothing useful"),
            Err(GatewayError::ResponseParse { .. })
        ));
    }

    #[test]
    fn narrative_parse_reads_the_record_form() {
        let draft = parse_narrative_response(
            "{\"title\": \"Brett Kavanaugh Gives First Speech as Justice, Praises Ruth Bader \
             Ginsburg\", \"category\": \"politics\", \"topics\": \"Brett Kavanaugh, Ruth Bader \
             Ginsburg, Supreme Court\", \"abstract\": \"In his first speech as a Supreme Court \
             justice, Brett Kavanaugh expressed gratitude to his supporters.\"}",
        )
        .unwrap();
        assert!(draft.title.starts_with("Brett Kavanaugh Gives First Speech"));
        assert_eq!(draft.category, "politics");
        assert_eq!(draft.topics.len(), 3);
        assert!(draft.abstract_text.starts_with("In his first speech"));
    }

    #[test]
    fn narrative_parse_accepts_minimal_records_and_topic_key() {
        let draft = parse_narrative_response("{\"title\":\"T\",\"abstract\":\"A\"}").unwrap();
        assert_eq!(draft.title, "T");
        assert!(draft.category.is_empty());
        assert!(draft.topics.is_empty());

        let with_topic =
            parse_narrative_response("{\"title\":\"T\",\"topic\":\"x, y\",\"abstract\":\"A\"}")
                .unwrap();
        assert_eq!(with_topic.topics, vec!["x", "y"]);
    }

    #[test]
    fn narrative_parse_tolerates_surrounding_prose() {
        let draft = parse_narrative_response(
            "Sure! Here is the summary:\n{\"title\": \"T\", \"abstract\": \"A\"}\nHope it helps.",
        )
        .unwrap();
        assert_eq!(draft.title, "T");
    }

    #[test]
    fn narrative_parse_requires_title_and_abstract() {
        assert!(matches!(
            parse_narrative_response("{\"category\":\"politics\"}"),
            Err(GatewayError::ResponseParse { .. })
        ));
        assert!(matches!(
            parse_narrative_response("{\"title\":\"T\",\"abstract\":\"\"}"),
            Err(GatewayError::ResponseParse { .. })
        ));
    }
}
