use std::fmt;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Crawler,
    Reflexion,
    Synthesis,
    Judgement,
    Stepback,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::Crawler,
        TemplateName::Reflexion,
        TemplateName::Synthesis,
        TemplateName::Judgement,
        TemplateName::Stepback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Crawler => "crawler",
            TemplateName::Reflexion => "reflexion",
            TemplateName::Synthesis => "synthesis",
            TemplateName::Judgement => "judgement",
            TemplateName::Stepback => "stepback",
        }
    }

    /// Number of positional slots (`{0}`, `{1}`, ...) in the template body.
    pub fn arity(self) -> usize {
        match self {
            TemplateName::Crawler | TemplateName::Synthesis | TemplateName::Judgement => 2,
            TemplateName::Reflexion | TemplateName::Stepback => 3,
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateName::Crawler => CRAWLER,
            TemplateName::Reflexion => REFLEXION,
            TemplateName::Synthesis => SYNTHESIS,
            TemplateName::Judgement => JUDGEMENT,
            TemplateName::Stepback => STEPBACK,
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Substitutes `{i}` slots in a single pass; slot contents are inserted
/// verbatim and never re-scanned.
pub fn render_prompt(name: TemplateName, slots: &[&str]) -> Result<String, LlmError> {
    if slots.len() != name.arity() {
        return Err(LlmError::ArityMismatch {
            template: name,
            expected: name.arity(),
            got: slots.len(),
        });
    }
    let body = name.body();
    let mut out = String::with_capacity(body.len() + slots.iter().map(|s| s.len()).sum::<usize>());
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{'
            && i + 2 < bytes.len()
            && bytes[i + 1].is_ascii_digit()
            && bytes[i + 2] == b'}'
        {
            let slot = usize::from(bytes[i + 1] - b'0');
            if let Some(value) = slots.get(slot) {
                out.push_str(value);
                i += 3;
                continue;
            }
        }
        let ch = body[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

const CRAWLER: &str = r#"Please read the following HTML code, and then return an Xpath that can recognize the element in the HTML matching the instruction below.
Instruction: {0} 
Here are some hints: 
1. Do not output the xpath with exact value or element appears in the HTML.
2. Do not output the xpath that indicate multi node with different value. It would be appreciate to use more @class to identify different node that may share the same xpath expression.
3. If the HTML code doesn't contain the suitable information match the instruction, keep the xpath attrs blank.
4. Avoid using some string function such as 'substring()' and 'normalize-space()' to normalize the text in the node.
Please output in the following Json format:

{
    "thought": "", # a brief thought of how to confirm the value and generate the xpath
    "value": "", # the value extracted from the HTML that match the instruction 
    "xpath": "", # the xpath to extract the value
} 
Here's the HTML code: 
``` 
{1} 
```"#;

const REFLEXION: &str = r#"Here's the HTML extraction task:
Task description: Please read the following HTML code, and then return an Xpath that can recognize the element in the HTML matching the instruction below.
Instruction: {0} 
We will offer some history about the thought and the extraction result. Please reflect on the history trajectory and adjust the xpath rule for better and more exact extraction. Here's some hints:
1. Judge whether the results in the history is consistent with the expected value. Please pay attention for the following case:
    1) Whether the extraction result contains some elements that is irrelevent
    2) Whether the crawler return a empty result
    3) The raw values containing redundant separators is considered as consistent because we will postprocess it.
2. Re-thinking the expected value and how to find it depend on xpath code
3. Generate a new or keep the origin xpath depend on the judgement and thinking following the hints:
    1. Do not output the xpath with exact value or element appears in the HTML.
    2. Do not output the xpath that indicate multi node with different value. It would be appreciate to use more @class and [num] to identify different node that may share the same xpath expression.
    3. If the HTML code doesn't contain the suitable information match the instruction, keep the xpath attrs blank.

Please output in the following json format:
{
    "thought": "", # thought of why the xpaths in history are not work and how to adjust the xpath
    "consistent": "", # whether the extracted result is consistent with the expected value, return yes/no directly
    "value": "", # the value extracted from the HTML that match the task description
    "xpath": "", # a new xpath that is different from the xpath in the following history if not consistent
}

And here's the history about the thought, xpath and result extracted by crawler.
{1}

Here's the HTML code:
```
{2}
```"#;

const SYNTHESIS: &str = r#"You're a perfect discriminator which is good at HTML understanding as well. Following the instruction, there are some action sequence written from several HTML and the corresponding result extracted from several HTML. Please choose one that can be best potentially adapted to the same extraction task on other webpage in the same websites. Here are the instruction of the task:
Instructions: {0}
The action sequences and the corresponding extracted results with different sequence on different webpage are as follow:
{1}

Please output the best action sequence in the following Json format:
{
    "thought": "" # brief thinking about which to choose
    "number": "" # the best action sequence choosen from the candidates, starts from 0. If there is none, output 0.
}"#;

const JUDGEMENT: &str = r#"Your main task is to judge whether the extracted value is consistent with the expected value, which is recognized beforehand. Please pay attention for the following case:
    1) If the extracted result contains some elements that is not in expected value, or contains empty value, it is not consistent.
    2) The raw values containing redundant separators is considered as consistent because we can postprocess it.

The extracted value is: {0}
The expected value is: {1}

Please output your judgement in the following Json format:
{
    "thought": "", # a brief thinking about whether the extracted value is consistent with the expected value
    "judgement": "" # return yes/no directly
}"#;

const STEPBACK: &str = r#"Your main task is to judge whether the following HTML code contains all the expected value, which is recognized beforehand.
Instruction: {0}
And here's the value: {1}
The HTML code is as follow:
```
{2}
```

Please output your judgement in the following Json format:
{
    "thought": "", # a brief thinking about whether the HTML code contains expected value
    "judgement": "" # whether the HTML code contains all extracted value. Return yes/no directly.
}"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crawler_prompt_opening() {
        let p = render_prompt(
            TemplateName::Crawler,
            &["Please extract the height.", "<p>x</p>"],
        )
        .unwrap();
        assert!(p.starts_with("Please read the following HTML code"));
        assert!(p.contains("Instruction: Please extract the height. \n"));
        assert!(p.contains("``` \n<p>x</p> \n```"));
        assert!(p.contains("Do not output the xpath with exact value"));
    }

    #[test]
    fn judgement_prompt_wording() {
        let p = render_prompt(TemplateName::Judgement, &["[\"6-9\"]", "[\"6-9\"]"]).unwrap();
        assert!(p.contains("judge whether the extracted value is consistent"));
        assert!(p.contains("The extracted value is: [\"6-9\"]\n"));
        assert!(p.contains("{\n    \"thought\""));
    }

    #[test]
    fn arity_is_enforced() {
        let err = render_prompt(TemplateName::Crawler, &["only one"]).unwrap_err();
        assert!(matches!(
            err,
            LlmError::ArityMismatch {
                expected: 2,
                got: 1,
                ..
            }
        ));
        for t in TemplateName::ALL {
            let slots: Vec<String> = (0..t.arity()).map(|i| format!("<<{i}>>")).collect();
            let refs: Vec<&str> = slots.iter().map(String::as_str).collect();
            let p = render_prompt(t, &refs).unwrap();
            for s in &slots {
                assert_eq!(p.matches(s.as_str()).count(), 1, "{t}");
            }
            assert!(!p.contains("{0}") && !p.contains("{1}"));
        }
    }

    #[test]
    fn slot_text_is_not_rescanned() {
        let p = render_prompt(TemplateName::Judgement, &["{1}", "B"]).unwrap();
        assert!(p.contains("The extracted value is: {1}\n"));
        assert!(p.contains("The expected value is: B\n"));
    }
}
