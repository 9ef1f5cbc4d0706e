//! Canonical string form and its strict parser.

use super::{is_tag_word, ChainError, Layout, ObjectBox, ReasoningChain, Section};
use crate::motion::MovementLabel;

pub(crate) fn render_body(chain: &ReasoningChain, section: Section) -> String {
    match section {
        Section::Task => chain.task.clone(),
        Section::Plan => chain
            .plan
            .iter()
            .enumerate()
            .map(|(k, item)| format!("{}. {item}", k + 1))
            .collect::<Vec<_>>()
            .join(" "),
        Section::SubtaskReasoning => chain.subtask_reason.clone(),
        Section::Subtask => chain.subtask.clone(),
        Section::MoveReasoning => chain.move_reason.clone(),
        Section::Move => chain.movement.render(),
        Section::Gripper => {
            let pts: Vec<String> = chain.gripper.iter().map(|[u, v]| format!("[{u}, {v}]")).collect();
            format!("[{}]", pts.join(", "))
        }
        Section::Objects => chain
            .objects
            .iter()
            .map(|o| {
                let [x1, y1, x2, y2] = o.bbox;
                format!("{} [{x1}, {y1}, {x2}, {y2}]", o.label)
            })
            .collect::<Vec<_>>()
            .join(", "),
    }
}

pub(crate) fn render_section(chain: &ReasoningChain, section: Section) -> String {
    let body = render_body(chain, section);
    if body.is_empty() {
        section.tag().to_string()
    } else {
        format!("{} {body}", section.tag())
    }
}

/// Canonical one-line form of `chain` in its layout's section order.
pub fn serialize(chain: &ReasoningChain) -> String {
    chain
        .layout
        .order()
        .iter()
        .map(|s| render_section(chain, *s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serialized prefix covering the first `n` sections of the layout.
pub(crate) fn serialize_prefix(chain: &ReasoningChain, n: usize) -> String {
    chain.layout.order()[..n]
        .iter()
        .map(|s| render_section(chain, *s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A located tag: byte offset of the tag and of the first byte after it.
struct Located {
    section: Section,
    start: usize,
    end: usize,
}

fn tag_at(text: &str, at: usize) -> Option<Section> {
    let rest = &text[at..];
    let mut best: Option<Section> = None;
    for s in Section::ALL {
        let tag = s.tag();
        let bounded = rest.starts_with(tag) && matches!(rest.as_bytes().get(tag.len()), None | Some(b' '));
        if bounded && best.is_none_or(|b| tag.len() > b.tag().len()) {
            best = Some(s);
        }
    }
    best
}

fn locate_tags(text: &str) -> Result<Vec<Located>, ChainError> {
    let mut found = Vec::new();
    let mut at = 0;
    while at < text.len() {
        let word_end = text[at..].find(' ').map_or(text.len(), |k| at + k);
        if let Some(section) = tag_at(text, at) {
            let end = at + section.tag().len();
            found.push(Located { section, start: at, end });
            at = end;
        } else if is_tag_word(&text[at..word_end]) {
            return Err(ChainError::parse(at, "a known section tag"));
        } else {
            at = word_end;
        }
        if at < text.len() {
            at += 1; // the separating space
        }
    }
    Ok(found)
}

/// Minimal cursor for the bracketed integer lists.
struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, expected: &str) -> ChainError {
        ChainError::parse(self.base + self.pos, expected)
    }

    fn eat(&mut self, lit: &str) -> Result<(), ChainError> {
        if self.text[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(&format!("`{lit}`")))
        }
    }

    fn peek(&self, lit: &str) -> bool {
        self.text[self.pos..].starts_with(lit)
    }

    fn int(&mut self) -> Result<i64, ChainError> {
        let rest = &self.text[self.pos..];
        let digits_from = usize::from(rest.starts_with('-'));
        let len = rest[digits_from..].bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return Err(self.err("an integer"));
        }
        let lit = &rest[..digits_from + len];
        let v = lit.parse().map_err(|_| self.err("an integer in range"))?;
        self.pos += lit.len();
        Ok(v)
    }

    fn done(&self) -> bool {
        self.pos == self.text.len()
    }
}

fn parse_plan(body: &str, base: usize) -> Result<Vec<String>, ChainError> {
    let mut items: Vec<String> = Vec::new();
    let mut offset = 0;
    for word in body.split(' ') {
        let expected = format!("{}.", items.len() + 1);
        if word == expected {
            items.push(String::new());
        } else if items.is_empty() {
            return Err(ChainError::parse(base + offset, format!("plan numbering `{expected}`")));
        } else {
            let item = items.last_mut().expect("non-empty");
            if !item.is_empty() {
                item.push(' ');
            }
            item.push_str(word);
        }
        offset += word.len() + 1;
    }
    Ok(items)
}

fn parse_gripper(body: &str, base: usize) -> Result<Vec<[i64; 2]>, ChainError> {
    let mut c = Cursor { text: body, pos: 0, base };
    let mut pts = Vec::new();
    c.eat("[")?;
    loop {
        c.eat("[")?;
        let u = c.int()?;
        c.eat(", ")?;
        let v = c.int()?;
        c.eat("]")?;
        pts.push([u, v]);
        if c.peek(", ") {
            c.eat(", ")?;
        } else {
            break;
        }
    }
    c.eat("]")?;
    if !c.done() {
        return Err(c.err("end of gripper section"));
    }
    Ok(pts)
}

fn parse_objects(body: &str, base: usize) -> Result<Vec<ObjectBox>, ChainError> {
    let mut out = Vec::new();
    if body.is_empty() {
        return Ok(out);
    }
    let mut c = Cursor { text: body, pos: 0, base };
    loop {
        let rest = &body[c.pos..];
        let Some(open) = rest.find(" [") else {
            return Err(c.err("`label [x1, y1, x2, y2]`"));
        };
        let label = rest[..open].to_string();
        c.pos += open + 1;
        c.eat("[")?;
        let mut bbox = [0i64; 4];
        for (k, slot) in bbox.iter_mut().enumerate() {
            if k > 0 {
                c.eat(", ")?;
            }
            *slot = c.int()?;
        }
        c.eat("]")?;
        out.push(ObjectBox { label, bbox });
        if c.done() {
            return Ok(out);
        }
        c.eat(", ")?;
    }
}

/// Parses a canonical chain string.
///
/// Only canonical strings are accepted: the result always serializes back
/// to exactly `text`.
pub fn parse(text: &str) -> Result<ReasoningChain, ChainError> {
    let tags = locate_tags(text)?;
    if tags.first().is_none_or(|t| t.start != 0) {
        return Err(ChainError::parse(0, "`TASK:`"));
    }
    let layout = match tags.get(2).map(|t| t.section) {
        Some(Section::Objects) => Layout::FrozenBbox,
        _ => Layout::Standard,
    };
    let order = layout.order();
    for (k, want) in order.iter().enumerate() {
        match tags.get(k) {
            Some(t) if t.section == *want => {}
            Some(t) => return Err(ChainError::parse(t.start, format!("`{}`", want.tag()))),
            None => return Err(ChainError::parse(text.len(), format!("`{}`", want.tag()))),
        }
    }
    if let Some(extra) = tags.get(order.len()) {
        return Err(ChainError::parse(extra.start, "end of chain"));
    }

    // Body of tag k runs from after its separating space to the space before tag k + 1.
    let body = |k: usize| -> (&str, usize) {
        let from = (tags[k].end + 1).min(text.len());
        let to = tags.get(k + 1).map_or(text.len(), |t| t.start.saturating_sub(1));
        if from >= to {
            ("", tags[k].end)
        } else {
            (&text[from..to], from)
        }
    };

    let mut chain = ReasoningChain {
        task: String::new(),
        plan: Vec::new(),
        subtask_reason: String::new(),
        subtask: String::new(),
        move_reason: String::new(),
        movement: MovementLabel::STOP,
        gripper: Vec::new(),
        objects: Vec::new(),
        layout,
    };
    for (k, section) in order.iter().enumerate() {
        let (b, at) = body(k);
        match section {
            Section::Task => chain.task = b.to_string(),
            Section::Plan => chain.plan = if b.is_empty() { Vec::new() } else { parse_plan(b, at)? },
            Section::SubtaskReasoning => chain.subtask_reason = b.to_string(),
            Section::Subtask => chain.subtask = b.to_string(),
            Section::MoveReasoning => chain.move_reason = b.to_string(),
            Section::Move => {
                chain.movement = MovementLabel::parse(b)
                    .map_err(|_| ChainError::parse(at, "a movement label"))?
            }
            Section::Gripper => chain.gripper = parse_gripper(b, at)?,
            Section::Objects => chain.objects = parse_objects(b, at)?,
        }
    }
    chain.validate()?;
    let canonical = serialize(&chain);
    if canonical != text {
        let at = canonical
            .bytes()
            .zip(text.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(canonical.len().min(text.len()));
        return Err(ChainError::parse(at, "canonical formatting"));
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ReasoningChain {
        ReasoningChain {
            task: "put the cup in the sink".into(),
            plan: vec!["move to the cup".into(), "grasp the cup".into(), "move the cup to the sink".into()],
            subtask_reason: "the cup is not in hand yet".into(),
            subtask: "move to the cup".into(),
            move_reason: "the cup is to the left of the gripper".into(),
            movement: "move left, close gripper".parse().unwrap(),
            gripper: vec![[120, 88]],
            objects: vec![
                ObjectBox { label: "red cup".into(), bbox: [10, 20, 50, 80] },
                ObjectBox { label: "toy sink".into(), bbox: [100, 40, 180, 120] },
            ],
            layout: Layout::Standard,
        }
    }

    #[test]
    fn standard_string_is_bit_exact() {
        assert_eq!(
            serialize(&sample()),
            "TASK: put the cup in the sink PLAN: 1. move to the cup 2. grasp the cup \
             3. move the cup to the sink SUBTASK REASONING: the cup is not in hand yet \
             SUBTASK: move to the cup MOVE REASONING: the cup is to the left of the gripper \
             MOVE: move left, close gripper GRIPPER POSITION: [[120, 88]] \
             VISIBLE OBJECTS: red cup [10, 20, 50, 80], toy sink [100, 40, 180, 120]"
        );
    }

    #[test]
    fn frozen_layout_puts_objects_before_subtask() {
        let s = serialize(&sample().with_layout(Layout::FrozenBbox));
        let objects = s.find("VISIBLE OBJECTS:").unwrap();
        assert!(objects < s.find("SUBTASK REASONING:").unwrap());
        assert!(objects > s.find("PLAN:").unwrap());
        assert_eq!(parse(&s).unwrap(), sample().with_layout(Layout::FrozenBbox));
    }

    #[test]
    fn round_trip_both_layouts() {
        for layout in [Layout::Standard, Layout::FrozenBbox] {
            let c = sample().with_layout(layout);
            assert_eq!(parse(&serialize(&c)).unwrap(), c);
        }
    }

    #[test]
    fn minimal_chain_round_trips() {
        let c = ReasoningChain {
            task: String::new(),
            plan: Vec::new(),
            subtask_reason: String::new(),
            subtask: String::new(),
            move_reason: String::new(),
            movement: MovementLabel::STOP,
            gripper: vec![[0, 0]],
            objects: Vec::new(),
            layout: Layout::Standard,
        };
        let s = serialize(&c);
        assert_eq!(
            s,
            "TASK: PLAN: SUBTASK REASONING: SUBTASK: MOVE REASONING: MOVE: stop \
             GRIPPER POSITION: [[0, 0]] VISIBLE OBJECTS:"
        );
        assert_eq!(parse(&s).unwrap(), c);
    }

    #[test]
    fn negative_pixels_round_trip() {
        let mut c = sample();
        c.gripper = vec![[-3, 4], [5, -6], [7, 8], [9, 10], [11, 12]];
        c.objects[0].bbox = [-10, -20, 5, 6];
        assert_eq!(parse(&serialize(&c)).unwrap(), c);
    }

    #[test]
    fn unknown_tag_is_rejected_with_position() {
        let s = serialize(&sample()).replace("SUBTASK: move", "SUBGOAL: move");
        let at = s.find("SUBGOAL:").unwrap();
        assert_eq!(
            parse(&s),
            Err(ChainError::Parse { position: at, expected: "a known section tag".into() })
        );
    }

    #[test]
    fn non_canonical_inputs_are_rejected() {
        let s = serialize(&sample());
        assert!(parse(&format!("{s} ")).is_err());
        assert!(parse(&format!(" {s}")).is_err());
        assert!(parse(&s.replace("[[120, 88]]", "[[120,88]]")).is_err());
        assert!(parse(&s.replace("1. move", "2. move")).is_err());
        assert!(parse(&s.replace("move left, close gripper", "close gripper, move left")).is_err());
        assert!(parse(&s.replace("MOVE: ", "MOVE:  ")).is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn sections_out_of_order_are_rejected() {
        let c = sample();
        let swapped = format!(
            "{} {} {}",
            render_section(&c, Section::Plan),
            render_section(&c, Section::Task),
            serialize(&c).split_once(" SUBTASK REASONING:").map(|(_, r)| format!("SUBTASK REASONING:{r}")).unwrap()
        );
        assert!(matches!(parse(&swapped), Err(ChainError::Parse { position: 0, .. })));
    }

    #[test]
    fn tag_text_inside_a_body_cannot_be_serialized_ambiguously() {
        let mut c = sample();
        c.subtask = "then MOVE: right".into();
        assert!(c.validate().is_err());
    }
}
