//! Interpreter tests over the annotated example programs plus property tests
//! for determinism, sandbox totality, grammar closure and trace completeness.

use std::cell::Cell;
use std::collections::HashMap;

use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::primitives::{Detection, PrimitiveError};

const PINK_SHOES: &str = include_str!("../../tests/programs/pink_shoes.py");
const BENCH: &str = include_str!("../../tests/programs/bench.py");
const LADIES_MEN: &str = include_str!("../../tests/programs/ladies_men.py");
const CARRIAGE_HORSE: &str = include_str!("../../tests/programs/carriage_horse.py");

/// Replies keyed by (image, question); unknown keys fail.
#[derive(Default)]
struct Scripted {
    replies: HashMap<(String, String), String>,
    positions: HashMap<(String, String), (f64, f64)>,
    successes: Cell<usize>,
}

impl Scripted {
    fn reply(mut self, image: &str, question: &str, answer: &str) -> Self {
        self.replies
            .insert((image.into(), question.into()), answer.into());
        self
    }

    fn position(mut self, image: &str, text: &str, pos: (f64, f64)) -> Self {
        self.positions.insert((image.into(), text.into()), pos);
        self
    }

    fn ok<T>(&self, v: Option<T>, what: &str) -> Result<T, PrimitiveError> {
        match v {
            Some(v) => {
                self.successes.set(self.successes.get() + 1);
                Ok(v)
            }
            None => Err(PrimitiveError::new(format!("no scripted reply for {what}"))),
        }
    }
}

impl Primitives for Scripted {
    fn query(
        &self,
        image: &ImageHandle,
        question: &str,
        _: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        let key = (image.image_ref().to_string(), question.to_string());
        self.ok(self.replies.get(&key).cloned(), question)
    }

    fn get_pos(
        &self,
        image: &ImageHandle,
        text: &str,
        _: &mut dyn RngCore,
    ) -> Result<(f64, f64), PrimitiveError> {
        let key = (image.image_ref().to_string(), text.to_string());
        self.ok(self.positions.get(&key).copied(), text)
    }

    fn find_matching_image(
        &self,
        _: &[ImageHandle],
        text: &str,
        _: &mut dyn RngCore,
    ) -> Result<usize, PrimitiveError> {
        self.ok(None, text)
    }

    fn find_object(
        &self,
        _: &ImageHandle,
        text: &str,
        _: &mut dyn RngCore,
    ) -> Result<Vec<Detection>, PrimitiveError> {
        self.ok(None, text)
    }

    fn knowledge_query(&self, q: &str, _: &mut dyn RngCore) -> Result<String, PrimitiveError> {
        self.ok(None, q)
    }
}

fn images(n: usize) -> Vec<ImageHandle> {
    (1..=n)
        .map(|i| ImageHandle::new(format!("img{i}")))
        .collect()
}

fn run_with(src: &str, prims: &dyn Primitives, imgs: &[ImageHandle]) -> ExecutionResult {
    let program = parse_source(src).expect("program parses");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    execute(
        &program,
        prims,
        imgs,
        &InterpreterLimits::default(),
        &mut rng,
    )
}

#[test]
fn annotated_programs_parse_under_their_flavor() {
    use crate::config::Flavor;
    let single = flavor_whitelist(Flavor::SingleImage, false);
    let multi = flavor_whitelist(Flavor::MultiImage, false);
    parse_source_with(BENCH, &single).unwrap();
    parse_source_with(CARRIAGE_HORSE, &single).unwrap();
    parse_source_with(PINK_SHOES, &multi).unwrap();
    parse_source_with(LADIES_MEN, &multi).unwrap();
}

#[test]
fn bench_program_shape() {
    let program = parse_source(BENCH).unwrap();
    let kinds: Vec<&str> = program
        .body
        .iter()
        .map(|s| match &s.kind {
            ast::StmtKind::Assign { .. } => "assign",
            ast::StmtKind::If { .. } => "if",
            _ => "other",
        })
        .collect();
    assert_eq!(kinds, ["assign", "assign", "assign", "if"]);
    let ast::StmtKind::If {
        branches,
        else_body,
    } = &program.body[3].kind
    else {
        unreachable!()
    };
    assert_eq!(branches.len(), 1);
    assert!(matches!(
        branches[0].0.kind,
        ast::ExprKind::BoolOp {
            op: ast::BoolOp::And,
            ..
        }
    ));
    assert!(else_body.is_some());
}

#[test]
fn ladies_men_program_shape() {
    let program = parse_source(LADIES_MEN).unwrap();
    let ast::StmtKind::For { body, .. } = &program.body[3].kind else {
        panic!("fourth statement should be the loop")
    };
    let ifs = body
        .iter()
        .filter(|s| matches!(s.kind, ast::StmtKind::If { .. }))
        .count();
    assert_eq!(ifs, 2);
    assert_eq!(program.calls().iter().filter(|c| **c == "int").count(), 2);
}

#[test]
fn pink_shoes_counts_matching_images() {
    let q = "Are there exactly 2 pink shoes?";
    let prims = Scripted::default()
        .reply("img1", q, "yes")
        .reply("img2", q, "no")
        .reply("img3", q, "yes");
    let r = run_with(PINK_SHOES, &prims, &images(3));
    // Independent count over the scripted replies.
    let expected = ["img1", "img2", "img3"]
        .iter()
        .filter(|i| prims.replies[&(i.to_string(), q.to_string())] == "yes")
        .count();
    assert_eq!(r.answer(), Some(expected.to_string().as_str()));
    assert_eq!(r.trace.len(), 3);
}

#[test]
fn bench_program_answers() {
    let both = "Does the bench look silver and metallic?";
    let metallic = "Does the bench look metallic?";
    for (a, b, want) in [
        ("yes", "yes", "yes"),
        ("yes", "no", "no"),
        ("no", "yes", "no"),
    ] {
        let prims = Scripted::default()
            .reply("img1", both, a)
            .reply("img1", metallic, b);
        assert_eq!(run_with(BENCH, &prims, &images(1)).answer(), Some(want));
    }
}

#[test]
fn ladies_men_program_hits_unbound_name() {
    let prims = Scripted::default()
        .reply("img1", "Is there a lady?", "yes")
        .reply("img1", "How many ladies are wearing black shirt?", "2")
        .reply("img1", "Is there a man?", "yes");
    let r = run_with(LADIES_MEN, &prims, &images(2));
    let err = r.error().expect("printed program reads an unbound name");
    assert_eq!(err.kind, RuntimeErrorKind::UnboundName);
    assert!(err.message.contains("men_exist"));
    assert_eq!(err.loc.unwrap().line, 10);
}

#[test]
fn carriage_horse_program() {
    let base = Scripted::default().reply("img1", "Is there a horse?", "yes");
    let right =
        base.position("img1", "carriage", (18.5, 4.5))
            .position("img1", "horse", (3.5, 4.5));
    assert_eq!(
        run_with(CARRIAGE_HORSE, &right, &images(1)).answer(),
        Some("yes")
    );
    let no_horse = Scripted::default().reply("img1", "Is there a horse?", "no");
    let r = run_with(CARRIAGE_HORSE, &no_horse, &images(1));
    assert_eq!(r.answer(), Some("no"));
    assert_eq!(r.trace.len(), 1);
}

/// Primitive replies drawn from the execution's generator.
struct Noisy {
    invocations: Cell<usize>,
}

impl Noisy {
    fn new() -> Self {
        Noisy {
            invocations: Cell::new(0),
        }
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Result<u32, PrimitiveError> {
        self.invocations.set(self.invocations.get() + 1);
        let v = rng.next_u32();
        if v.is_multiple_of(17) {
            Err(PrimitiveError::new("injected"))
        } else {
            Ok(v)
        }
    }
}

impl Primitives for Noisy {
    fn query(
        &self,
        _: &ImageHandle,
        question: &str,
        rng: &mut dyn RngCore,
    ) -> Result<String, PrimitiveError> {
        let v = self.draw(rng)?;
        Ok(if question.starts_with("How many") {
            (v % 5).to_string()
        } else if v % 2 == 0 {
            "yes".into()
        } else {
            "no".into()
        })
    }

    fn get_pos(
        &self,
        _: &ImageHandle,
        _: &str,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64), PrimitiveError> {
        let v = self.draw(rng)?;
        Ok(((v % 24) as f64 + 0.5, ((v / 24) % 24) as f64 + 0.5))
    }

    fn find_matching_image(
        &self,
        images: &[ImageHandle],
        _: &str,
        rng: &mut dyn RngCore,
    ) -> Result<usize, PrimitiveError> {
        Ok(self.draw(rng)? as usize % images.len())
    }

    fn find_object(
        &self,
        _: &ImageHandle,
        _: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Detection>, PrimitiveError> {
        let n = self.draw(rng)? % 4;
        Ok((0..n)
            .map(|i| Detection::new("thing", [i as f64, 0.0, i as f64 + 1.0, 1.0], 0.9))
            .collect())
    }

    fn knowledge_query(&self, _: &str, rng: &mut dyn RngCore) -> Result<String, PrimitiveError> {
        Ok(format!("fact {}", self.draw(rng)? % 3))
    }
}

/// Renders a random but well-formed program from a choice sequence.
fn render_program(choices: &[u8]) -> String {
    let mut out = String::from(
        "images = open_images(\"set.jpg\")\nimg = open_image(\"a.jpg\")\ncount = 0\ns = \"no\"\nn = 0\npx = 0.0\npy = 0.0\n",
    );
    let mut depth = 0usize;
    let mut in_loop = 0usize;
    for (i, c) in choices.iter().enumerate() {
        let pad = "    ".repeat(depth);
        let target = if in_loop > 0 && i % 2 == 0 {
            "image"
        } else {
            "img"
        };
        let line = match c % 9 {
            0 => format!("s = query({target}, \"Is there a thing{i}?\")"),
            1 => format!("n = int(query({target}, \"How many thing{i} are there?\"))"),
            2 => format!("px, py = get_pos({target}, \"thing{i}\")"),
            3 => "count += 1".to_string(),
            4 => {
                out.push_str(&format!("{pad}for image in images:\n"));
                depth += 1;
                in_loop += 1;
                format!("    n = len(find_object(image, \"thing{i}\"))")
            }
            5 => {
                out.push_str(&format!("{pad}if s == \"yes\" or px > 12:\n"));
                depth += 1;
                "    count = count + n".to_string()
            }
            6 if depth > 0 => {
                depth -= 1;
                in_loop = in_loop.min(depth);
                continue;
            }
            7 => "answer = count * 2 - n".to_string(),
            _ => format!("s = knowledge_query(\"fact {i}?\")"),
        };
        out.push_str(&pad);
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("answer = str(count) + s\n");
    out
}

const FORBIDDEN: &[(&str, &str)] = &[
    ("import os", "import"),
    ("from os import path", "from"),
    ("while count < 3:\n{pad}    count += 1", "while"),
    ("def f():\n{pad}    count = 1", "def"),
    ("class A:\n{pad}    count = 1", "class"),
    ("x = images[0]", "index"),
    ("x = img.size", "attribute"),
    ("x = [1, 2]", "list"),
    ("x = {1: 2}", "dict"),
    ("x = lambda: 1", "lambda"),
    ("x = 2 ** 3", "**"),
    ("x = 7 // 2", "//"),
    ("x = 1 if count else 2", "conditional"),
    ("x = y = 1", "chained"),
    ("x = 1 < count < 3", "chained"),
    ("x = count & 1", "&"),
    ("x = \"a\" in s", "in"),
    ("x = s is None", "is"),
    ("count *= 2", "*="),
    ("x = len(s, key=1)", "keyword"),
    ("x = eval(\"1\")", "eval"),
    ("global count", "global"),
    ("pass", "pass"),
    ("return count", "return"),
    ("del count", "del"),
    (
        "try:\n{pad}    count = 1\n{pad}except:\n{pad}    count = 2",
        "try",
    ),
    ("with img:\n{pad}    count = 1", "with"),
    ("x = 1; y = 2", ";"),
    ("assert count", "assert"),
];

/// Inserts `construct` before line `at` of a well-formed program,
/// indenting it to match that line.
fn insert_construct(program: &str, at: usize, construct: &str) -> String {
    let lines: Vec<&str> = program.lines().collect();
    let at = at % lines.len();
    let pad: String = lines[at].chars().take_while(|c| *c == ' ').collect();
    let block = construct.replace("{pad}", &pad);
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i == at {
            out.push_str(&pad);
            out.push_str(&block);
            out.push('\n');
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

const FUZZ_VOCAB: &[&str] = &[
    "answer",
    "=",
    "query",
    "(",
    ")",
    "img",
    ",",
    "\"yes\"",
    "1",
    "2.5",
    "for",
    "in",
    "images",
    ":",
    "\n",
    "\n    ",
    "if",
    "else",
    "elif",
    "==",
    "+",
    "-",
    "*",
    "/",
    "%",
    "and",
    "or",
    "not",
    "int",
    "len",
    "open_images",
    "open_image",
    "\"x\"",
    "count",
    "+=",
    "get_pos",
    "x",
    "y",
    "while",
    "[",
    "]",
    ".",
    "import",
    "def",
    "'",
    "#",
    "\t",
    "0",
    "-7",
    "max",
    "min",
    "str",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn execution_is_deterministic(choices in prop::collection::vec(0u8..9, 1..30), seed in any::<u64>()) {
        let src = render_program(&choices);
        let program = parse_source(&src).expect("generated programs are well formed");
        let imgs = images(3);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            execute(&program, &Noisy::new(), &imgs, &InterpreterLimits::default(), &mut rng)
        };
        let a = serde_json::to_string(&run()).unwrap();
        let b = serde_json::to_string(&run()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn trace_counts_every_successful_invocation(choices in prop::collection::vec(0u8..9, 1..30), seed in any::<u64>()) {
        let program = parse_source(&render_program(&choices)).unwrap();
        let prims = Noisy::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = execute(&program, &prims, &images(4), &InterpreterLimits::default(), &mut rng);
        let ok = r.trace.iter().filter(|c| c.error.is_none()).count();
        let failed = r.trace.len() - ok;
        prop_assert_eq!(r.trace.len(), prims.invocations.get());
        prop_assert!(failed <= 1);
        if failed == 1 {
            prop_assert_eq!(r.error().map(|e| e.kind), Some(RuntimeErrorKind::PrimitiveFailure));
        }
    }

    #[test]
    fn inserting_a_forbidden_construct_flips_acceptance(
        choices in prop::collection::vec(0u8..9, 1..20),
        at in any::<usize>(),
        which in 0..FORBIDDEN.len(),
    ) {
        let src = render_program(&choices);
        prop_assert!(parse_source(&src).is_ok());
        let (construct, _) = FORBIDDEN[which];
        let mutated = insert_construct(&src, at, construct);
        prop_assert!(parse_source(&mutated).is_err(), "accepted:\n{}", mutated);
    }

    #[test]
    fn random_token_soup_never_panics(picks in prop::collection::vec(0..FUZZ_VOCAB.len(), 0..60), seed in any::<u64>()) {
        let src: String = picks.iter().map(|i| FUZZ_VOCAB[*i]).collect::<Vec<_>>().join(" ");
        if let Ok(program) = parse_source(&src) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limits = InterpreterLimits::default();
            let r = execute(&program, &Noisy::new(), &images(2), &limits, &mut rng);
            prop_assert!(r.trace.len() as u64 <= limits.max_primitive_calls);
        }
    }
}

#[test]
fn forbidden_constructs_name_themselves() {
    let base = "img = open_image(\"a\")\nanswer = 1\n";
    for (construct, name) in FORBIDDEN {
        let src = insert_construct(base, 1, construct);
        let err = parse_source(&src).expect_err(construct).to_string();
        assert!(
            err.to_lowercase().contains(&name.to_lowercase()) || err.contains("expected"),
            "{construct}: {err}"
        );
    }
}
