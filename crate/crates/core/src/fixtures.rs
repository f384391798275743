//! Synthetic scenes, questions and correct-by-construction programs for
//! offline end-to-end runs against the scene-graph oracle.
//!
//! Gold answers are computed from the structured question template, not by
//! parsing the rendered question text.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backends::embed::hash_embedding;
use crate::backends::oracle::{plural, SceneGraph, SceneObject, Spatial};
use crate::backends::scripted::ScriptTable;
use crate::config::Flavor;
use crate::instance::VqaInstance;
use crate::retrieval::{Example, ExampleKind, ExampleStore};

pub const NAMES: &[&str] = &[
    "chair", "dog", "cat", "shoe", "cup", "bench", "horse", "car", "umbrella", "table", "bird",
    "lamp", "carriage",
];
pub const FIXTURE_COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "pink", "brown",
];
pub const MATERIALS: &[&str] = &["wooden", "metallic", "small", "large"];

/// Embedding dimension of fixture stores; matches the oracle's embedder.
pub const EMBED_DIM: usize = 64;

const GRID: usize = 24;

/// Object description: an optional color and a name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    pub color: Option<String>,
    pub name: String,
}

impl Phrase {
    fn new(color: Option<&str>, name: &str) -> Self {
        Phrase {
            color: color.map(String::from),
            name: name.to_string(),
        }
    }

    fn words(&self, plural_name: bool) -> String {
        let name = if plural_name {
            plural(&self.name)
        } else {
            self.name.clone()
        };
        match &self.color {
            Some(c) => format!("{c} {name}"),
            None => name,
        }
    }

    /// With an indefinite article: `a red chair`, `an umbrella`.
    fn indefinite(&self) -> String {
        let w = self.words(false);
        let article = if w.starts_with(['a', 'e', 'i', 'o', 'u']) {
            "an"
        } else {
            "a"
        };
        format!("{article} {w}")
    }

    fn matches(&self, o: &SceneObject) -> bool {
        o.name == self.name
            && self
                .color
                .as_ref()
                .is_none_or(|c| o.attributes.iter().any(|a| a == c))
    }

    fn count(&self, scene: &SceneGraph) -> usize {
        scene.objects.iter().filter(|o| self.matches(o)).count()
    }
}

/// A question family with its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Template {
    Exists(Phrase),
    Color {
        name: String,
    },
    Count(Phrase),
    Spatial {
        a: String,
        relation: Spatial,
        b: String,
    },
    And(Phrase, Phrase),
    Or(Phrase, Phrase),
    Looks {
        name: String,
        first: String,
        second: String,
    },
    ImagesWithExactly {
        k: usize,
        phrase: Phrase,
    },
    ImagesWith(Phrase),
    Every {
        name: String,
    },
    Total(Phrase),
    AnchorColor {
        anchor: String,
        name: String,
    },
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn first<'s>(scene: &'s SceneGraph, name: &str) -> Option<&'s SceneObject> {
    scene.objects.iter().find(|o| o.name == name)
}

fn relation_words(r: Spatial) -> &'static str {
    match r {
        Spatial::Left => "to the left of",
        Spatial::Right => "to the right of",
        Spatial::Above => "above",
        Spatial::Below => "below",
    }
}

fn single(body: &str) -> String {
    format!("img = open_image(\"Image1.jpg\")\n{body}")
}

fn yes_if(cond: &str) -> String {
    format!("if {cond}:\n    answer = \"yes\"\nelse:\n    answer = \"no\"\n")
}

impl Template {
    pub fn question(&self) -> String {
        match self {
            Template::Exists(p) => format!("Is there {}?", p.indefinite()),
            Template::Color { name } => format!("What color is the {name}?"),
            Template::Count(p) => format!("How many {} are there?", p.words(true)),
            Template::Spatial { a, relation, b } => {
                format!("Is the {a} {} the {b}?", relation_words(*relation))
            }
            Template::And(p, q) => format!("Is there {} and {}?", p.indefinite(), q.indefinite()),
            Template::Or(p, q) => format!("Is there {} or {}?", p.indefinite(), q.indefinite()),
            Template::Looks {
                name,
                first,
                second,
            } => {
                format!("Does the {name} look {first} and {second}?")
            }
            Template::ImagesWithExactly { k, phrase } => {
                format!(
                    "How many images contain exactly {k} {}?",
                    phrase.words(*k != 1)
                )
            }
            Template::ImagesWith(p) => format!("How many images contain {}?", p.indefinite()),
            Template::Every { name } => format!(
                "Does every image contain {}?",
                Phrase::new(None, name).indefinite()
            ),
            Template::Total(p) => format!("How many {} are there in total?", p.words(true)),
            Template::AnchorColor { anchor, name } => format!(
                "In the image with {}, what color is the {name}?",
                Phrase::new(None, anchor).indefinite()
            ),
        }
    }

    /// Grouping tag recorded as the instance's question type.
    pub fn question_type(&self) -> &'static str {
        match self {
            Template::Exists(_) => "existence",
            Template::Color { .. } | Template::Looks { .. } | Template::AnchorColor { .. } => {
                "attribute"
            }
            Template::Count(_)
            | Template::ImagesWithExactly { .. }
            | Template::ImagesWith(_)
            | Template::Total(_) => "counting",
            Template::Spatial { .. } => "spatial",
            Template::And(..) | Template::Every { .. } => "and",
            Template::Or(..) => "or",
        }
    }

    /// A program that answers the question correctly given correct
    /// primitive replies.
    pub fn program(&self) -> String {
        match self {
            Template::Exists(_) | Template::Color { .. } | Template::Count(_) => {
                single(&format!("answer = query(img, \"{}\")\n", self.question()))
            }
            Template::Spatial { a, relation, b } => {
                let cond = match relation {
                    Spatial::Left => "a_x < b_x",
                    Spatial::Right => "a_x > b_x",
                    Spatial::Above => "a_y > b_y",
                    Spatial::Below => "a_y < b_y",
                };
                single(&format!(
                    "a_x, a_y = get_pos(img, \"{a}\")\nb_x, b_y = get_pos(img, \"{b}\")\n{}",
                    yes_if(cond)
                ))
            }
            Template::And(p, q) | Template::Or(p, q) => {
                let op = if matches!(self, Template::And(..)) { "and" } else { "or" };
                single(&format!(
                    "first = query(img, \"Is there {}?\")\nsecond = query(img, \"Is there {}?\")\n{}",
                    p.indefinite(),
                    q.indefinite(),
                    yes_if(&format!("first == \"yes\" {op} second == \"yes\""))
                ))
            }
            Template::Looks { name, first, second } => single(&format!(
                "is_{first} = query(img, \"Is the {name} {first}?\")\nis_{second} = query(img, \"Is the {name} {second}?\")\n{}",
                yes_if(&format!("is_{first} == \"yes\" and is_{second} == \"yes\""))
            )),
            Template::ImagesWithExactly { k, phrase } => count_images(&format!(
                "Are there exactly {k} {}?",
                phrase.words(*k != 1)
            )),
            Template::ImagesWith(p) => count_images(&format!("Is there {}?", p.indefinite())),
            Template::Every { name } => format!(
                "images = open_images(\"ImageSet1.jpg\")\ncount = 0\nfor image in images:\n    present = query(image, \"Is there {}?\")\n    if present == \"yes\":\n        count += 1\n{}",
                Phrase::new(None, name).indefinite(),
                yes_if("count == len(images)")
            ),
            Template::Total(p) => format!(
                "images = open_images(\"ImageSet1.jpg\")\ntotal = 0\nfor image in images:\n    total += int(query(image, \"How many {} are there?\"))\nanswer = total\n",
                p.words(true)
            ),
            Template::AnchorColor { anchor, name } => format!(
                "images = open_images(\"ImageSet1.jpg\")\nimage = find_matching_image(images, \"{anchor}\")\nanswer = query(image, \"What color is the {name}?\")\n"
            ),
        }
    }

    /// The correct answer, computed directly from the scene graphs.
    pub fn gold(&self, scenes: &[SceneGraph]) -> String {
        let s = &scenes[0];
        match self {
            Template::Exists(p) => yes_no(p.count(s) > 0),
            Template::Color { name } => first(s, name)
                .and_then(|o| {
                    o.attributes
                        .iter()
                        .find(|a| FIXTURE_COLORS.contains(&a.as_str()))
                })
                .cloned()
                .unwrap_or_default(),
            Template::Count(p) => p.count(s).to_string(),
            Template::Spatial { a, relation, b } => match (first(s, a), first(s, b)) {
                (Some(x), Some(y)) => {
                    let (ra, ca) = (x.grid_cell[0], x.grid_cell[1]);
                    let (rb, cb) = (y.grid_cell[0], y.grid_cell[1]);
                    yes_no(match relation {
                        Spatial::Left => ca < cb,
                        Spatial::Right => ca > cb,
                        Spatial::Above => ra < rb,
                        Spatial::Below => ra > rb,
                    })
                }
                _ => yes_no(false),
            },
            Template::And(p, q) => yes_no(p.count(s) > 0 && q.count(s) > 0),
            Template::Or(p, q) => yes_no(p.count(s) > 0 || q.count(s) > 0),
            Template::Looks {
                name,
                first: a,
                second: b,
            } => yes_no(
                first(s, name)
                    .is_some_and(|o| o.attributes.contains(a) && o.attributes.contains(b)),
            ),
            Template::ImagesWithExactly { k, phrase } => scenes
                .iter()
                .filter(|s| phrase.count(s) == *k)
                .count()
                .to_string(),
            Template::ImagesWith(p) => scenes.iter().filter(|s| p.count(s) > 0).count().to_string(),
            Template::Every { name } => yes_no(scenes.iter().all(|s| first(s, name).is_some())),
            Template::Total(p) => scenes.iter().map(|s| p.count(s)).sum::<usize>().to_string(),
            Template::AnchorColor { anchor, name } => scenes
                .iter()
                .find(|s| first(s, anchor).is_some())
                .map(|s| Template::Color { name: name.clone() }.gold(std::slice::from_ref(s)))
                .unwrap_or_default(),
        }
    }
}

fn count_images(sub_question: &str) -> String {
    format!(
        "images = open_images(\"ImageSet1.jpg\")\ncount = 0\nfor image in images:\n    matched = query(image, \"{sub_question}\")\n    if matched == \"yes\":\n        count += 1\nanswer = count\n"
    )
}

/// Rewrites a program so it fails at run time before doing anything else.
pub fn corrupt_program(program: &str) -> String {
    format!("check = int(\"corrupted\")\n{program}")
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty vocabulary")
}

fn random_scene(rng: &mut ChaCha8Rng, image_ref: String) -> SceneGraph {
    let m = rng.random_range(2..=5);
    let cells = rand::seq::index::sample(rng, GRID * GRID, m);
    let mut objects: Vec<SceneObject> = cells
        .into_iter()
        .map(|cell| {
            let mut attrs = vec![pick(rng, FIXTURE_COLORS)];
            if rng.random_bool(0.5) {
                attrs.push(pick(rng, MATERIALS));
            }
            SceneObject::new(pick(rng, NAMES), &attrs, cell / GRID, cell % GRID)
        })
        .collect();
    if m > 1 && rng.random_bool(0.3) {
        objects[0].relations.push(("next to".to_string(), 1));
    }
    SceneGraph { image_ref, objects }
}

fn present_phrase(rng: &mut ChaCha8Rng, scene: &SceneGraph, with_color: bool) -> Phrase {
    let o = scene.objects.choose(rng).expect("scenes have objects");
    let color = with_color.then(|| o.attributes[0].as_str());
    Phrase::new(color, &o.name)
}

fn any_phrase(rng: &mut ChaCha8Rng, scenes: &[SceneGraph], with_color: bool) -> Phrase {
    if rng.random_bool(0.6) {
        let s = scenes.choose(rng).expect("at least one scene");
        present_phrase(rng, s, with_color)
    } else {
        let color = with_color.then(|| pick(rng, FIXTURE_COLORS));
        Phrase::new(color, pick(rng, NAMES))
    }
}

fn unique_names(scene: &SceneGraph) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for o in &scene.objects {
        if scene.objects.iter().filter(|x| x.name == o.name).count() == 1 {
            names.push(&o.name);
        }
    }
    names
}

fn single_template(rng: &mut ChaCha8Rng, scenes: &[SceneGraph], family: usize) -> Option<Template> {
    let s = &scenes[0];
    let with_color = rng.random_bool(0.5);
    Some(match family % 7 {
        0 => Template::Exists(any_phrase(rng, scenes, with_color)),
        1 => Template::Color {
            name: present_phrase(rng, s, false).name,
        },
        2 => Template::Count(any_phrase(rng, scenes, with_color)),
        3 => {
            let names = unique_names(s);
            if names.len() < 2 {
                return None;
            }
            let picked: Vec<&str> = names.choose_multiple(rng, 2).copied().collect();
            let relation = *[
                Spatial::Left,
                Spatial::Right,
                Spatial::Above,
                Spatial::Below,
            ]
            .choose(rng)
            .expect("non-empty");
            Template::Spatial {
                a: picked[0].to_string(),
                relation,
                b: picked[1].to_string(),
            }
        }
        4 => Template::And(
            present_phrase(rng, s, with_color),
            any_phrase(rng, scenes, false),
        ),
        5 => Template::Or(
            any_phrase(rng, scenes, with_color),
            any_phrase(rng, scenes, false),
        ),
        _ => {
            let o = s.objects.choose(rng).expect("scenes have objects");
            let first = if rng.random_bool(0.7) {
                o.attributes[0].clone()
            } else {
                pick(rng, FIXTURE_COLORS).to_string()
            };
            let second = match o.attributes.get(1) {
                Some(m) if rng.random_bool(0.7) => m.clone(),
                _ => pick(rng, MATERIALS).to_string(),
            };
            Template::Looks {
                name: o.name.clone(),
                first,
                second,
            }
        }
    })
}

fn multi_template(rng: &mut ChaCha8Rng, scenes: &[SceneGraph], family: usize) -> Option<Template> {
    Some(match family % 5 {
        0 => {
            let with_color = rng.random_bool(0.5);
            let phrase = any_phrase(rng, scenes, with_color);
            Template::ImagesWithExactly {
                k: rng.random_range(1..=2),
                phrase,
            }
        }
        1 => {
            let with_color = rng.random_bool(0.5);
            Template::ImagesWith(any_phrase(rng, scenes, with_color))
        }
        2 => Template::Every {
            name: present_phrase(rng, &scenes[0], false).name,
        },
        3 => {
            let with_color = rng.random_bool(0.5);
            Template::Total(any_phrase(rng, scenes, with_color))
        }
        _ => {
            let mut candidates = Vec::new();
            for (i, s) in scenes.iter().enumerate() {
                for anchor in unique_names(s) {
                    let elsewhere = scenes
                        .iter()
                        .enumerate()
                        .any(|(j, t)| j != i && first(t, anchor).is_some());
                    if elsewhere {
                        continue;
                    }
                    for o in s.objects.iter().filter(|o| o.name != anchor) {
                        candidates.push((anchor.to_string(), o.name.clone()));
                    }
                }
            }
            let (anchor, name) = candidates.choose(rng)?.clone();
            Template::AnchorColor { anchor, name }
        }
    })
}

/// One generated instance with its scenes and template.
#[derive(Debug, Clone)]
pub struct FixtureItem {
    pub instance: VqaInstance,
    pub template: Template,
    pub scenes: Vec<SceneGraph>,
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub items: Vec<FixtureItem>,
    pub store: ExampleStore,
}

impl FixtureSet {
    pub fn instances(&self) -> Vec<VqaInstance> {
        self.items.iter().map(|i| i.instance.clone()).collect()
    }

    pub fn scenes(&self) -> Vec<SceneGraph> {
        self.items
            .iter()
            .flat_map(|i| i.scenes.iter().cloned())
            .collect()
    }

    /// Question to correct program, for a scripted code model.
    pub fn script(&self) -> ScriptTable {
        ScriptTable {
            programs: self
                .items
                .iter()
                .map(|i| (i.instance.text().to_string(), i.template.program()))
                .collect::<BTreeMap<_, _>>(),
            answers: BTreeMap::new(),
        }
    }

    /// Writes `scenes/<image_ref>.json`, `instances.jsonl`, `script.json`
    /// and `examples.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let scenes_dir = dir.join("scenes");
        std::fs::create_dir_all(&scenes_dir)?;
        for s in self.scenes() {
            let mut json = serde_json::to_string_pretty(&s).expect("scenes serialize");
            json.push('\n');
            std::fs::write(scenes_dir.join(format!("{}.json", s.image_ref)), json)?;
        }
        let instances: String = self
            .items
            .iter()
            .map(|i| i.instance.to_jsonl() + "\n")
            .collect();
        std::fs::write(dir.join("instances.jsonl"), instances)?;
        let mut script = serde_json::to_string_pretty(&self.script()).expect("script serializes");
        script.push('\n');
        std::fs::write(dir.join("script.json"), script)?;
        std::fs::write(dir.join("examples.jsonl"), self.store.to_jsonl())
    }
}

/// `n` instances cycling through 1 to 5 images, each with distinct
/// question text. Template families rotate so every family appears once
/// `n` is at least 31. Identical `(seed, n)` give identical sets.
pub fn generate(seed: u64, n: usize) -> FixtureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let num_images = 1 + i % 5;
        let item = (0..10_000)
            .find_map(|_| {
                let scenes: Vec<SceneGraph> = (0..num_images)
                    .map(|j| random_scene(&mut rng, format!("fx{i:03}-img{j}")))
                    .collect();
                let round = i / 5;
                let template = if num_images == 1 {
                    single_template(&mut rng, &scenes, round)
                } else {
                    multi_template(&mut rng, &scenes, round + num_images)
                }?;
                let question = template.question();
                if seen.contains(&question) {
                    return None;
                }
                seen.insert(question.clone());
                let instance = VqaInstance::new(
                    format!("fx{i:03}"),
                    question,
                    false,
                    scenes.iter().map(|s| s.image_ref.clone()).collect(),
                    vec![template.gold(&scenes)],
                    "fixtures",
                    Some(template.question_type().to_string()),
                )
                .expect("fixture instances have images and answers");
                Some(FixtureItem {
                    instance,
                    template,
                    scenes,
                })
            })
            .expect("a valid fixture is found within the attempt budget");
        items.push(item);
    }
    FixtureSet {
        items,
        store: example_store(),
    }
}

const PINK_SHOES: &str = include_str!("../tests/programs/pink_shoes.py");
const BENCH: &str = include_str!("../tests/programs/bench.py");
const CARRIAGE: &str = include_str!("../tests/programs/carriage_horse.py");

/// The fixed in-context example store used with fixtures: code examples for
/// every template family plus caption-QA examples, embedded with
/// [`hash_embedding`].
pub fn example_store() -> ExampleStore {
    let p = |c: Option<&str>, n: &str| Phrase::new(c, n);
    let code_templates = [
        Template::Exists(p(Some("white"), "cat")),
        Template::Exists(p(None, "boat")),
        Template::Color { name: "car".into() },
        Template::Color {
            name: "kite".into(),
        },
        Template::Count(p(Some("green"), "cup")),
        Template::Count(p(None, "bird")),
        Template::Spatial {
            a: "lamp".into(),
            relation: Spatial::Left,
            b: "table".into(),
        },
        Template::Spatial {
            a: "bird".into(),
            relation: Spatial::Above,
            b: "bench".into(),
        },
        Template::And(p(Some("red"), "bus"), p(None, "tree")),
        Template::Or(p(None, "fork"), p(Some("silver"), "knife")),
        Template::Looks {
            name: "table".into(),
            first: "brown".into(),
            second: "wooden".into(),
        },
        Template::Looks {
            name: "mug".into(),
            first: "white".into(),
            second: "large".into(),
        },
        Template::ImagesWithExactly {
            k: 3,
            phrase: p(Some("yellow"), "flower"),
        },
        Template::ImagesWith(p(Some("black"), "dog")),
        Template::Every {
            name: "person".into(),
        },
        Template::Total(p(None, "apple")),
        Template::AnchorColor {
            anchor: "boat".into(),
            name: "sail".into(),
        },
    ];
    let mut examples: Vec<(String, ExampleKind)> = code_templates
        .iter()
        .map(|t| {
            (
                t.question(),
                ExampleKind::Code {
                    program: t.program(),
                },
            )
        })
        .collect();
    examples.push((
        "How many images contain exactly 2 pink shoes?".into(),
        ExampleKind::Code {
            program: PINK_SHOES.into(),
        },
    ));
    examples.push((
        "Does the bench look silver and metallic?".into(),
        ExampleKind::Code {
            program: BENCH.into(),
        },
    ));
    examples.push((
        "Is the carriage to the right of a horse?".into(),
        ExampleKind::Code {
            program: CARRIAGE.into(),
        },
    ));
    let qa = |caps: &[&[&str]], q: &str, a: &str| {
        (
            q.to_string(),
            ExampleKind::Qa {
                captions: caps
                    .iter()
                    .map(|c| c.iter().map(|s| s.to_string()).collect())
                    .collect(),
                answer: a.to_string(),
            },
        )
    };
    examples.extend([
        qa(
            &[&[
                "a red car parked on a street",
                "a street with a red car",
                "a car next to a curb",
            ]],
            "What color is the car?",
            "red",
        ),
        qa(
            &[&[
                "a dog lying on a rug",
                "a brown dog sleeping",
                "a rug in a living room",
            ]],
            "Is there a cat?",
            "no",
        ),
        qa(
            &[&[
                "three cups on a table",
                "a table with cups",
                "cups of coffee on a wooden table",
            ]],
            "How many cups are there?",
            "3",
        ),
        qa(
            &[&[
                "a lamp next to a sofa",
                "a sofa with a lamp on the left",
                "a living room",
            ]],
            "Is the lamp to the left of the sofa?",
            "yes",
        ),
        qa(
            &[&[
                "a wooden bench in a park",
                "a brown bench on grass",
                "a park bench",
            ]],
            "Is the bench wooden?",
            "yes",
        ),
        qa(
            &[&[
                "a bird on a branch",
                "a small bird in a tree",
                "a tree branch",
            ]],
            "Is there a bird?",
            "yes",
        ),
        qa(
            &[&[
                "a white plate",
                "a plate with food",
                "food on a white plate",
            ]],
            "Is there a fork or a knife?",
            "no",
        ),
        qa(
            &[&[
                "a horse pulling a carriage",
                "a carriage on a road",
                "a brown horse",
            ]],
            "Is there a horse and a carriage?",
            "yes",
        ),
        qa(
            &[
                &["two pink shoes on a floor", "a pair of pink shoes"],
                &["a single pink shoe", "a shoe on a bed"],
            ],
            "How many images contain exactly 2 pink shoes?",
            "1",
        ),
        qa(
            &[
                &["a man with an umbrella", "a black umbrella"],
                &["a woman in the rain", "a wet street"],
            ],
            "Does every image contain an umbrella?",
            "no",
        ),
        qa(
            &[
                &["two apples in a bowl", "a bowl of fruit"],
                &["an apple on a desk", "a desk with a laptop"],
            ],
            "How many apples are there in total?",
            "3",
        ),
        qa(
            &[
                &["a boat with a white sail", "a sailboat on a lake"],
                &["a beach with people", "sand and water"],
            ],
            "In the image with a boat, what color is the sail?",
            "white",
        ),
    ]);
    let examples = examples
        .into_iter()
        .enumerate()
        .map(|(i, (question, kind))| {
            let prefix = match kind {
                ExampleKind::Code { .. } => "code",
                ExampleKind::Qa { .. } => "qa",
            };
            Example {
                id: format!("{prefix}-{i:02}"),
                embedding: hash_embedding(&question, EMBED_DIM),
                question,
                kind,
            }
        })
        .collect();
    ExampleStore::new(examples).expect("fixture examples are valid")
}

/// [`example_store`] restricted to examples that fit `flavor`: for
/// single-image prompts, code examples that open one image and caption-QA
/// examples over one image.
pub fn example_store_for(flavor: Flavor) -> ExampleStore {
    let all = example_store();
    if flavor == Flavor::MultiImage {
        return all;
    }
    let single: Vec<Example> = all
        .examples()
        .iter()
        .filter(|e| match &e.kind {
            ExampleKind::Code { program } => !program.contains("open_images"),
            ExampleKind::Qa { captions, .. } => captions.len() == 1,
        })
        .cloned()
        .collect();
    ExampleStore::new(single).expect("a subset of a valid store is valid")
}
