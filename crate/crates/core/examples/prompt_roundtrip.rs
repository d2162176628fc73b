//! Renders a prompt with two exemplars, then parses a few typical model
//! responses back into relation sets.
//!
//!     cargo run --example prompt_roundtrip

use hydre::corpus::{LabelSet, Relation, RelationOntology, SentenceInstance};
use hydre::prompting::{parse_response, render_prompt, ExemplarBlock, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ontology = RelationOntology::new(vec![
        Relation {
            name: "/business/company/founders".into(),
            definition: "head entity is a company and tail entity is a person (founder)".into(),
        },
        Relation {
            name: "/business/company/place_founded".into(),
            definition: "head entity is a company and tail entity is a location".into(),
        },
        Relation {
            name: "/people/person/children".into(),
            definition: "head entity is a person and tail entity is another person (child)".into(),
        },
    ])?;
    let id = |n: &str| ontology.id(n).unwrap();

    let nokia = SentenceInstance::new(
        "s1",
        "Nokia began as a paper mill near Espoo more than a century ago .",
        (0, 5),
        (33, 38),
    )?;
    let henson = SentenceInstance::new(
        "s2",
        "Brian Henson , the son of Jim Henson , serves as chairman .",
        (26, 36),
        (0, 12),
    )?;
    let query = SentenceInstance::new(
        "q",
        "Chris DeWolfe , the chief executive of MySpace , said in a statement .",
        (39, 46),
        (0, 13),
    )?;
    let blocks = [
        ExemplarBlock {
            sentences: vec![&nokia],
            labels: LabelSet::from([id("/business/company/place_founded")]),
        },
        ExemplarBlock {
            sentences: vec![&henson],
            labels: LabelSet::from([id("/people/person/children")]),
        },
    ];
    let prompt = render_prompt(&query, &blocks, &[], &ontology, &PromptTemplate::default())?;
    println!("{prompt}\n");

    for raw in [
        "/business/company/founders",
        "Output: /business/company/founders\n/business/company/place_founded",
        "NA",
        "NA\n/people/person/children",
        "I cannot tell from the sentence.",
    ] {
        let parsed = parse_response(raw, &ontology);
        println!("{raw:?} -> {:?}", ontology.label_names(&parsed.relations));
    }
    Ok(())
}
