//! Templated contract generator for desk-scale experiments.
//!
//! Every contract draws party names, a governing state, a city and a few
//! numeric terms, plus a house style that picks one of two wordings for each
//! clause type. Three "target" types appear independently with probability
//! `include_prob`; the remaining slots are filled with distinct filler types,
//! so the contract alone does not reveal which target type is being asked for.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Clause, Contract};
use crate::error::{Error, Result};

pub const TARGET_TYPES: [&str; 3] = ["governing laws", "notices", "confidentiality"];

const FILLER_TYPES: [&str; 12] = [
    "severability",
    "counterparts",
    "entire agreements",
    "amendments",
    "waivers",
    "headings",
    "assignments",
    "terminations",
    "insurances",
    "audits",
    "publicity",
    "expenses",
];

const PARTIES: [&str; 12] = [
    "Acme Holdings", "Borealis Capital", "Cedar Logistics", "Dunmore Foods", "Everly Systems",
    "Fairhaven Energy", "Granite Pharma", "Harbor Media", "Ironwood Partners", "Juniper Labs",
    "Kestrel Mining", "Lumen Retail",
];
const STATES: [&str; 10] = [
    "Delaware", "New York", "California", "Texas", "Nevada", "Illinois", "Florida", "Ohio",
    "Georgia", "Washington",
];
const CITIES: [&str; 8] = [
    "Boston", "Chicago", "Denver", "Houston", "Miami", "Seattle", "Austin", "Phoenix",
];
const DAYS: [u32; 6] = [5, 10, 15, 30, 45, 60];

struct Slots<'a> {
    party: &'a str,
    counterparty: &'a str,
    state: &'a str,
    city: &'a str,
    days: u32,
    years: u32,
}

fn render(clause_type: &str, style: usize, s: &Slots<'_>) -> String {
    let (p, cp, st, city, days, years) = (s.party, s.counterparty, s.state, s.city, s.days, s.years);
    match (clause_type, style) {
        ("governing laws", 0) => format!(
            "This Agreement shall be governed by and construed in accordance with the laws of the State of {st}, without regard to its conflict of laws principles."
        ),
        ("governing laws", _) => format!(
            "The laws of the State of {st} govern this Agreement and any dispute arising under it, and each party submits to the courts located in {st}."
        ),
        ("notices", 0) => format!(
            "All notices under this Agreement shall be in writing and delivered to {p} at its principal office in {city}, and shall be effective {days} days after delivery."
        ),
        ("notices", _) => format!(
            "Any notice required hereunder must be sent by certified mail to {p} in {city} and is deemed given {days} days after mailing."
        ),
        ("confidentiality", 0) => format!(
            "{cp} shall keep all confidential information of {p} in strict confidence and shall not disclose it to any third party for {years} years."
        ),
        ("confidentiality", _) => format!(
            "Each party agrees that confidential information received from {p} will be used solely for this Agreement and protected for a period of {years} years."
        ),
        ("severability", _) => format!(
            "If any provision of this Agreement between {p} and {cp} is held invalid, the remaining provisions remain in full force."
        ),
        ("counterparts", _) => {
            "This Agreement may be executed in counterparts, each of which is deemed an original.".to_string()
        }
        ("entire agreements", _) => format!(
            "This Agreement constitutes the entire agreement between {p} and {cp} and supersedes all prior understandings."
        ),
        ("amendments", _) => format!(
            "No amendment of this Agreement is effective unless signed by authorized officers of {p} and {cp}."
        ),
        ("waivers", _) => {
            "No failure to exercise any right under this Agreement operates as a waiver of that right.".to_string()
        }
        ("headings", _) => {
            "Headings are for convenience only and do not affect the interpretation of this Agreement.".to_string()
        }
        ("assignments", _) => format!(
            "{cp} may not assign this Agreement without the prior written consent of {p}."
        ),
        ("terminations", _) => format!(
            "Either {p} or {cp} may terminate this Agreement upon {days} days written notice to the other."
        ),
        ("insurances", _) => format!(
            "{cp} shall maintain commercial general liability insurance naming {p} as an additional insured."
        ),
        ("audits", _) => format!(
            "{p} may audit the relevant books and records of {cp} once per calendar year during business hours."
        ),
        ("publicity", _) => format!(
            "Neither {p} nor {cp} shall issue any press release about this Agreement without mutual approval."
        ),
        (_, _) => format!(
            "Each party bears its own expenses, and {cp} shall reimburse {p} within {days} days of invoice."
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub contracts: usize,
    pub clauses_per_contract: usize,
    pub include_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            contracts: 300,
            clauses_per_contract: 5,
            include_prob: 0.35,
            seed: 7,
        }
    }
}

pub fn synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<Contract>> {
    if cfg.clauses_per_contract < TARGET_TYPES.len()
        || cfg.clauses_per_contract > TARGET_TYPES.len() + FILLER_TYPES.len()
    {
        return Err(Error::Config(format!(
            "clauses_per_contract must lie in {}..={}",
            TARGET_TYPES.len(),
            TARGET_TYPES.len() + FILLER_TYPES.len()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.include_prob) {
        return Err(Error::Config("include_prob outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.contracts);
    for n in 0..cfg.contracts {
        let contract_id = format!("synth-{n:04}");
        let mut parties: Vec<&str> = PARTIES.choose_multiple(&mut rng, 2).copied().collect();
        parties.shuffle(&mut rng);
        let slots = Slots {
            party: parties[0],
            counterparty: parties[1],
            state: STATES.choose(&mut rng).copied().unwrap_or(STATES[0]),
            city: CITIES.choose(&mut rng).copied().unwrap_or(CITIES[0]),
            days: DAYS.choose(&mut rng).copied().unwrap_or(DAYS[0]),
            years: rng.random_range(1..=5),
        };
        let style = rng.random_range(0..2);

        let mut types: Vec<&str> = TARGET_TYPES
            .iter()
            .copied()
            .filter(|_| rng.random_bool(cfg.include_prob))
            .collect();
        if types.is_empty() {
            types.push(TARGET_TYPES.choose(&mut rng).copied().unwrap_or(TARGET_TYPES[0]));
        }
        let mut fillers = FILLER_TYPES.to_vec();
        fillers.shuffle(&mut rng);
        let missing = cfg.clauses_per_contract - types.len();
        types.extend(fillers.into_iter().take(missing));
        types.shuffle(&mut rng);

        let clauses = types
            .iter()
            .enumerate()
            .map(|(i, t)| Clause::new(format!("{contract_id}-c{i}"), &contract_id, t, render(t, style, &slots)))
            .collect();
        out.push(Contract {
            contract_id,
            clauses,
        });
    }
    Ok(out)
}
