//! Scripted scenarios for every airport and retail rule row, read from the
//! golden files next to this module.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use poi_engine::inference::{Catalog, Control, Pattern, ProfileKind, Task, AIRPORT_RULES, BILLING_RULE, RETAIL_RULES};
use poi_engine::model::{Action, Event, EventKind, HumanId, OBlob, ObjectId, Severity, StorageId, Timestamp};
use poi_engine::runtime::{EngineConfig, RunOutput};

pub const AIRPORT_ROWS: usize = 20;
pub const RETAIL_ROWS: usize = 4;
const WINDOW: usize = 3;

#[derive(Debug, Deserialize)]
struct Row {
    row: String,
    trigger: String,
    history: String,
    #[serde(default)]
    object_owned: Option<String>,
    #[serde(default)]
    bin_owned: Option<String>,
    #[serde(default)]
    shelf_owns: Option<String>,
    label: String,
    control: String,
    tasks: Vec<String>,
    subject: ObjectId,
    #[serde(default)]
    bill: Option<i64>,
    steps: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct AirportSetup {
    visitors: Vec<HumanId>,
    bins: BTreeMap<StorageId, HumanId>,
}

#[derive(Debug, Deserialize)]
struct RetailSetup {
    clerk: HumanId,
    shoppers: Vec<HumanId>,
    shelves: BTreeMap<StorageId, BTreeSet<ObjectId>>,
    prices: BTreeMap<ObjectId, i64>,
}

#[derive(Debug, Deserialize)]
struct Golden<S> {
    setup: S,
    rows: Vec<Row>,
}

pub struct Case {
    pub row: String,
    pub events: Vec<Event>,
    pub engine: EngineConfig,
    pub catalog: Catalog,
    subject: ObjectId,
    trigger_time: Timestamp,
    expected: Row,
    prices: BTreeMap<ObjectId, i64>,
}

/// Builds a clean event stream with a full frame window around every interaction.
struct Script {
    events: Vec<Event>,
    t: u64,
    content: BTreeMap<StorageId, BTreeSet<ObjectId>>,
}

impl Script {
    fn new() -> Self {
        Self { events: Vec::new(), t: 0, content: BTreeMap::new() }
    }

    fn push(&mut self, kind: EventKind) -> Timestamp {
        self.t += 10;
        self.events.push(Event::new(self.t, kind));
        Timestamp(self.t)
    }

    fn frames(&mut self, s: StorageId) {
        for _ in 0..WINDOW + 2 {
            let objects = self.content[&s].clone();
            self.push(EventKind::StorageUpdate(s, objects));
        }
    }

    fn storage(&mut self, s: StorageId, by: HumanId, stock: BTreeSet<ObjectId>) {
        self.push(EventKind::StorageInstantiate(s, by));
        self.content.insert(s, stock);
        self.frames(s);
    }

    fn interact(&mut self, h: HumanId, s: StorageId, action: Action, o: ObjectId) -> Timestamp {
        self.frames(s);
        self.push(EventKind::HandIn(h, s));
        let t = self.push(EventKind::HandOut(h, s));
        let c = self.content.get_mut(&s).expect("known storage");
        match action {
            Action::Add => assert!(c.insert(o), "{o} already in {s}"),
            Action::Remove => assert!(c.remove(&o), "{o} not in {s}"),
        }
        self.frames(s);
        t
    }

    /// Runs one step such as `put H_1 S_2 O_1`, `take H_1 S_2 O_1` or `exit H_1`.
    fn step(&mut self, step: &str) -> Timestamp {
        let words: Vec<&str> = step.split_whitespace().collect();
        let h: HumanId = words[1].parse().expect("human id");
        match words[0] {
            "exit" => self.push(EventKind::HumanExit(h)),
            verb => {
                let s: StorageId = words[2].parse().expect("storage id");
                let o: ObjectId = words[3].parse().expect("object id");
                let action = match verb {
                    "put" => Action::Add,
                    "take" => Action::Remove,
                    other => panic!("unknown step verb {other}"),
                };
                self.interact(h, s, action, o)
            }
        }
    }
}

fn engine(profile: ProfileKind) -> EngineConfig {
    EngineConfig { noise_filter_window: WINDOW, profile, ..EngineConfig::default() }
}

fn airport_cases() -> Vec<Case> {
    let golden: Golden<AirportSetup> =
        serde_json::from_str(include_str!("airport_rows.json")).expect("airport golden file parses");
    golden
        .rows
        .into_iter()
        .map(|row| {
            let mut s = Script::new();
            for h in &golden.setup.visitors {
                s.push(EventKind::HumanEnter(*h));
            }
            for (bin, owner) in &golden.setup.bins {
                s.storage(*bin, *owner, BTreeSet::new());
            }
            let mut trigger_time = Timestamp(0);
            for step in &row.steps {
                trigger_time = s.step(step);
            }
            Case {
                row: row.row.clone(),
                events: s.events,
                engine: engine(ProfileKind::Airport),
                catalog: Catalog::default(),
                subject: row.subject,
                trigger_time,
                expected: row,
                prices: BTreeMap::new(),
            }
        })
        .collect()
}

fn retail_cases() -> Vec<Case> {
    let golden: Golden<RetailSetup> =
        serde_json::from_str(include_str!("retail_rows.json")).expect("retail golden file parses");
    let setup = &golden.setup;
    let mut catalog = Catalog { shelves: setup.shelves.clone(), ..Catalog::default() };
    for (o, price) in &setup.prices {
        let characteristics = [("price".to_string(), price.to_string())].into();
        catalog.objects.insert(*o, OBlob { id: *o, characteristics });
    }
    golden
        .rows
        .into_iter()
        .map(|row| {
            let mut s = Script::new();
            s.push(EventKind::HumanEnter(setup.clerk));
            for (shelf, stock) in &setup.shelves {
                s.storage(*shelf, setup.clerk, stock.clone());
            }
            for h in &setup.shoppers {
                s.push(EventKind::HumanEnter(*h));
            }
            let mut trigger_time = Timestamp(0);
            for step in &row.steps {
                trigger_time = s.step(step);
            }
            Case {
                row: row.row.clone(),
                events: s.events,
                engine: engine(ProfileKind::Retail),
                catalog: catalog.clone(),
                subject: row.subject,
                trigger_time,
                expected: row,
                prices: setup.prices.clone(),
            }
        })
        .collect()
}

pub fn all_cases() -> Vec<Case> {
    let mut v = airport_cases();
    v.extend(retail_cases());
    v
}

fn control_name(c: Control) -> &'static str {
    match c {
        Control::Set => "Set",
        Control::Test => "Test",
        Control::SetAndTest => "SetAndTest",
        Control::NoCheck => "NoCheck",
    }
}

fn task_name(t: &Task) -> String {
    let debug = format!("{t:?}");
    debug.split([' ', '{', '(']).next().unwrap_or_default().to_string()
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

fn history_name(p: Pattern) -> String {
    let l = |a: Action| a.letter();
    match p {
        Pattern::First(a) => format!("-,{}", l(a)),
        Pattern::Pair(a, b) => format!("{},{}", l(a), l(b)),
        Pattern::Exit(a) => format!("DNC,{}", l(a)),
    }
}

/// The rule table entry agrees with the golden row.
fn check_table(row: &Row) -> Result<(), String> {
    let (label, control, tasks): (String, Control, Vec<String>) = if row.row.starts_with('A') {
        let rule = AIRPORT_RULES.iter().find(|r| r.id == row.row).ok_or("row missing from the airport table")?;
        if history_name(rule.pattern) != row.history {
            return Err(format!("history {} vs {}", history_name(rule.pattern), row.history));
        }
        if row.bin_owned.as_deref() != Some(yes_no(rule.at_own)) {
            return Err(format!("bin ownership {:?} vs {}", row.bin_owned, rule.at_own));
        }
        if let Some(own) = rule.object_own {
            if row.object_owned.as_deref() != Some(yes_no(own)) {
                return Err(format!("object ownership {:?} vs {own}", row.object_owned));
            }
        }
        let trigger = if matches!(rule.pattern, Pattern::Exit(_)) { "HumanExit" } else { "HandOut" };
        if trigger != row.trigger {
            return Err(format!("trigger {trigger} vs {}", row.trigger));
        }
        (rule.label.to_string(), rule.control, rule.tasks.iter().map(task_name).collect())
    } else if row.row == BILLING_RULE {
        return Ok(());
    } else {
        let rule = RETAIL_RULES.iter().find(|r| r.id == row.row).ok_or("row missing from the retail table")?;
        (rule.label.to_string(), rule.control, rule.tasks.iter().map(task_name).collect())
    };
    if label != row.label {
        return Err(format!("table label {label:?} vs golden {:?}", row.label));
    }
    if control_name(control) != row.control {
        return Err(format!("table control {} vs golden {}", control_name(control), row.control));
    }
    if tasks != row.tasks {
        return Err(format!("table tasks {tasks:?} vs golden {:?}", row.tasks));
    }
    Ok(())
}

/// Units of each product still held at the end of the script.
fn scripted_units(steps: &[String]) -> BTreeMap<ObjectId, i64> {
    let mut units: BTreeMap<ObjectId, i64> = BTreeMap::new();
    for step in steps {
        let w: Vec<&str> = step.split_whitespace().collect();
        match w[0] {
            "take" => *units.entry(w[3].parse().expect("object")).or_default() += 1,
            "put" => *units.entry(w[3].parse().expect("object")).or_default() -= 1,
            _ => {}
        }
    }
    units
}

/// The run produced the row's label at the trigger, its anomaly tasks and
/// its ownership effect.
pub fn check_case(case: &Case, out: &RunOutput) -> Result<(), String> {
    let row = &case.expected;
    check_table(row)?;
    if let Some(owns) = row.shelf_owns.as_deref().filter(|o| *o != "-") {
        let last = row.steps.last().ok_or("no steps")?;
        let w: Vec<&str> = last.split_whitespace().collect();
        let shelf: StorageId = w[2].parse().map_err(|_| "shelf id")?;
        let stocked = case.catalog.shelves.get(&shelf).is_some_and(|o| o.contains(&row.subject));
        if yes_no(stocked) != owns {
            return Err(format!("shelf {shelf} stocks {}: {stocked}, golden {owns}", row.subject));
        }
    }
    if !out.stats.drained {
        return Err("engine did not drain".into());
    }
    let subject_human = HumanId(1);
    let archive = out.collected.humans.get(&subject_human).ok_or("subject human not archived")?;
    let hum = &archive.entity;
    let records = hum.inference_q.get(&case.subject).ok_or("no inference for the subject object")?;
    let last = records.last().expect("non-empty queue");
    if last.time != case.trigger_time || last.label != row.label {
        return Err(format!("last inference {last} but expected {:?} at {}", row.label, case.trigger_time));
    }

    let raised: Vec<Severity> = out
        .collected
        .anomalies
        .iter()
        .map(|r| &r.anomaly)
        .filter(|a| a.human == subject_human && a.object == case.subject && a.time == case.trigger_time)
        .map(|a| a.severity)
        .collect();
    let expected: Vec<Severity> = row
        .tasks
        .iter()
        .filter_map(|t| match t.as_str() {
            "RaiseAlarm" => Some(Severity::Alarm),
            "WarnHuman" | "NotifyCustomerAndStaff" => Some(Severity::Warning),
            _ => None,
        })
        .collect();
    if raised != expected {
        return Err(format!("anomalies {raised:?} but expected {expected:?}"));
    }

    let sets = row.control.contains("Set") && row.tasks.iter().any(|t| t == "AppendOwnership");
    if sets && !hum.ownership.owns(case.subject) {
        return Err("ownership of the subject object was not set".into());
    }
    if !sets && row.row.starts_with('A') && hum.ownership.owns(case.subject) && row.object_owned.as_deref() == Some("No") {
        return Err("ownership of another human's object was set".into());
    }

    if let Some(bill) = row.bill {
        let units = scripted_units(&row.steps);
        let by_script: i64 = units.iter().map(|(o, n)| n * case.prices.get(o).copied().unwrap_or(0)).sum();
        let amount = hum.retail.as_ref().map(|l| l.amount);
        if by_script != bill || amount != Some(bill) {
            return Err(format!("bill {amount:?}, golden {bill}, from the script {by_script}"));
        }
        for (o, price) in &case.prices {
            let want = poi_engine::inference::billing_label(units.get(o).copied().unwrap_or(0), *price);
            match hum.inference_q.get(o).and_then(|q| q.last()) {
                Some(r) if r.label == want => {}
                other => return Err(format!("{o}: billing record {other:?}, expected {want:?}")),
            }
        }
    }
    Ok(())
}
