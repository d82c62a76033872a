//! Regenerates the model files under `assets/`. Output is deterministic,
//! so rerunning it leaves committed files untouched.
//!
//!     cargo run -p specveil-cli --example make_assets

use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets");
    fs::create_dir_all(&root).expect("create assets dir");
    write(&root.join("grid6.json"), grid6());
    write(&root.join("surveillance.json"), surveillance());
}

fn write(path: &Path, value: Value) {
    let mut text = serde_json::to_string_pretty(&value).expect("serialize");
    text.push('\n');
    fs::write(path, text).expect("write asset");
    println!("wrote {}", path.display());
}

/// 6x6 gridworld. Rows count downward from the top-left start cell. Each
/// move goes the intended way with 0.99 and slips uniformly to the other
/// three directions; moves off the grid stay in place. Colored 2x2 regions
/// sit in three corners and the center.
fn grid6() -> Value {
    const N: i32 = 6;
    let name = |r: i32, c: i32| format!("r{r}c{c}");
    let dirs = [("up", -1, 0), ("down", 1, 0), ("left", 0, -1), ("right", 0, 1)];

    let mut states = Vec::new();
    let mut labels = Map::new();
    for r in 0..N {
        for c in 0..N {
            states.push(Value::String(name(r, c)));
            let region = if (4..=5).contains(&r) && (0..=1).contains(&c) {
                Some("blue")
            } else if (0..=1).contains(&r) && (4..=5).contains(&c) {
                Some("red")
            } else if (2..=3).contains(&r) && (2..=3).contains(&c) {
                Some("yellow")
            } else if (4..=5).contains(&r) && (4..=5).contains(&c) {
                Some("green")
            } else {
                None
            };
            if let Some(color) = region {
                labels.insert(name(r, c), json!([color]));
            }
        }
    }

    let mut transitions = Vec::new();
    for r in 0..N {
        for c in 0..N {
            for (intended, _, _) in dirs {
                // Slips to the same landing cell merge into one record.
                let mut mass: BTreeMap<String, f64> = BTreeMap::new();
                for (dir, dr, dc) in dirs {
                    let p = if dir == intended { 0.99 } else { 0.01 / 3.0 };
                    let (r2, c2) = (r + dr, c + dc);
                    let landing = if (0..N).contains(&r2) && (0..N).contains(&c2) {
                        name(r2, c2)
                    } else {
                        name(r, c)
                    };
                    *mass.entry(landing).or_insert(0.0) += p;
                }
                for (to, p) in mass {
                    transitions.push(json!({
                        "from": name(r, c),
                        "action": intended,
                        "to": to,
                        "prob": p,
                    }));
                }
            }
        }
    }

    json!({
        "states": states,
        "initial": "r0c0",
        "actions": ["up", "down", "left", "right"],
        "transitions": transitions,
        "labels": labels,
    })
}

/// Five-site patrol graph: a hub connected to every site, with the outer
/// sites forming a ring. Each `goto` action moves there deterministically
/// when the target is the current site or a neighbor, and stays otherwise.
fn surveillance() -> Value {
    let adjacent = |a: usize, b: usize| {
        let pairs = [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (3, 4), (4, 5), (2, 5)];
        pairs.contains(&(a.min(b), a.max(b)))
    };
    let name = |k: usize| format!("S{k}");

    let mut transitions = Vec::new();
    for s in 1..=5 {
        for k in 1..=5 {
            let target = if s == k || adjacent(s, k) { k } else { s };
            transitions.push(json!({
                "from": name(s),
                "action": format!("goto{k}"),
                "to": name(target),
                "prob": 1.0,
            }));
        }
    }

    json!({
        "states": ["S1", "S2", "S3", "S4", "S5"],
        "initial": "S1",
        "actions": ["goto1", "goto2", "goto3", "goto4", "goto5"],
        "transitions": transitions,
        "labels": {
            "S2": ["blue"],
            "S3": ["red"],
            "S4": ["yellow"],
            "S5": ["green"],
        },
    })
}
