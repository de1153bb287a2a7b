#![allow(dead_code)]

use rand::Rng as _;

use quail_core::data::{Cell, Column, FeatureSchema, TargetSpec, Table, Task};
use quail_core::rng;

/// Random mixed-type classification table with a few missing cells.
pub fn random_table(n: usize, d_num: usize, d_cat: usize, seed: u64) -> Table {
    let mut r = rng::stream(seed, rng::tag::SAMPLE, 0);
    let mut columns: Vec<Column> = (0..d_num).map(|j| Column::numeric(format!("x{j}"))).collect();
    columns.extend((0..d_cat).map(|j| Column::categorical(format!("c{j}"), ["p", "q", "r", "s"])));
    let schema = FeatureSchema::new(
        columns,
        TargetSpec {
            name: "label".into(),
            task: Task::Classification,
            classes: vec!["a".into(), "b".into(), "c".into()],
        },
    )
    .unwrap();
    let mut cells = Vec::with_capacity(n * (d_num + d_cat));
    for i in 0..n {
        for _ in 0..d_num {
            cells.push(if i > 0 && r.random_bool(0.05) {
                Cell::Missing
            } else {
                Cell::Num(r.random_range(-20.0..20.0))
            });
        }
        for _ in 0..d_cat {
            cells.push(if i > 0 && r.random_bool(0.05) { Cell::Missing } else { Cell::Cat(r.random_range(0..4)) });
        }
    }
    let targets = (0..n).map(|i| (i % 3) as f64).collect();
    Table::new(schema, cells, targets).unwrap()
}

pub fn cells_bitwise_equal(a: &Table, b: &Table) -> bool {
    a.schema() == b.schema()
        && a.cells().len() == b.cells().len()
        && a.targets().iter().map(|v| v.to_bits()).eq(b.targets().iter().map(|v| v.to_bits()))
        && a.cells().iter().zip(b.cells()).all(|(x, y)| match (x, y) {
            (Cell::Num(p), Cell::Num(q)) => p.to_bits() == q.to_bits(),
            _ => x == y,
        })
}
