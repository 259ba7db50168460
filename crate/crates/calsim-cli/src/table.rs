use calsim::maxplus::{MaxPlusMatrix, MaxPlusVector};

const W: usize = 12;

pub fn matrix_table(title: &str, names: &[String], m: &MaxPlusMatrix) -> String {
    let mut out = format!("{title}\n{:<W$}", "");
    for n in names {
        out.push_str(&format!("{n:>W$}"));
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(&format!("{n:<W$}"));
        for j in 0..names.len() {
            out.push_str(&format!("{:>W$}", m.get(i, j).to_string()));
        }
        out.push('\n');
    }
    out
}

pub fn vector_table(names: &[String], columns: &[(&str, &MaxPlusVector)]) -> String {
    let mut out = format!("{:<W$}", "node");
    for (title, _) in columns {
        out.push_str(&format!("{title:>W$}"));
    }
    out.push('\n');
    for (k, n) in names.iter().enumerate() {
        out.push_str(&format!("{n:<W$}"));
        for (_, v) in columns {
            out.push_str(&format!("{:>W$}", v.get(k).to_string()));
        }
        out.push('\n');
    }
    out
}
