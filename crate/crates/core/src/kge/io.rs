//! `KGLOOP-EMB v1` parameter files.
//!
//! ```text
//! KGLOOP-EMB v1
//! geometry <d> <rows> <cols> <filters> <kernel_h> <kernel_w>
//! leak <value>
//! entity <id> <v1> ... <vd>        (sorted by id)
//! relation <name> <v1> ... <vd>    (canonical relation order)
//! filter <f> <k1> ...
//! projection <row> <c1> ...
//! w1 <row> ... / w2 <row> ...
//! p <v1> ... / q <v1> ...
//! END
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ConvEGeometry, ConvEParams, EmbeddingTable, Model};
use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationKind};
use crate::linalg::Matrix;
use crate::num::{fmt_scalar, parse_scalar, Scalar};

pub const EMB_HEADER: &str = "KGLOOP-EMB v1";

fn push_row<T: Scalar>(out: &mut String, label: &str, values: &[T]) {
    out.push_str(label);
    for &v in values {
        out.push('\t');
        out.push_str(&fmt_scalar(v));
    }
    out.push('\n');
}

pub fn model_to_string<T: Scalar>(model: &Model<T>) -> String {
    let g = model.conve.geometry;
    let mut out = String::new();
    let _ = writeln!(out, "{EMB_HEADER}");
    let _ = writeln!(
        out,
        "geometry\t{}\t{}\t{}\t{}\t{}\t{}",
        g.d, g.rows, g.cols, g.filters, g.kernel_h, g.kernel_w
    );
    let _ = writeln!(out, "leak\t{}", fmt_scalar(model.attn.leak));
    for slot in model.emb.sorted_slots() {
        push_row(&mut out, &format!("entity\t{}", model.emb.id_at(slot)), model.emb.entity_at(slot));
    }
    for r in RelationKind::ALL {
        push_row(&mut out, &format!("relation\t{r}"), model.emb.relation(r));
    }
    for (label, m) in [
        ("filter", &model.conve.filter),
        ("projection", &model.conve.projection),
        ("w1", &model.attn.w1),
        ("w2", &model.attn.w2),
    ] {
        for i in 0..m.rows() {
            push_row(&mut out, &format!("{label}\t{i}"), m.row(i));
        }
    }
    push_row(&mut out, "p", &model.attn.p);
    push_row(&mut out, "q", &model.attn.q);
    out.push_str("END\n");
    out
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, model_to_string(model))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    parse_model(&path.display().to_string(), &fs::read_to_string(path)?)
}

pub fn parse_model<T: Scalar>(name: &str, text: &str) -> Result<Model<T>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    match lines.next() {
        Some((_, EMB_HEADER)) => {}
        other => {
            return Err(Error::Version(format!(
                "{name}: expected `{EMB_HEADER}`, got `{}`",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let mut g = None;
    let mut leak = None;
    let mut entities: Vec<(EntityId, Vec<T>)> = Vec::new();
    let mut relations: Vec<Option<Vec<T>>> = vec![None; RelationKind::ALL.len()];
    let mut rows: [Vec<Vec<T>>; 4] = Default::default();
    let mut p = None;
    let mut q = None;
    let mut ended = false;

    for (lineno, line) in lines {
        if ended {
            return Err(Error::parse(name, lineno, "content after END"));
        }
        let f: Vec<&str> = line.split('\t').collect();
        let nums = |from: usize| -> Result<Vec<T>> {
            f[from..]
                .iter()
                .map(|s| parse_scalar(s).ok_or_else(|| Error::parse(name, lineno, format!("bad number `{s}`"))))
                .collect()
        };
        match f[0] {
            "geometry" => {
                let v: Vec<usize> = f[1..]
                    .iter()
                    .map(|s| s.parse().map_err(|_| Error::parse(name, lineno, "bad geometry")))
                    .collect::<Result<_>>()?;
                if v.len() != 6 {
                    return Err(Error::parse(name, lineno, "geometry needs 6 fields"));
                }
                let geo = ConvEGeometry {
                    d: v[0],
                    rows: v[1],
                    cols: v[2],
                    filters: v[3],
                    kernel_h: v[4],
                    kernel_w: v[5],
                };
                geo.validate()?;
                g = Some(geo);
            }
            "leak" => leak = nums(1)?.first().copied(),
            "entity" if f.len() >= 2 => entities.push((EntityId::new(f[1]), nums(2)?)),
            "relation" if f.len() >= 2 => {
                let r: RelationKind = f[1].parse().map_err(|e: Error| Error::parse(name, lineno, e.to_string()))?;
                relations[r.index()] = Some(nums(2)?);
            }
            tag @ ("filter" | "projection" | "w1" | "w2") if f.len() >= 2 => {
                let slot = ["filter", "projection", "w1", "w2"].iter().position(|x| *x == tag).unwrap_or(0);
                let idx: usize = f[1].parse().map_err(|_| Error::parse(name, lineno, "bad row index"))?;
                if idx != rows[slot].len() {
                    return Err(Error::parse(name, lineno, format!("{tag} rows out of order")));
                }
                rows[slot].push(nums(2)?);
            }
            "p" => p = Some(nums(1)?),
            "q" => q = Some(nums(1)?),
            "END" => ended = true,
            other => return Err(Error::parse(name, lineno, format!("unknown record `{other}`"))),
        }
    }
    if !ended {
        return Err(Error::Version(format!("{name}: truncated (no END)")));
    }
    let g = g.ok_or_else(|| Error::Version(format!("{name}: missing geometry")))?;
    let d = g.d;
    let check = |v: &Vec<T>, what: &str| {
        if v.len() == d {
            Ok(())
        } else {
            Err(Error::Version(format!("{name}: {what} has {} values, expected {d}", v.len())))
        }
    };
    for (id, v) in &entities {
        check(v, &format!("entity {id}"))?;
    }
    let relations: Vec<Vec<T>> = relations
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let r = r.ok_or_else(|| Error::Version(format!("{name}: missing relation {}", RelationKind::ALL[i])))?;
            check(&r, "relation")?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let matrix = |rows: Vec<Vec<T>>, r: usize, c: usize, what: &str| -> Result<Matrix<T>> {
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            return Err(Error::Version(format!("{name}: {what} is not {r}x{c}")));
        }
        Ok(Matrix::from_vec(r, c, rows.concat()).expect("shape checked"))
    };
    let [filter, projection, w1, w2] = rows;
    let p = p.ok_or_else(|| Error::Version(format!("{name}: missing p")))?;
    let q = q.ok_or_else(|| Error::Version(format!("{name}: missing q")))?;
    check(&p, "p")?;
    check(&q, "q")?;
    Ok(Model {
        emb: EmbeddingTable::from_parts(d, entities, relations),
        conve: ConvEParams {
            geometry: g,
            filter: matrix(filter, g.filters, g.kernel_h * g.kernel_w, "filter")?,
            projection: matrix(projection, d, g.flat(), "projection")?,
        },
        attn: AttentionParams {
            w1: matrix(w1, d, 2 * d, "w1")?,
            w2: matrix(w2, d, 2 * d, "w2")?,
            p,
            q,
            leak: leak.ok_or_else(|| Error::Version(format!("{name}: missing leak")))?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_roundtrip_is_exact() {
        let kg = KnowledgeGraph::with_reserved_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::<f64>::init(&kg, ConvEGeometry::compact(), &mut rng).unwrap();
        let text = model_to_string(&model);
        let back: Model<f64> = parse_model("m", &text).unwrap();
        assert_eq!(model_to_string(&back), text);
        for id in kg.entity_ids() {
            assert_eq!(back.emb.entity(id), model.emb.entity(id));
        }
        assert_eq!(back.conve, model.conve);
        assert_eq!(back.attn, model.attn);
    }

    #[test]
    fn truncation_is_detected() {
        let kg = KnowledgeGraph::with_reserved_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::<f32>::init(&kg, ConvEGeometry::compact(), &mut rng).unwrap();
        let text = model_to_string(&model);
        let cut = &text[..text.len() - 10];
        assert!(parse_model::<f32>("m", cut).is_err());
        assert!(parse_model::<f32>("m", "KGLOOP-EMB v2\n").is_err());
    }
}
