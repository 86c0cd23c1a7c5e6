//! Dataset ingestion, train/test splits and checkpoint serialization.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, SideInfo, SideInfoSet, TuckerModel};
use crate::tensor::{DenseMatrix, DenseTensor, Shape, SparseTensor};

pub const SECONDS_PER_WEEK: i64 = 604_800;
const CHECKPOINT_VERSION: &str = "stream-tucker-checkpoint v1";

/// A full tensor coupled with one side matrix per mode.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tensor: SparseTensor,
    pub side: SideInfoSet,
    pub name: String,
}

impl Dataset {
    pub fn new(tensor: SparseTensor, side: SideInfoSet, name: impl Into<String>) -> Result<Self> {
        for (i, s) in side.modes().iter().enumerate() {
            if s.rows() != tensor.shape().dims()[i] {
                return Err(Error::ShapeMismatch(format!(
                    "mode {i}: side rows {} vs tensor dim {}",
                    s.rows(),
                    tensor.shape().dims()[i]
                )));
            }
        }
        Ok(Dataset {
            tensor,
            side,
            name: name.into(),
        })
    }
}

/// Disjoint train/test partition of the observations.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SparseTensor,
    pub test: SparseTensor,
    pub missing_pct: f64,
    pub seed: u64,
}

/// Parses whitespace-separated `i1 i2 ... iN value` lines (0-based indices;
/// `#` starts a comment).
pub fn load_tensor(path: &Path, shape: Shape) -> Result<SparseTensor> {
    let text = fs::read_to_string(path)?;
    let order = shape.order();
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != order + 1 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {} fields, found {}", order + 1, fields.len()),
            ));
        }
        let mut index = Vec::with_capacity(order);
        for f in &fields[..order] {
            index
                .push(f.parse::<usize>().map_err(|e| {
                    Error::parse(path, lineno + 1, format!("bad index '{f}': {e}"))
                })?);
        }
        if !shape.contains(&index) {
            return Err(Error::IndexOutOfBounds {
                index,
                dims: shape.dims().to_vec(),
            });
        }
        let value = fields[order]
            .parse::<f64>()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad value: {e}")))?;
        entries.push((index, value));
    }
    SparseTensor::new(shape, entries)
}

/// Loads a side matrix: MatrixMarket coordinate format for sparse,
/// headerless CSV for dense. The `identity:<n>` spec token is handled by
/// [`parse_side_spec`], not here.
pub fn load_side_info(path: &Path) -> Result<SideInfo> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    if first.starts_with("%%MatrixMarket") {
        load_matrix_market(path, &text)
    } else {
        load_dense_csv(path, &text)
    }
}

fn load_matrix_market(path: &Path, text: &str) -> Result<SideInfo> {
    let header = text.lines().next().unwrap_or("");
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() < 4 || tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported MatrixMarket header '{header}'"),
        ));
    }
    let mut lines = text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let (szline_no, szline) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing size line"))?;
    let sz: Vec<&str> = szline.split_whitespace().collect();
    if sz.len() != 3 {
        return Err(Error::parse(path, szline_no + 1, "bad size line"));
    }
    let rows: usize = sz[0]
        .parse()
        .map_err(|e| Error::parse(path, szline_no + 1, format!("bad rows: {e}")))?;
    let cols: usize = sz[1]
        .parse()
        .map_err(|e| Error::parse(path, szline_no + 1, format!("bad cols: {e}")))?;
    let nnz: usize = sz[2]
        .parse()
        .map_err(|e| Error::parse(path, szline_no + 1, format!("bad nnz: {e}")))?;
    let mut entries = Vec::with_capacity(nnz);
    for (lineno, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 2 || f.len() > 3 {
            return Err(Error::parse(path, lineno + 1, "expected 'row col [value]'"));
        }
        let r: usize = f[0]
            .parse()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad row: {e}")))?;
        let c: usize = f[1]
            .parse()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad col: {e}")))?;
        if r == 0 || c == 0 || r > rows || c > cols {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("1-based index ({r},{c}) outside {rows}x{cols}"),
            ));
        }
        let v: f64 = if f.len() == 3 {
            f[2].parse()
                .map_err(|e| Error::parse(path, lineno + 1, format!("bad value: {e}")))?
        } else {
            1.0
        };
        entries.push((r - 1, c - 1, v));
    }
    if entries.len() != nnz {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("declared {} entries, found {}", nnz, entries.len()),
        });
    }
    SideInfo::sparse(rows, cols, entries)
}

fn load_dense_csv(path: &Path, text: &str) -> Result<SideInfo> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {c} columns, found {}", fields.len()),
                ));
            }
            _ => {}
        }
        for f in fields {
            values
                .push(f.parse::<f64>().map_err(|e| {
                    Error::parse(path, lineno + 1, format!("bad value '{f}': {e}"))
                })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(path, 1, "empty CSV"))?;
    Ok(SideInfo::Dense(DenseMatrix::new(rows, cols, values)?))
}

/// Resolves a per-mode side-info spec: `identity:<n>` or a file path.
pub fn parse_side_spec(spec: &str) -> Result<SideInfo> {
    if let Some(n) = spec.strip_prefix("identity:") {
        let n: usize = n
            .parse()
            .map_err(|e| Error::Config(format!("bad identity size '{n}': {e}")))?;
        Ok(SideInfo::Identity(n))
    } else {
        load_side_info(Path::new(spec))
    }
}

/// Ingests MovieLens 100K `u.data` (tab-separated user/item/rating/timestamp)
/// into a user x item x week tensor. User and item ids are compacted to
/// 0-based indices preserving their numeric order; weeks are fixed
/// 604800-second buckets counted from the earliest timestamp, shifted by
/// `week_offset` seconds.
pub fn movielens_ingest(ratings_path: &Path, week_offset: i64) -> Result<SparseTensor> {
    let text = fs::read_to_string(ratings_path)?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::parse(
                ratings_path,
                lineno + 1,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        let user: u64 = f[0]
            .parse()
            .map_err(|e| Error::parse(ratings_path, lineno + 1, format!("bad user: {e}")))?;
        let item: u64 = f[1]
            .parse()
            .map_err(|e| Error::parse(ratings_path, lineno + 1, format!("bad item: {e}")))?;
        let rating: f64 = f[2]
            .parse()
            .map_err(|e| Error::parse(ratings_path, lineno + 1, format!("bad rating: {e}")))?;
        let ts: i64 = f[3]
            .parse()
            .map_err(|e| Error::parse(ratings_path, lineno + 1, format!("bad timestamp: {e}")))?;
        raw.push((user, item, rating, ts));
    }
    if raw.is_empty() {
        return Err(Error::parse(ratings_path, 1, "empty ratings file"));
    }

    let mut users: Vec<u64> = raw.iter().map(|r| r.0).collect();
    users.sort_unstable();
    users.dedup();
    let mut items: Vec<u64> = raw.iter().map(|r| r.1).collect();
    items.sort_unstable();
    items.dedup();
    let user_index: BTreeMap<u64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_index: BTreeMap<u64, usize> = items.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let min_ts = raw.iter().map(|r| r.3).min().unwrap();

    let mut max_week = 0usize;
    let mut entries = Vec::with_capacity(raw.len());
    for (user, item, rating, ts) in raw {
        let week = ((ts - min_ts + week_offset) / SECONDS_PER_WEEK).max(0) as usize;
        max_week = max_week.max(week);
        entries.push((vec![user_index[&user], item_index[&item], week], rating));
    }
    let shape = Shape::new(vec![users.len(), items.len(), max_week + 1])?;
    SparseTensor::new(shape, entries)
}

/// Parses MovieLens 100K `u.item` into an item x genre 0/1 matrix. The last
/// 19 pipe-separated fields of each line are the genre flags; rows follow
/// the numeric item-id order, matching [`movielens_ingest`] compaction.
pub fn movielens_item_genres(items_path: &Path) -> Result<SideInfo> {
    const N_GENRES: usize = 19;
    let bytes = fs::read(items_path)?;
    // u.item is latin-1 encoded; only the flag fields matter here
    let text: String = bytes.iter().map(|&b| b as char).collect();
    let mut rows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < N_GENRES + 1 {
            return Err(Error::parse(
                items_path,
                lineno + 1,
                format!(
                    "expected at least {} fields, found {}",
                    N_GENRES + 1,
                    fields.len()
                ),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|e| Error::parse(items_path, lineno + 1, format!("bad item id: {e}")))?;
        let flags: Result<Vec<f64>> = fields[fields.len() - N_GENRES..]
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::parse(items_path, lineno + 1, format!("bad genre flag '{f}': {e}"))
                })
            })
            .collect();
        rows.insert(id, flags?);
    }
    if rows.is_empty() {
        return Err(Error::parse(items_path, 1, "empty item file"));
    }
    let n = rows.len();
    let mut values = Vec::with_capacity(n * N_GENRES);
    for flags in rows.values() {
        values.extend_from_slice(flags);
    }
    Ok(SideInfo::Dense(DenseMatrix::new(n, N_GENRES, values)?))
}

/// Uniform random train/test partition via a seeded shuffle.
pub fn make_split(tensor: &SparseTensor, missing_pct: f64, seed: u64) -> Result<Split> {
    if !(missing_pct > 0.0 && missing_pct < 1.0) {
        return Err(Error::InvalidParam(format!(
            "missing_pct must be in (0,1), got {missing_pct}"
        )));
    }
    let n = tensor.nnz();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = ((n as f64) * missing_pct).round() as usize;
    let entries = tensor.entries();
    let test_entries: Vec<_> = order[..n_test]
        .iter()
        .map(|&i| entries[i].clone())
        .collect();
    let train_entries: Vec<_> = order[n_test..]
        .iter()
        .map(|&i| entries[i].clone())
        .collect();
    Ok(Split {
        train: SparseTensor::new(tensor.shape().clone(), train_entries)?,
        test: SparseTensor::new(tensor.shape().clone(), test_entries)?,
        missing_pct,
        seed,
    })
}

fn write_floats(out: &mut String, values: &[f64]) {
    for v in values {
        // 17 significant digits round-trips f64 exactly
        out.push_str(&format!("{v:.16e}\n"));
    }
}

/// Writes a versioned plain-text checkpoint; floats use 17 significant
/// digits so the round trip is bit-exact.
pub fn checkpoint_save(
    path: &Path,
    model: &TuckerModel,
    hp: &Hyperparams,
    step: usize,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_VERSION);
    out.push('\n');
    out.push_str(&format!("step {step}\n"));
    let ranks: Vec<String> = model.ranks().iter().map(|r| r.to_string()).collect();
    out.push_str(&format!("ranks {}\n", ranks.join(" ")));
    let rows: Vec<String> = model.factors.iter().map(|f| f.rows().to_string()).collect();
    out.push_str(&format!("factor_rows {}\n", rows.join(" ")));
    let lambdas: Vec<String> = hp.lambda_i.iter().map(|l| format!("{l:.16e}")).collect();
    out.push_str(&format!(
        "hyperparams lambda_g {:.16e} gamma {:.16e} k {} nonnegative {} seed {}\n",
        hp.lambda_g, hp.gamma, hp.inner_steps, hp.nonnegative, hp.seed
    ));
    out.push_str(&format!("lambda_i {}\n", lambdas.join(" ")));
    out.push_str(&format!("core {}\n", model.core.values().len()));
    write_floats(&mut out, model.core.values());
    for (i, f) in model.factors.iter().enumerate() {
        out.push_str(&format!("factor {i} {} {}\n", f.rows(), f.cols()));
        write_floats(&mut out, f.values());
    }
    out.push_str("end\n");
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

struct CheckpointReader<'a> {
    path: &'a Path,
    lines: std::str::Lines<'a>,
}

impl<'a> CheckpointReader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.lines.next().ok_or_else(|| Error::Corrupt {
            path: self.path.to_path_buf(),
            msg: "unexpected end of file".into(),
        })
    }

    fn expect_tag(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(tag) {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                msg: format!("expected '{tag}' line, found '{line}'"),
            });
        }
        Ok(fields.collect())
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let line = self.next()?;
            out.push(line.trim().parse::<f64>().map_err(|e| Error::Corrupt {
                path: self.path.to_path_buf(),
                msg: format!("bad float '{line}': {e}"),
            })?);
        }
        Ok(out)
    }
}

/// Loads a checkpoint written by [`checkpoint_save`].
pub fn checkpoint_load(path: &Path) -> Result<(TuckerModel, Hyperparams, usize)> {
    let text = fs::read_to_string(path)?;
    let mut reader = CheckpointReader {
        path,
        lines: text.lines(),
    };
    let version = reader.next()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION.into(),
            found: version.into(),
        });
    }
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| corrupt(format!("bad integer '{s}': {e}")))
    };
    let parse_f64 = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| corrupt(format!("bad float '{s}': {e}")))
    };

    let step = parse_usize(
        reader
            .expect_tag("step")?
            .first()
            .ok_or_else(|| corrupt("missing step".into()))?,
    )?;
    let ranks: Vec<usize> = reader
        .expect_tag("ranks")?
        .iter()
        .map(|s| parse_usize(s))
        .collect::<Result<_>>()?;
    let factor_rows: Vec<usize> = reader
        .expect_tag("factor_rows")?
        .iter()
        .map(|s| parse_usize(s))
        .collect::<Result<_>>()?;
    let hp_fields = reader.expect_tag("hyperparams")?;
    if hp_fields.len() != 10 {
        return Err(corrupt("malformed hyperparams line".into()));
    }
    let lambda_i: Vec<f64> = reader
        .expect_tag("lambda_i")?
        .iter()
        .map(|s| parse_f64(s))
        .collect::<Result<_>>()?;
    let hp = Hyperparams {
        lambda_g: parse_f64(hp_fields[1])?,
        gamma: parse_f64(hp_fields[3])?,
        inner_steps: parse_usize(hp_fields[5])?,
        nonnegative: hp_fields[7]
            .parse::<bool>()
            .map_err(|e| corrupt(format!("bad bool: {e}")))?,
        seed: hp_fields[9]
            .parse::<u64>()
            .map_err(|e| corrupt(format!("bad seed: {e}")))?,
        lambda_i,
        ..Hyperparams::default()
    };

    let core_len = parse_usize(
        reader
            .expect_tag("core")?
            .first()
            .ok_or_else(|| corrupt("missing core length".into()))?,
    )?;
    let core_values = reader.floats(core_len)?;
    let core = DenseTensor::new(Shape::new(ranks.clone())?, core_values)?;
    let mut factors = Vec::with_capacity(ranks.len());
    for (i, (&rows, &rank)) in factor_rows.iter().zip(&ranks).enumerate() {
        let fields = reader.expect_tag("factor")?;
        if fields.len() != 3 || parse_usize(fields[0])? != i {
            return Err(corrupt(format!("malformed factor header for mode {i}")));
        }
        let (r, c) = (parse_usize(fields[1])?, parse_usize(fields[2])?);
        if r != rows || c != rank {
            return Err(corrupt(format!(
                "factor {i} declared {r}x{c}, expected {rows}x{rank}"
            )));
        }
        factors.push(DenseMatrix::new(r, c, reader.floats(r * c)?)?);
    }
    if reader.next()? != "end" {
        return Err(corrupt("missing end marker".into()));
    }
    Ok((TuckerModel::new(core, factors)?, hp, step))
}
