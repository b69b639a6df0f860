//! Plain-text file formats.
//!
//! Every format is comma-separated UTF-8 with LF line endings and no quoting.
//! Feature values are written in Rust's shortest round-trip notation; matrix,
//! encoder and latent entries use 17 significant digits. Either way a
//! write/read cycle reproduces every `f64` bit for bit.
//!
//! | format          | first line                        | body                              |
//! |-----------------|-----------------------------------|-----------------------------------|
//! | features        | `id,camera,illum,zrot,f0,...`     | one sample per line               |
//! | classifier      | `label,c0,...`                    | one centroid per line             |
//! | matrix          | `a,b,d`                           | `d` rows                          |
//! | encoder         | `kind,condition,d_in,d_out`       | mean line, then `d_out` rows of W |
//! | latent          | `T_es,d`                          | `v_T`, then `eps_{T_es}..eps_1`   |
//! | schedule        | `T,beta_start,beta_end`           |                                   |
//! | distances       | `Q,G`                             | `Q` rows                          |
//! | split           | `protocol,seed`                   | `query,...` and `gallery,...`     |
//! | cmc             | `k,accuracy`                      | one rank per line                 |
//!
//! Banks and encoder lists are concatenations of single blocks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::cyclediff::{LatentCode, NoiseSchedule};
use crate::encoders::{Encoder, EncoderKind};
use crate::error::{Error, Result};
use crate::evalproto::{Accuracy, CmcCurve, Protocol, SplitSpec};
use crate::illum::{CentroidClassifier, Classifier};
use crate::metric::{ConditionPair, MahalanobisMatrix, MetricBank};
use crate::types::{DistanceMatrix, FeatureVector, Sample, SampleSet};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `text`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

/// Line cursor that tags errors with the source name and a 1-based line number.
struct Lines<'a> {
    source: &'a str,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, source: &'a str) -> Self {
        Self {
            source,
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn error(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.to_string(),
            line: self.line,
            detail: detail.into(),
        }
    }

    fn next_line(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            if !l.trim().is_empty() {
                return Some(l);
            }
        }
        None
    }

    fn has_more(&self) -> bool {
        self.inner.clone().any(|(_, l)| !l.trim().is_empty())
    }

    fn expect_line(&mut self, what: &str) -> Result<&'a str> {
        match self.next_line() {
            Some(l) => Ok(l),
            None => {
                self.line += 1;
                Err(self.error(format!("missing {what}")))
            }
        }
    }

    fn parse<T: FromStr>(&self, field: &str, what: &str) -> Result<T> {
        field
            .trim()
            .parse()
            .map_err(|_| self.error(format!("bad {what} `{}`", field.trim())))
    }

    fn floats(&self, fields: &[&str]) -> Result<Vec<f64>> {
        fields.iter().map(|f| self.parse::<f64>(f, "number")).collect()
    }

    fn fields(&mut self, what: &str, count: usize) -> Result<Vec<&'a str>> {
        let line = self.expect_line(what)?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != count {
            return Err(self.error(format!("{what}: expected {count} fields, found {}", fields.len())));
        }
        Ok(fields)
    }

    fn float_row(&mut self, what: &str, count: usize) -> Result<Vec<f64>> {
        let fields = self.fields(what, count)?;
        self.floats(&fields)
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_line() {
            None => Ok(()),
            Some(_) => Err(self.error("unexpected trailing content")),
        }
    }
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>, precise: bool) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if precise {
            let _ = write!(out, "{v:.16e}");
        } else {
            let _ = write!(out, "{v}");
        }
    }
    out.push('\n');
}

pub fn format_features(set: &SampleSet) -> String {
    let d = set.dimension();
    let mut out = String::from("id,camera,illum,zrot");
    for i in 0..d {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for s in set {
        let _ = write!(out, "{},{},", s.identity, s.camera);
        if let Some(l) = s.illumination {
            let _ = write!(out, "{l}");
        }
        out.push(',');
        if let Some(z) = s.zrotation {
            let _ = write!(out, "{z}");
        }
        out.push(',');
        push_row(&mut out, s.features.as_slice().iter().copied(), false);
    }
    out
}

pub fn parse_features(text: &str, source: &str) -> Result<SampleSet> {
    let mut lines = Lines::new(text, source);
    let header: Vec<&str> = lines.expect_line("header")?.split(',').collect();
    if header.len() < 5 || header[..4] != ["id", "camera", "illum", "zrot"] {
        return Err(lines.error("header must start with id,camera,illum,zrot and name at least one feature"));
    }
    for (i, h) in header[4..].iter().enumerate() {
        if *h != format!("f{i}") {
            return Err(lines.error(format!("feature column {i} is named `{h}`")));
        }
    }
    let d = header.len() - 4;
    let mut samples = Vec::new();
    while let Some(line) = lines.next_line() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 4 {
            return Err(lines.error(format!("expected {} fields, found {}", d + 4, fields.len())));
        }
        let values = lines.floats(&fields[4..])?;
        let features = FeatureVector::new(values).map_err(|e| lines.error(e.to_string()))?;
        let mut s = Sample::new(lines.parse(fields[0], "id")?, lines.parse(fields[1], "camera")?, features);
        if !fields[2].trim().is_empty() {
            s.illumination = Some(lines.parse(fields[2], "illumination label")?);
        }
        if !fields[3].trim().is_empty() {
            s.zrotation = Some(lines.parse(fields[3], "z-rotation label")?);
        }
        samples.push(s);
    }
    SampleSet::validated(d, samples)
}

pub fn format_classifier(c: &CentroidClassifier) -> String {
    let mut out = String::from("label");
    for i in 0..c.dimension() {
        let _ = write!(out, ",c{i}");
    }
    out.push('\n');
    for (label, centroid) in c.labels().iter().zip(c.centroids()) {
        let _ = write!(out, "{label},");
        push_row(&mut out, centroid.as_slice().iter().copied(), true);
    }
    out
}

pub fn parse_classifier(text: &str, source: &str) -> Result<CentroidClassifier> {
    let mut lines = Lines::new(text, source);
    let header: Vec<&str> = lines.expect_line("header")?.split(',').collect();
    if header.len() < 2 || header[0] != "label" {
        return Err(lines.error("header must be label,c0,..."));
    }
    let d = header.len() - 1;
    let mut entries = Vec::new();
    while let Some(line) = lines.next_line() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(lines.error(format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        let label: u16 = lines.parse(fields[0], "label")?;
        let centroid = FeatureVector::new(lines.floats(&fields[1..])?).map_err(|e| lines.error(e.to_string()))?;
        entries.push((label, centroid));
    }
    CentroidClassifier::new(entries)
}

fn push_matrix_rows(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        push_row(out, m.row(r).iter().copied(), true);
    }
}

pub fn format_matrix(m: &MahalanobisMatrix) -> String {
    let mut out = format!("{},{},{}\n", m.pair().a(), m.pair().b(), m.dim());
    push_matrix_rows(&mut out, m.entries());
    out
}

fn read_matrix_block(lines: &mut Lines<'_>) -> Result<MahalanobisMatrix> {
    let head = lines.fields("matrix header", 3)?;
    let pair = ConditionPair::new(lines.parse(head[0], "condition")?, lines.parse(head[1], "condition")?);
    let d: usize = lines.parse(head[2], "dimension")?;
    let mut values = Vec::with_capacity(d * d);
    for _ in 0..d {
        values.extend(lines.float_row("matrix row", d)?);
    }
    MahalanobisMatrix::new(pair, DMatrix::from_row_slice(d, d, &values)).map_err(|e| lines.error(e.to_string()))
}

pub fn parse_matrix(text: &str, source: &str) -> Result<MahalanobisMatrix> {
    let mut lines = Lines::new(text, source);
    let m = read_matrix_block(&mut lines)?;
    lines.finish()?;
    Ok(m)
}

pub fn format_bank(bank: &MetricBank) -> String {
    bank.matrices().map(format_matrix).collect()
}

/// Reads concatenated matrix blocks; the condition count is the largest label seen.
pub fn parse_bank(text: &str, source: &str) -> Result<MetricBank> {
    let mut lines = Lines::new(text, source);
    let mut matrices = Vec::new();
    loop {
        if !lines.has_more() {
            break;
        }
        matrices.push(read_matrix_block(&mut lines)?);
    }
    let n = matrices.iter().map(|m| m.pair().b()).max().unwrap_or(0) as usize;
    MetricBank::new(n, matrices)
}

pub fn format_encoder(e: &Encoder) -> String {
    let mut out = format!("{},{},{},{}\n", e.kind(), e.condition(), e.input_dim(), e.output_dim());
    push_row(&mut out, e.mean().iter().copied(), true);
    push_matrix_rows(&mut out, e.weights());
    out
}

fn read_encoder_block(lines: &mut Lines<'_>) -> Result<Encoder> {
    let head = lines.fields("encoder header", 4)?;
    let kind: EncoderKind = head[0].trim().parse().map_err(|e: Error| lines.error(e.to_string()))?;
    let condition: u16 = lines.parse(head[1], "condition")?;
    let d_in: usize = lines.parse(head[2], "input dimension")?;
    let d_out: usize = lines.parse(head[3], "output dimension")?;
    let mean = lines.float_row("mean", d_in)?;
    let mut w = Vec::with_capacity(d_in * d_out);
    for _ in 0..d_out {
        w.extend(lines.float_row("weight row", d_in)?);
    }
    Encoder::from_parts(kind, condition, mean, DMatrix::from_row_slice(d_out, d_in, &w))
        .map_err(|e| lines.error(e.to_string()))
}

pub fn parse_encoder(text: &str, source: &str) -> Result<Encoder> {
    let mut lines = Lines::new(text, source);
    let e = read_encoder_block(&mut lines)?;
    lines.finish()?;
    Ok(e)
}

pub fn format_encoders(encoders: &[Encoder]) -> String {
    encoders.iter().map(format_encoder).collect()
}

pub fn parse_encoders(text: &str, source: &str) -> Result<Vec<Encoder>> {
    let mut lines = Lines::new(text, source);
    let mut out = Vec::new();
    loop {
        if !lines.has_more() {
            return Ok(out);
        }
        out.push(read_encoder_block(&mut lines)?);
    }
}

pub fn format_latent(z: &LatentCode) -> String {
    let mut out = format!("{},{}\n", z.steps(), z.dim());
    push_row(&mut out, z.terminal.iter().copied(), true);
    for r in &z.residuals {
        push_row(&mut out, r.iter().copied(), true);
    }
    out
}

pub fn parse_latent(text: &str, source: &str) -> Result<LatentCode> {
    let mut lines = Lines::new(text, source);
    let head = lines.fields("latent header", 2)?;
    let steps: usize = lines.parse(head[0], "step count")?;
    let d: usize = lines.parse(head[1], "dimension")?;
    let terminal = lines.float_row("terminal vector", d)?;
    let residuals = (0..steps)
        .map(|_| lines.float_row("residual", d))
        .collect::<Result<Vec<_>>>()?;
    lines.finish()?;
    LatentCode::new(terminal, residuals).map_err(|e| lines.error(e.to_string()))
}

pub fn format_schedule(s: &NoiseSchedule) -> String {
    format!("{},{:.16e},{:.16e}\n", s.steps(), s.beta_start(), s.beta_end())
}

pub fn parse_schedule(text: &str, source: &str) -> Result<NoiseSchedule> {
    let mut lines = Lines::new(text, source);
    let f = lines.fields("schedule", 3)?;
    let steps: usize = lines.parse(f[0], "step count")?;
    let (b0, b1): (f64, f64) = (lines.parse(f[1], "beta")?, lines.parse(f[2], "beta")?);
    lines.finish()?;
    NoiseSchedule::linear(steps, b0, b1).map_err(|e| lines.error(e.to_string()))
}

pub fn format_distances(m: &DistanceMatrix) -> String {
    let mut out = format!("{},{}\n", m.rows(), m.cols());
    for q in 0..m.rows() {
        push_row(&mut out, m.row(q).iter().copied(), true);
    }
    out
}

pub fn parse_distances(text: &str, source: &str) -> Result<DistanceMatrix> {
    let mut lines = Lines::new(text, source);
    let head = lines.fields("distance header", 2)?;
    let rows: usize = lines.parse(head[0], "row count")?;
    let cols: usize = lines.parse(head[1], "column count")?;
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        entries.extend(lines.float_row("distance row", cols)?);
    }
    lines.finish()?;
    DistanceMatrix::new(rows, cols, entries).map_err(|e| lines.error(e.to_string()))
}

fn push_indices(out: &mut String, tag: &str, indices: &[usize]) {
    out.push_str(tag);
    for i in indices {
        let _ = write!(out, ",{i}");
    }
    out.push('\n');
}

pub fn format_split(split: &SplitSpec) -> String {
    let mut out = format!("{},{}\n", split.protocol, split.seed);
    push_indices(&mut out, "query", &split.query);
    push_indices(&mut out, "gallery", &split.gallery);
    out
}

pub fn parse_split(text: &str, source: &str) -> Result<SplitSpec> {
    let mut lines = Lines::new(text, source);
    let head = lines.fields("split header", 2)?;
    let protocol: Protocol = head[0].trim().parse().map_err(|e: Error| lines.error(e.to_string()))?;
    let seed: u64 = lines.parse(head[1], "seed")?;
    let mut list = |tag: &str| -> Result<Vec<usize>> {
        let line = lines.expect_line(tag)?;
        let mut fields = line.split(',');
        if fields.next().map(str::trim) != Some(tag) {
            return Err(lines.error(format!("expected `{tag}` list")));
        }
        fields.map(|f| lines.parse(f, "index")).collect()
    };
    let query = list("query")?;
    let gallery = list("gallery")?;
    lines.finish()?;
    Ok(SplitSpec {
        query,
        gallery,
        seed,
        protocol,
    })
}

/// One `k,accuracy` line per rank, accuracy as a fraction in `[0, 1]`.
pub fn format_cmc(curve: &CmcCurve) -> String {
    curve
        .points
        .iter()
        .map(|(k, a)| format!("{k},{}\n", a.fraction()))
        .collect()
}

/// Reads `k,accuracy` lines; hit counts are not stored, so totals come back as zero.
pub fn parse_cmc(text: &str, source: &str) -> Result<BTreeMap<usize, f64>> {
    let mut lines = Lines::new(text, source);
    let mut out = BTreeMap::new();
    while let Some(line) = lines.next_line() {
        let (k, a) = line.split_once(',').ok_or_else(|| lines.error("expected k,accuracy"))?;
        out.insert(lines.parse(k, "rank")?, lines.parse(a, "accuracy")?);
    }
    Ok(out)
}

/// Parses `key = value` lines; `#` starts a comment. Later keys override earlier ones.
pub fn parse_key_values(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            detail: format!("expected key = value, found `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn format_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Keeps only the accuracy fractions of a curve.
pub fn cmc_fractions(curve: &CmcCurve) -> BTreeMap<usize, f64> {
    curve.points.iter().map(|(k, a): (&usize, &Accuracy)| (*k, a.fraction())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> SampleSet {
        SampleSet::new(
            3,
            vec![
                Sample::new(4, 1, FeatureVector::from(vec![0.1, -2.5e-12, 3.0])).with_illumination(7).with_zrotation(0),
                Sample::new(5, 0, FeatureVector::from(vec![1.0 / 3.0, 1e300, -0.0])),
            ],
        )
    }

    #[test]
    fn feature_header_and_unknown_labels() {
        let text = format_features(&sample_set());
        assert!(text.starts_with("id,camera,illum,zrot,f0,f1,f2\n"));
        assert!(text.contains("\n5,0,,,"));
        assert_eq!(parse_features(&text, "mem").unwrap(), sample_set());
    }

    #[test]
    fn feature_errors_carry_line_numbers() {
        let text = "id,camera,illum,zrot,f0\n1,0,,,0.5\n2,0,,,abc\n";
        match parse_features(text, "x.csv") {
            Err(Error::Parse { path, line, .. }) => assert_eq!((path.as_str(), line), ("x.csv", 3)),
            other => panic!("{other:?}"),
        }
        assert!(parse_features("id,camera,illum,zrot,f0\n1,0,9,,0.5\n", "x").is_err());
        assert!(parse_features("id,camera,f0\n", "x").is_err());
    }

    #[test]
    fn matrix_and_bank_round_trip() {
        let m = MahalanobisMatrix::new(
            ConditionPair::new(2, 1),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0 / 7.0, 1.0 / 7.0, 0.3]),
        )
        .unwrap();
        let text = format_matrix(&m);
        assert!(text.starts_with("1,2,2\n"));
        assert_eq!(parse_matrix(&text, "m").unwrap(), m);

        let bank = MetricBank::new(
            2,
            vec![
                MahalanobisMatrix::identity(ConditionPair::new(1, 1), 2),
                m,
                MahalanobisMatrix::identity(ConditionPair::new(2, 2), 2),
            ],
        )
        .unwrap();
        let back = parse_bank(&format_bank(&bank), "b").unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.get(2, 1), bank.get(1, 2));
    }

    #[test]
    fn encoder_schedule_latent_round_trip() {
        let e = Encoder::from_parts(
            EncoderKind::Whitening,
            2,
            vec![0.5, -1.0, 2.0],
            DMatrix::from_row_slice(2, 3, &[1.0, 0.1, 0.0, -0.2, 3.0, 1e-9]),
        )
        .unwrap();
        assert_eq!(parse_encoder(&format_encoder(&e), "e").unwrap(), e);
        let two = vec![Encoder::identity(1, 3), e];
        assert_eq!(parse_encoders(&format_encoders(&two), "e").unwrap(), two);

        let s = NoiseSchedule::linear(40, 1e-4, 0.02).unwrap();
        assert_eq!(parse_schedule(&format_schedule(&s), "s").unwrap(), s);

        let z = LatentCode::new(vec![0.25, -1.0], vec![vec![1.0, 2.0], vec![0.1, 1e-20]]).unwrap();
        assert_eq!(parse_latent(&format_latent(&z), "z").unwrap(), z);
        assert!(parse_latent("3,2\n0,0\n1,1\n", "z").is_err());
    }

    #[test]
    fn split_distances_cmc_round_trip() {
        let split = SplitSpec {
            query: vec![3, 1],
            gallery: vec![0, 2, 4],
            seed: 9,
            protocol: Protocol::Generic { identity_fraction: 0.5 },
        };
        assert_eq!(parse_split(&format_split(&split), "s").unwrap(), split);

        let d = DistanceMatrix::new(2, 2, vec![0.0, 1.5, 1.0 / 3.0, 7.0]).unwrap();
        assert_eq!(parse_distances(&format_distances(&d), "d").unwrap(), d);

        let mut points = BTreeMap::new();
        points.insert(1, Accuracy { hits: 16, total: 27 });
        points.insert(5, Accuracy { hits: 27, total: 27 });
        let curve = CmcCurve { points };
        assert_eq!(parse_cmc(&format_cmc(&curve), "c").unwrap(), cmc_fractions(&curve));
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("# run\nseed = 3\n dim=32 # small\n\nseed = 4\n", "cfg").unwrap();
        assert_eq!(kv["seed"], "4");
        assert_eq!(kv["dim"], "32");
        assert_eq!(parse_key_values(&format_key_values(&kv), "cfg").unwrap(), kv);
        assert!(parse_key_values("seed\n", "cfg").is_err());
    }

    proptest! {
        #[test]
        fn features_round_trip_bitwise(
            rows in prop::collection::vec(
                (0u32..1000, 0u32..4, prop::option::of(0u8..8), prop::collection::vec(-1e6f64..1e6, 4)),
                1..20,
            )
        ) {
            let samples: Vec<Sample> = rows
                .into_iter()
                .map(|(id, cam, il, f)| {
                    let mut s = Sample::new(id, cam, FeatureVector::from(f));
                    s.illumination = il;
                    s
                })
                .collect();
            let set = SampleSet::new(4, samples);
            let back = parse_features(&format_features(&set), "p").unwrap();
            for (a, b) in set.iter().zip(back.iter()) {
                prop_assert_eq!(a.identity, b.identity);
                prop_assert_eq!(a.illumination, b.illumination);
                for (x, y) in a.features.as_slice().iter().zip(b.features.as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn matrix_round_trip_bitwise(v in prop::collection::vec(-1e3f64..1e3, 9)) {
            let a = DMatrix::from_row_slice(3, 3, &v);
            let sym = &a * a.transpose();
            let m = MahalanobisMatrix::new(ConditionPair::new(1, 1), sym).unwrap();
            let back = parse_matrix(&format_matrix(&m), "p").unwrap();
            for (x, y) in m.entries().iter().zip(back.entries().iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
