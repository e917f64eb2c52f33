//! File formats: market and heterogeneity inputs, matching CSV, basis
//! families, and the JSON reports emitted by the command-line interface.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::comparative::{ComparativeStaticsReport, WelfareDerivativeBlocks};
use crate::equilibrium::{
    Diagnostics, EquilibriumResult, SolverKind, SplitUtilities, WelfareVector,
};
use crate::error::Error;
use crate::heterogeneity::{HeterogeneitySpec, Side};
use crate::identification::BasisFamily;
use crate::market::{
    validate_market, Matching, RawMarket, SurplusMatrix, TypeSpace, ValidatedMarket,
};

/// Errors from reading or writing artifact files. Domain errors keep their
/// stable codes; everything else is an I/O or parse failure.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Domain(#[from] Error),
}

pub type FileResult<T> = std::result::Result<T, FileError>;

fn io_err(path: &Path, source: std::io::Error) -> FileError {
    FileError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> FileError {
    FileError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Rectangular nested rows into a matrix; mismatched row lengths are a
/// dimension error.
pub fn rows_to_matrix(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>, Error> {
    if rows.is_empty() {
        return Err(Error::DimensionMismatch {
            context,
            expected: 1,
            got: 0,
        });
    }
    let ncols = rows[0].len();
    for r in rows {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch {
                context,
                expected: ncols,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Market file: types, masses, and the surplus matrix (row per x type).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketFile {
    pub x_types: Vec<String>,
    pub y_types: Vec<String>,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl MarketFile {
    pub fn from_parts(market: &ValidatedMarket, phi: &SurplusMatrix) -> Self {
        Self {
            x_types: market.types().x_labels().to_vec(),
            y_types: market.types().y_labels().to_vec(),
            n: market.n().iter().copied().collect(),
            m: market.m().iter().copied().collect(),
            phi: matrix_to_rows(phi.phi()),
        }
    }

    pub fn into_parts(self) -> Result<(ValidatedMarket, SurplusMatrix), Error> {
        let market = validate_market(RawMarket {
            x_types: self.x_types,
            y_types: self.y_types,
            n: self.n,
            m: self.m,
        })?;
        let phi = SurplusMatrix::new(rows_to_matrix(&self.phi, "market phi")?, &market)?;
        Ok((market, phi))
    }
}

pub fn read_market(path: &Path) -> FileResult<(ValidatedMarket, SurplusMatrix)> {
    let file: MarketFile = read_json(path)?;
    Ok(file.into_parts()?)
}

/// Heterogeneity file: closed-form logit or simulated draws. Simulated
/// draws either come from a binary file (one matrix reused for every type
/// of the side) or are generated from a seed by the counter-based stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HetFile {
    Logit {
        scale: f64,
    },
    Simulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        draws_file: Option<String>,
        smoothing: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_draws: Option<usize>,
    },
}

/// Build a heterogeneity spec for one side of a market with `num_types` own
/// types and `num_choices` opposite types. Relative draw paths resolve
/// against the heterogeneity file's directory.
pub fn read_heterogeneity(
    path: &Path,
    side: Side,
    num_types: usize,
    num_choices: usize,
) -> FileResult<HeterogeneitySpec> {
    let file: HetFile = read_json(path)?;
    het_from_file(&file, path, side, num_types, num_choices)
}

pub fn het_from_file(
    file: &HetFile,
    path: &Path,
    side: Side,
    num_types: usize,
    num_choices: usize,
) -> FileResult<HeterogeneitySpec> {
    match file {
        HetFile::Logit { scale } => Ok(HeterogeneitySpec::logit(side, *scale)?),
        HetFile::Simulated {
            draws_file,
            smoothing,
            seed,
            num_draws,
        } => match draws_file {
            Some(rel) => {
                let draws_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                let matrix = read_draws(&draws_path, num_choices)?;
                let draws = vec![matrix; num_types];
                Ok(HeterogeneitySpec::simulated(side, draws, *smoothing)?)
            }
            None => {
                let (seed, num_draws) = match (seed, num_draws) {
                    (Some(s), Some(nd)) => (*s, *nd),
                    _ => {
                        return Err(parse_err(
                            path,
                            "simulated heterogeneity needs either draws_file or both seed and num_draws",
                        ))
                    }
                };
                Ok(HeterogeneitySpec::simulated_gumbel(
                    side,
                    num_types,
                    num_choices,
                    num_draws,
                    seed,
                    *smoothing,
                )?)
            }
        },
    }
}

/// Draws binary format: little-endian 64-bit floats, row-major, S rows by
/// (choices + 1) columns, column 0 holding the singles shock.
pub fn read_draws(path: &Path, num_choices: usize) -> FileResult<DMatrix<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let cols = num_choices + 1;
    if bytes.len() % 8 != 0 || (bytes.len() / 8) % cols != 0 {
        return Err(parse_err(
            path,
            format!(
                "draws file has {} bytes, not a whole number of {cols}-column f64 rows",
                bytes.len()
            ),
        ));
    }
    let rows = bytes.len() / 8 / cols;
    if rows < 2 {
        return Err(parse_err(path, "draws file must hold at least 2 rows"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DMatrix::from_fn(rows, cols, |r, c| values[r * cols + c]))
}

pub fn write_draws(path: &Path, draws: &DMatrix<f64>) -> FileResult<()> {
    let mut bytes = Vec::with_capacity(draws.len() * 8);
    for r in 0..draws.nrows() {
        for c in 0..draws.ncols() {
            bytes.extend_from_slice(&draws[(r, c)].to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Serialize a real with 17 significant digits so parsing recovers the
/// exact bits.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Matching CSV: header `x,y,mu`; singles rows use a literal `0` in the y
/// column (single men) or the x column (single women).
pub fn write_matching_csv(path: &Path, matching: &Matching, types: &TypeSpace) -> FileResult<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let write_row = |writer: &mut csv::Writer<std::fs::File>, x: &str, y: &str, v: f64| {
        writer.write_record([x, y, fmt_real(v).as_str()])
    };
    (|| -> csv::Result<()> {
        writer.write_record(["x", "y", "mu"])?;
        for (x, x_label) in types.x_labels().iter().enumerate() {
            for (y, y_label) in types.y_labels().iter().enumerate() {
                write_row(&mut writer, x_label, y_label, matching.mu[(x, y)])?;
            }
        }
        for (x, x_label) in types.x_labels().iter().enumerate() {
            write_row(&mut writer, x_label, "0", matching.mu_x0[x])?;
        }
        for (y, y_label) in types.y_labels().iter().enumerate() {
            write_row(&mut writer, "0", y_label, matching.mu_0y[y])?;
        }
        writer.flush().map_err(csv::Error::from)
    })()
    .map_err(|e| parse_err(path, e.to_string()))
}

/// Read a matching CSV against a market's type labels. Missing cells are
/// zero mass; unknown labels are parse errors.
pub fn read_matching_csv(path: &Path, market: &ValidatedMarket) -> FileResult<Matching> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "mu"] {
        return Err(parse_err(
            path,
            format!("expected header x,y,mu, got {:?}", headers),
        ));
    }
    let types = market.types();
    let index_of = |labels: &[String], label: &str| labels.iter().position(|l| l == label);
    let (nx, ny) = (market.num_x(), market.num_y());
    let mut mu = DMatrix::zeros(nx, ny);
    let mut mu_x0 = DVector::zeros(nx);
    let mut mu_0y = DVector::zeros(ny);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_err(
                path,
                format!("row {}: expected 3 fields", line + 2),
            ));
        }
        let (x_label, y_label, value) = (&record[0], &record[1], &record[2]);
        let value: f64 = value
            .parse()
            .map_err(|e| parse_err(path, format!("row {}: bad mu: {e}", line + 2)))?;
        match (x_label, y_label) {
            ("0", "0") => {
                return Err(parse_err(
                    path,
                    format!("row {}: both sides single", line + 2),
                ))
            }
            ("0", y_label) => {
                let y = index_of(types.y_labels(), y_label)
                    .ok_or_else(|| parse_err(path, format!("unknown y type '{y_label}'")))?;
                mu_0y[y] = value;
            }
            (x_label, "0") => {
                let x = index_of(types.x_labels(), x_label)
                    .ok_or_else(|| parse_err(path, format!("unknown x type '{x_label}'")))?;
                mu_x0[x] = value;
            }
            (x_label, y_label) => {
                let x = index_of(types.x_labels(), x_label)
                    .ok_or_else(|| parse_err(path, format!("unknown x type '{x_label}'")))?;
                let y = index_of(types.y_labels(), y_label)
                    .ok_or_else(|| parse_err(path, format!("unknown y type '{y_label}'")))?;
                mu[(x, y)] = value;
            }
        }
    }
    Ok(Matching::new(mu, mu_x0, mu_0y))
}

/// Basis file: named basis matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisFile {
    pub basis: Vec<BasisEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisEntry {
    pub name: String,
    pub matrix: Vec<Vec<f64>>,
}

pub fn read_basis(path: &Path) -> FileResult<(BasisFamily, Vec<String>)> {
    let file: BasisFile = read_json(path)?;
    let names = file.basis.iter().map(|b| b.name.clone()).collect();
    let matrices = file
        .basis
        .iter()
        .map(|b| rows_to_matrix(&b.matrix, "basis matrix"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((BasisFamily::new(matrices)?, names))
}

/// Equilibrium output: the split utilities, matching, welfare, and solver
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumFile {
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub mu_x0: Vec<f64>,
    pub mu_0y: Vec<f64>,
    pub u_welfare: Vec<f64>,
    pub v_welfare: Vec<f64>,
    pub diagnostics: DiagnosticsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub iterations: usize,
    pub residual: f64,
    pub solver: String,
}

impl EquilibriumFile {
    pub fn from_result(result: &EquilibriumResult) -> Self {
        Self {
            u: matrix_to_rows(&result.utilities.u),
            v: matrix_to_rows(&result.utilities.v),
            mu: matrix_to_rows(&result.matching.mu),
            mu_x0: result.matching.mu_x0.iter().copied().collect(),
            mu_0y: result.matching.mu_0y.iter().copied().collect(),
            u_welfare: result.welfare.u.iter().copied().collect(),
            v_welfare: result.welfare.v.iter().copied().collect(),
            diagnostics: DiagnosticsFile {
                iterations: result.diagnostics.iterations,
                residual: result.diagnostics.residual,
                solver: result.diagnostics.solver.as_str().to_string(),
            },
        }
    }

    pub fn into_result(self) -> Result<EquilibriumResult, Error> {
        let u = rows_to_matrix(&self.u, "U")?;
        let v = rows_to_matrix(&self.v, "V")?;
        let mu = rows_to_matrix(&self.mu, "mu")?;
        let solver = match self.diagnostics.solver.as_str() {
            "ipfp" => SolverKind::Ipfp,
            _ => SolverKind::Newton,
        };
        Ok(EquilibriumResult {
            utilities: SplitUtilities { u, v },
            matching: Matching::new(
                mu,
                DVector::from_vec(self.mu_x0),
                DVector::from_vec(self.mu_0y),
            ),
            welfare: WelfareVector {
                u: DVector::from_vec(self.u_welfare),
                v: DVector::from_vec(self.v_welfare),
            },
            diagnostics: Diagnostics {
                iterations: self.diagnostics.iterations,
                residual: self.diagnostics.residual,
                solver,
            },
        })
    }
}

/// Shock input for the comparative-statics command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShockFile {
    pub dn: Vec<f64>,
    pub dm: Vec<f64>,
    pub dphi: Vec<Vec<f64>>,
}

/// Comparative-statics report: differential responses plus the welfare
/// derivative blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsReportFile {
    #[serde(rename = "dU")]
    pub du_split: Vec<Vec<f64>>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub dmu: Vec<Vec<f64>>,
    pub dmu_x0: Vec<f64>,
    pub dmu_0y: Vec<f64>,
    pub du_dn: Vec<Vec<f64>>,
    pub du_dm: Vec<Vec<f64>>,
    pub du_dphi: Vec<Vec<f64>>,
    pub dv_dn: Vec<Vec<f64>>,
    pub dv_dm: Vec<Vec<f64>>,
    pub dv_dphi: Vec<Vec<f64>>,
}

impl CsReportFile {
    pub fn from_parts(report: &ComparativeStaticsReport, blocks: &WelfareDerivativeBlocks) -> Self {
        Self {
            du_split: matrix_to_rows(&report.du_split),
            du: report.du.iter().copied().collect(),
            dv: report.dv.iter().copied().collect(),
            dmu: matrix_to_rows(&report.dmu),
            dmu_x0: report.dmu_x0.iter().copied().collect(),
            dmu_0y: report.dmu_0y.iter().copied().collect(),
            du_dn: matrix_to_rows(&blocks.du_dn),
            du_dm: matrix_to_rows(&blocks.du_dm),
            du_dphi: matrix_to_rows(&blocks.du_dphi),
            dv_dn: matrix_to_rows(&blocks.dv_dn),
            dv_dm: matrix_to_rows(&blocks.dv_dm),
            dv_dphi: matrix_to_rows(&blocks.dv_dphi),
        }
    }
}

/// Write a matrix as a bare CSV of 17-significant-digit reals.
pub fn write_matrix_csv(path: &Path, matrix: &[Vec<f64>]) -> FileResult<()> {
    let mut out = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| fmt_real(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> FileResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> FileResult<()> {
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|e| parse_err(path, e.to_string()))?;
    file.write_all(b"\n").map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn sample_market_file() -> MarketFile {
        MarketFile {
            x_types: vec!["a".into(), "b".into()],
            y_types: vec!["c".into()],
            n: vec![1.0, 2.0],
            m: vec![1.5],
            phi: vec![vec![0.25], vec![-0.5]],
        }
    }

    #[test]
    fn market_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("market.json");
        write_json(&path, &sample_market_file()).unwrap();
        let (market, phi) = read_market(&path).unwrap();
        assert_eq!(market.num_x(), 2);
        assert_eq!(phi.phi()[(1, 0)], -0.5);
    }

    #[test]
    fn matching_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matching.csv");
        let (market, _) = sample_market_file().into_parts().unwrap();
        let cell = 0.123_456_789_012_345_6;
        let matching = Matching::new(
            dmatrix![cell; 1.0 / 3.0],
            dvector![1.0 - cell, 2.0 - 1.0 / 3.0],
            dvector![1.5 - cell - 1.0 / 3.0],
        );
        write_matching_csv(&path, &matching, market.types()).unwrap();
        let back = read_matching_csv(&path, &market).unwrap();
        assert_eq!(back.mu, matching.mu);
        assert_eq!(back.mu_x0, matching.mu_x0);
        assert_eq!(back.mu_0y, matching.mu_0y);
    }

    #[test]
    fn matching_csv_rejects_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matching.csv");
        std::fs::write(&path, "x,y,mu\nzzz,c,0.5\n").unwrap();
        let (market, _) = sample_market_file().into_parts().unwrap();
        assert!(matches!(
            read_matching_csv(&path, &market),
            Err(FileError::Parse { .. })
        ));
    }

    #[test]
    fn draws_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.bin");
        let draws = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 / 7.0);
        write_draws(&path, &draws).unwrap();
        let back = read_draws(&path, 2).unwrap();
        assert_eq!(back, draws);
    }

    #[test]
    fn het_file_variants() {
        let dir = tempfile::tempdir().unwrap();
        let logit_path = dir.path().join("het.json");
        std::fs::write(&logit_path, r#"{"kind":"logit","scale":1.0}"#).unwrap();
        let spec = read_heterogeneity(&logit_path, Side::Men, 2, 3).unwrap();
        assert!(matches!(
            spec.kind,
            crate::heterogeneity::ShockKind::ExtremeValueLogit { scale } if scale == 1.0
        ));

        let sim_path = dir.path().join("sim.json");
        std::fs::write(
            &sim_path,
            r#"{"kind":"simulated","smoothing":0.05,"seed":42,"num_draws":100}"#,
        )
        .unwrap();
        let spec = read_heterogeneity(&sim_path, Side::Women, 3, 2).unwrap();
        assert_eq!(spec.num_choices(0), Some(2));

        let draws = DMatrix::from_fn(10, 3, |r, c| (r + c) as f64);
        write_draws(&dir.path().join("draws.bin"), &draws).unwrap();
        let file_path = dir.path().join("simfile.json");
        std::fs::write(
            &file_path,
            r#"{"kind":"simulated","draws_file":"draws.bin","smoothing":0.1}"#,
        )
        .unwrap();
        let spec = read_heterogeneity(&file_path, Side::Men, 2, 2).unwrap();
        assert_eq!(spec.num_choices(1), Some(2));
    }

    #[test]
    fn equilibrium_file_round_trip() {
        let result = EquilibriumResult {
            utilities: SplitUtilities {
                u: dmatrix![0.1, 0.2; 0.3, 0.4],
                v: dmatrix![-0.1, 0.0; 0.1, 0.2],
            },
            matching: Matching::new(
                dmatrix![0.2, 0.1; 0.1, 0.3],
                dvector![0.7, 0.6],
                dvector![0.7, 0.6],
            ),
            welfare: WelfareVector {
                u: dvector![1.0, 1.1],
                v: dvector![0.9, 0.8],
            },
            diagnostics: Diagnostics {
                iterations: 5,
                residual: 1e-12,
                solver: SolverKind::Newton,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eq.json");
        write_json(&path, &EquilibriumFile::from_result(&result)).unwrap();
        let file: EquilibriumFile = read_json(&path).unwrap();
        let back = file.into_result().unwrap();
        assert_eq!(back.utilities.u, result.utilities.u);
        assert_eq!(back.matching.mu, result.matching.mu);
        assert_eq!(back.diagnostics.iterations, 5);
    }
}
