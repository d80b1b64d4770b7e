use serde::{Deserialize, Serialize};

/// Row-major `rows × cols` matrix. For sensor windows rows are timesteps
/// and columns are channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        let data = rows.iter().flatten().copied().collect();
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.cols.max(1)).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        Matrix::from_rows(&rows).ok_or_else(|| "ragged matrix rows".to_string())
    }
}

/// Activation volume indexed `(time, space, channel)`.
///
/// 1D branches use `space = 1`; 2D branches treat the sensor channel axis
/// as the spatial axis with a single input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub t: usize,
    pub s: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(t: usize, s: usize, c: usize) -> Self {
        Self {
            t,
            s,
            c,
            data: vec![0.0; t * s * c],
        }
    }

    #[inline]
    pub fn idx(&self, ti: usize, si: usize, ci: usize) -> usize {
        (ti * self.s + si) * self.c + ci
    }

    #[inline]
    pub fn at(&self, ti: usize, si: usize, ci: usize) -> f64 {
        self.data[self.idx(ti, si, ci)]
    }

    /// `(T, 1, C)` view of a window for a 1D branch.
    pub fn from_window_1d(m: &Matrix) -> Self {
        Self {
            t: m.rows(),
            s: 1,
            c: m.cols(),
            data: m.data().to_vec(),
        }
    }

    /// `(T, C, 1)` view of a window for a 2D branch.
    pub fn from_window_2d(m: &Matrix) -> Self {
        Self {
            t: m.rows(),
            s: m.cols(),
            c: 1,
            data: m.data().to_vec(),
        }
    }
}

/// Conv kernel laid out `[kt][ks][cin][cout]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<Vec<Vec<f64>>>>", try_from = "Vec<Vec<Vec<Vec<f64>>>>")]
pub struct ConvWeights {
    pub kt: usize,
    pub ks: usize,
    pub cin: usize,
    pub cout: usize,
    pub data: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(kt: usize, ks: usize, cin: usize, cout: usize) -> Self {
        Self {
            kt,
            ks,
            cin,
            cout,
            data: vec![0.0; kt * ks * cin * cout],
        }
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, ci: usize, co: usize) -> usize {
        ((a * self.ks + b) * self.cin + ci) * self.cout + co
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.kt, self.ks, self.cin, self.cout]
    }
}

impl From<ConvWeights> for Vec<Vec<Vec<Vec<f64>>>> {
    fn from(w: ConvWeights) -> Self {
        (0..w.kt)
            .map(|a| {
                (0..w.ks)
                    .map(|b| {
                        (0..w.cin)
                            .map(|ci| (0..w.cout).map(|co| w.data[w.idx(a, b, ci, co)]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<Vec<Vec<f64>>>>> for ConvWeights {
    type Error = String;
    fn try_from(v: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self, String> {
        let kt = v.len();
        let ks = v.first().map_or(0, Vec::len);
        let cin = v.first().and_then(|x| x.first()).map_or(0, Vec::len);
        let cout = v
            .first()
            .and_then(|x| x.first())
            .and_then(|x| x.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(kt * ks * cin * cout);
        for a in &v {
            if a.len() != ks {
                return Err("ragged conv kernel".into());
            }
            for b in a {
                if b.len() != cin {
                    return Err("ragged conv kernel".into());
                }
                for ci in b {
                    if ci.len() != cout {
                        return Err("ragged conv kernel".into());
                    }
                    data.extend_from_slice(ci);
                }
            }
        }
        Ok(Self {
            kt,
            ks,
            cin,
            cout,
            data,
        })
    }
}

/// Dense weights laid out `[in][out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct DenseWeights {
    pub inputs: usize,
    pub outputs: usize,
    pub data: Vec<f64>,
}

impl DenseWeights {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            data: vec![0.0; inputs * outputs],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, o: usize) -> f64 {
        self.data[i * self.outputs + o]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let m = Matrix::from_rows(rows)?;
        Some(Self {
            inputs: m.rows(),
            outputs: m.cols(),
            data: m.data().to_vec(),
        })
    }
}

impl From<DenseWeights> for Vec<Vec<f64>> {
    fn from(w: DenseWeights) -> Self {
        w.data.chunks(w.outputs.max(1)).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseWeights {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        DenseWeights::from_rows(&rows).ok_or_else(|| "ragged dense weights".to_string())
    }
}
