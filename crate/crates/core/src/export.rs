//! CSV writers for trajectories and reports.

use std::io::Write;

use crate::integrate::Trajectory;

/// Header of the trajectory CSV.
pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "x1", "x2", "u1", "u2", "xs1", "xs2", "y"];

/// Format with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keep the sign of negative zero out of the files
        return "0".to_string();
    }
    format!("{v:.16e}")
}

/// Write `t,x1,x2,u1,u2,xs1,xs2,y` rows; `y` is recomputed from `x` and `x*`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for s in &traj.samples {
        let row = [s.t, s.x[0], s.x[1], s.u[0], s.u[1], s.x_star[0], s.x_star[1], s.y()];
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trajectory CSV back into rows of 8 numbers.
pub fn read_trajectory_csv<R: std::io::Read>(input: R) -> Result<Vec<[f64; 8]>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = [0.0; 8];
        for (dst, field) in row.iter_mut().zip(rec.iter()) {
            *dst = field.parse().map_err(|e| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{e}")))
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}
