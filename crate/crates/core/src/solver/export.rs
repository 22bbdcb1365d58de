use std::io::{self, Write};

use super::SolutionField;

impl SolutionField {
    /// Writes `k,t,cell,u` rows, one per cell and time level.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "k,t,cell,u")?;
        for (k, level) in self.levels().enumerate() {
            let t = self.time_grid().time(k);
            for (i, v) in level.iter().enumerate() {
                writeln!(out, "{k},{t},{i},{v}")?;
            }
        }
        Ok(())
    }

    /// Writes `k,t,inflow,outflow,mass` rows; row `k` covers the step ending at `t_k`.
    pub fn write_flux_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "k,t,inflow,outflow,mass")?;
        writeln!(out, "0,0,0,0,{}", self.mass(0))?;
        for (k, r) in self.flux_log().iter().enumerate() {
            let t = self.time_grid().time(k + 1);
            writeln!(out, "{},{t},{},{},{}", k + 1, r.inflow_total, r.outflow_total, r.mass)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::grid::{BoundaryTag, Grid, TimeGrid};
    use crate::solver::{solve_p1, MobilityFunction, ParamFieldP1, SolverOptions};

    #[test]
    fn csv_shapes() {
        let g = Grid::interval(3, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap();
        let p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 0.5);
        let tg = TimeGrid::new(0.1, 2).unwrap();
        let s = solve_p1(&p, &g, &tg, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        s.write_trajectory_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 3);
        assert!(text.starts_with("k,t,cell,u\n0,0,0,0.5\n"));
        let mut buf = Vec::new();
        s.write_flux_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
