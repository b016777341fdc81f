//! Extended XYZ trajectory output.

use std::io::Write;

use super::state::SystemState;
use crate::error::Result;

pub const ELEMENT: &str = "Ar";

/// Writes one frame: atom count, a comment line carrying the lattice and step metadata, then
/// `element x y z` per atom.
pub fn write_frame<W: Write>(out: &mut W, state: &SystemState, energy: f64) -> Result<()> {
    let l = state.box_length;
    writeln!(out, "{}", state.n_atoms())?;
    writeln!(
        out,
        "Lattice=\"{l} 0 0 0 {l} 0 0 0 {l}\" Properties=species:S:1:pos:R:3 pbc=\"T T T\" step={} energy={:.10e} temperature={:.10e}",
        state.step_count,
        energy,
        state.instantaneous_temperature()
    )?;
    for p in &state.positions {
        writeln!(out, "{ELEMENT} {:.10} {:.10} {:.10}", p[0], p[1], p[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let s = SystemState::at_rest(vec![[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]], 4.0).unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &s, -1.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "2");
        assert!(lines[1].contains("step=0"));
        assert!(lines[1].starts_with("Lattice=\"4 0 0 0 4 0 0 0 4\""));
        assert_eq!(lines[2], "Ar 1.0000000000 2.0000000000 3.0000000000");
    }
}
