//! Curve tables on disk: lossless writes, located parse errors.
//!
//! Writes a table, reads it back bit for bit, then shows the row/column
//! positions the reader reports for malformed files.

use funcal::io::{read_curves, write_curves, CurveTable};
use ndarray::Array2;

fn main() -> Result<(), funcal::Error> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("curves.csv");

    let t: Vec<f64> = (1..=4).map(|k| k as f64 / 4.0).collect();
    let values = Array2::from_shape_fn((3, 4), |(i, l)| {
        (i as f64 + 1.0) * 0.1 + (l as f64) * 1e-13 + 1.0 / 3.0
    });
    let ids = vec!["1".to_string(), "2".to_string(), "3".to_string()];
    let table = CurveTable::new(t, ids, values)?;

    write_curves(&table, &path)?;
    println!("written:\n{}", std::fs::read_to_string(&path).expect("readable file"));

    let back = read_curves(&path)?;
    println!(
        "read back {} rows x {} points, identical: {}",
        back.num_rows(),
        back.t().len(),
        back == table
    );

    // a ragged row and a non-numeric cell produce located errors
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,0.5,1.0\n1,1.0,2.0\n2,3.0\n").expect("writable file");
    println!("\nragged row: {}", read_curves(&bad).unwrap_err());

    std::fs::write(&bad, "id,0.5,1.0\n1,1.0,two\n").expect("writable file");
    println!("bad cell:   {}", read_curves(&bad).unwrap_err());
    Ok(())
}
