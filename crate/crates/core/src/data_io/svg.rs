use std::fmt::Write;

use crate::error::{Error, Result};
use crate::ink::InkSequence;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One `<polyline>` per stroke, colored by stroke index, inside a viewBox
/// padded by 5% of the bounding box.
pub fn render_svg(seq: &InkSequence) -> Result<String> {
    let (min_x, min_y, max_x, max_y) = seq.bounding_box().ok_or(Error::EmptyInk)?;
    let extent = (max_x - min_x).max(max_y - min_y);
    let extent = if extent > 0.0 { extent } else { 1.0 };
    let (w, h) = ((max_x - min_x).max(0.02 * extent), (max_y - min_y).max(0.02 * extent));
    let (mx, my) = (0.05 * w, 0.05 * h);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="{} {} {} {}">"#,
        min_x - mx,
        min_y - my,
        w + 2.0 * mx,
        h + 2.0 * my
    )
    .expect("writing to a String");
    for (i, stroke) in seq.strokes().enumerate() {
        let pts: Vec<String> = stroke.iter().map(|p| format!("{},{}", p.x, p.y)).collect();
        writeln!(
            out,
            r#"  <polyline points="{}" fill="none" stroke="{}" stroke-width="{}" stroke-linecap="round" stroke-linejoin="round"/>"#,
            pts.join(" "),
            PALETTE[i % PALETTE.len()],
            0.015 * extent
        )
        .expect("writing to a String");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
