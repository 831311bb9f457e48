use std::fmt::Write as _;

use floorplan_core::geometry::FloorPlan;
use floorplan_core::graph::LabelVocabulary;
use floorplan_core::raster::NormFrame;

const COLORS: [&str; 12] = [
    "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6",
    "#bcf60c", "#fabebe", "#008080", "#e6beff",
];

/// Fill colour of a room type, stable per vocabulary position.
pub fn room_color(vocab: &LabelVocabulary, room_type: &str) -> &'static str {
    vocab
        .room_type_index(room_type)
        .map_or("#cccccc", |i| COLORS[i % COLORS.len()])
}

/// Rooms filled by type, largest first so small rooms stay visible, with
/// structural walls drawn in black on top.
pub fn overlay(plan: &FloorPlan, vocab: &LabelVocabulary, width: usize, height: usize) -> String {
    let frame = NormFrame::new(width, height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );

    let mut rooms: Vec<_> = plan.rooms.iter().collect();
    rooms.sort_by(|a, b| {
        b.polygon
            .area()
            .total_cmp(&a.polygon.area())
            .then(a.id.cmp(&b.id))
    });
    for room in rooms {
        let points: Vec<String> = room
            .polygon
            .ring()
            .iter()
            .map(|p| {
                let (x, y) = frame.to_pixel(p.x, p.y);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="{}" fill-opacity="0.75" stroke="#555" stroke-width="0.5"><title>{} {}</title></polygon>"##,
            points.join(" "),
            room_color(vocab, &room.room_type),
            room.id,
            room.room_type
        );
    }
    for seg in &plan.walls.segments {
        let (x0, y0) = frame.to_pixel(seg.p0[0], seg.p0[1]);
        let (x1, y1) = frame.to_pixel(seg.p1[0], seg.p1[1]);
        let _ = writeln!(
            out,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="black" stroke-width="2" stroke-linecap="round"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}
