//! Static top-down renders of value maps with trajectory overlays.

use image::{Rgb, RgbImage};

use crate::bev::ValueMap;
use crate::orchestrator::Mode;

pub const COARSE_COLOR: [u8; 3] = [40, 110, 255];

/// Line color per planning mode: green, yellow and red.
pub fn mode_color(mode: Mode) -> [u8; 3] {
    match mode {
        Mode::AstarOnly => [0, 170, 0],
        Mode::VltCode => [235, 200, 0],
        Mode::Full => [220, 20, 20],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<[f64; 2]>,
}

impl Overlay {
    pub fn new(label: impl Into<String>, color: [u8; 3], points: &[[f64; 2]]) -> Self {
        Self {
            label: label.into(),
            color,
            points: points.to_vec(),
        }
    }

    pub fn mode(mode: Mode, points: &[[f64; 2]]) -> Self {
        Self::new(mode.label(), mode_color(mode), points)
    }

    pub fn coarse(points: &[[f64; 2]]) -> Self {
        Self::new("coarse", COARSE_COLOR, points)
    }
}

const FONT_SCALE: u32 = 2;
const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;
const LEGEND_ROW: u32 = GLYPH_H * FONT_SCALE + 6;

fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
        '*' => [0b000, 0b101, 0b010, 0b101, 0b000],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '/' => [0b001, 0b001, 0b010, 0b100, 0b100],
        '?' => [0b110, 0b001, 0b010, 0b000, 0b010],
        ' ' => [0; 5],
        _ => glyph('?'),
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str, color: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x0 + i as u32 * (GLYPH_W + 1) * FONT_SCALE;
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - c) & 1 == 1 {
                    for dy in 0..FONT_SCALE {
                        for dx in 0..FONT_SCALE {
                            put(
                                img,
                                (gx + c * FONT_SCALE + dx) as i64,
                                (y0 + r as u32 * FONT_SCALE + dy) as i64,
                                color,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            put(img, x + ox, y + oy, color);
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn cost_color(vm: &ValueMap, cost: f64) -> [u8; 3] {
    let l = vm.levels;
    if cost >= l.blocked {
        return [45, 45, 50];
    }
    if cost == l.drivable {
        return [205, 205, 205];
    }
    if cost == l.corridor {
        return [150, 215, 235];
    }
    // Heat ramp on a log scale between the corridor and blocked levels.
    let lo = l.corridor.max(f64::MIN_POSITIVE).ln();
    let hi = l.blocked.ln();
    let t = ((cost.max(f64::MIN_POSITIVE).ln() - lo) / (hi - lo)).clamp(0.0, 1.0);
    [
        (255.0 * t) as u8,
        (200.0 * (1.0 - t)) as u8,
        (255.0 * (1.0 - t)) as u8,
    ]
}

/// Pixels per cell so the longer grid side spans roughly 800 px.
fn scale_for(rows: usize, cols: usize) -> u32 {
    (800 / rows.max(cols).max(1)).clamp(1, 8) as u32
}

/// Value-map heat image (north up) with overlays drawn in order and a
/// legend strip along the top.
pub fn render_map(vm: &ValueMap, overlays: &[Overlay]) -> RgbImage {
    let spec = vm.spec;
    let s = scale_for(spec.rows, spec.cols);
    let legend_h = LEGEND_ROW * overlays.len() as u32 + if overlays.is_empty() { 0 } else { 4 };
    let width = (spec.cols as u32 * s).max(160);
    let height = spec.rows as u32 * s + legend_h;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let color = cost_color(vm, vm.cost[r * spec.cols + c]);
            let py = legend_h + (spec.rows - 1 - r) as u32 * s;
            for dy in 0..s {
                for dx in 0..s {
                    img.put_pixel(c as u32 * s + dx, py + dy, Rgb(color));
                }
            }
        }
    }

    let to_px = |p: [f64; 2]| -> (i64, i64) {
        let gx = (p[0] - spec.origin[0]) / spec.resolution * s as f64;
        let gy = (p[1] - spec.origin[1]) / spec.resolution * s as f64;
        (
            gx.floor() as i64,
            legend_h as i64 + (spec.rows as f64 * s as f64 - gy).floor() as i64,
        )
    };
    for o in overlays {
        let px: Vec<(i64, i64)> = o.points.iter().map(|&p| to_px(p)).collect();
        for w in px.windows(2) {
            draw_line(&mut img, w[0], w[1], o.color);
        }
        if let [only] = px[..] {
            draw_line(&mut img, only, only, o.color);
        }
    }

    for (i, o) in overlays.iter().enumerate() {
        let y = 3 + i as u32 * LEGEND_ROW;
        for dy in 0..GLYPH_H * FONT_SCALE {
            for dx in 0..16 {
                put(&mut img, 4 + dx, (y + dy) as i64, o.color);
            }
        }
        draw_text(&mut img, 26, y, &o.label, [0, 0, 0]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{Cell, CostLevels, GridSpec};

    fn vm() -> ValueMap {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 10, 20).unwrap();
        let mut vm = ValueMap::uniform(spec, CostLevels::default(), 10.0);
        vm.set(Cell::new(0, 0), 1000.0);
        vm.set(Cell::new(9, 19), 1.0);
        vm
    }

    #[test]
    fn map_only_has_no_legend() {
        let img = render_map(&vm(), &[]);
        // 8 px per cell.
        assert_eq!((img.width(), img.height()), (160, 80));
        // Row 0 is drawn at the bottom.
        assert_eq!(img.get_pixel(0, 79).0, [45, 45, 50]);
        assert_eq!(img.get_pixel(159, 0).0, [150, 215, 235]);
    }

    #[test]
    fn overlays_use_their_colors() {
        let pts = [[0.5, 5.0], [19.5, 5.0]];
        let img = render_map(
            &vm(),
            &[
                Overlay::mode(Mode::Full, &pts),
                Overlay::mode(Mode::AstarOnly, &[]),
            ],
        );
        let legend = 2 * LEGEND_ROW + 4;
        assert_eq!(img.height(), 80 + legend);
        let red = mode_color(Mode::Full);
        let count = img.pixels().filter(|p| p.0 == red).count();
        assert!(count > 400, "line plus swatch, got {count}");
        assert!(img.pixels().any(|p| p.0 == mode_color(Mode::AstarOnly)));
        assert!(img.pixels().any(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn glyphs_cover_labels() {
        for label in ["A*", "VLT-Code", "OpenNav", "coarse"] {
            assert!(label.chars().all(|c| glyph(c) != glyph('?') || c == '?'));
        }
    }
}
