//! Minimal raster rendering: colour-mapped heatmaps and line charts.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use ndarray::Array2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Colormap {
    /// Blue through white to red, for signed velocities.
    Diverging,
    /// Dark purple through teal to yellow, for non-negative spreads.
    Sequential,
}

impl Colormap {
    pub fn name(self) -> &'static str {
        match self {
            Colormap::Diverging => "blue-white-red",
            Colormap::Sequential => "purple-teal-yellow",
        }
    }

    fn stops(self) -> &'static [[f64; 3]] {
        match self {
            Colormap::Diverging => &[
                [33.0, 102.0, 172.0],
                [146.0, 197.0, 222.0],
                [247.0, 247.0, 247.0],
                [244.0, 165.0, 130.0],
                [178.0, 24.0, 43.0],
            ],
            Colormap::Sequential => &[
                [68.0, 1.0, 84.0],
                [59.0, 82.0, 139.0],
                [33.0, 145.0, 140.0],
                [94.0, 201.0, 98.0],
                [253.0, 231.0, 37.0],
            ],
        }
    }

    /// Colour for `t` in [0, 1]; values outside are clamped.
    pub fn at(self, t: f64) -> Rgb<u8> {
        let stops = self.stops();
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        let x = t * (stops.len() - 1) as f64;
        let i = (x.floor() as usize).min(stops.len() - 2);
        let f = x - i as f64;
        let c = |k: usize| (stops[i][k] + f * (stops[i + 1][k] - stops[i][k])).round() as u8;
        Rgb([c(0), c(1), c(2)])
    }
}

/// Heatmap of a (time, gate) array: time runs left to right, gates bottom
/// to top, each sample drawn as a `scale × scale` block.
pub fn heatmap(values: &Array2<f64>, lo: f64, hi: f64, cmap: Colormap, scale: u32) -> RgbImage {
    let (t_len, g_len) = values.dim();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(t_len as u32 * scale, g_len as u32 * scale);
    for ((t, g), &v) in values.indexed_iter() {
        let colour = cmap.at((v - lo) / span);
        let y0 = (g_len - 1 - g) as u32 * scale;
        for dy in 0..scale {
            for dx in 0..scale {
                img.put_pixel(t as u32 * scale + dx, y0 + dy, colour);
            }
        }
    }
    img
}

pub const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

/// A polyline in data coordinates.
#[derive(Clone, Debug)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub colour: Rgb<u8>,
    /// Drawn with gaps when true, to tell paired curves apart.
    pub dashed: bool,
}

/// Axis-framed line chart; bounds cover every finite point of every series.
pub fn line_chart(series: &[Series], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 24.0f32;
    let (w, h) = (width as f32 - 2.0 * margin, height as f32 - 2.0 * margin);
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(margin as i32, margin as i32).of_size(w as u32, h as u32),
        Rgb([0, 0, 0]),
    );
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return img;
    }
    let (sx, sy) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
    let map = |x: f64, y: f64| {
        (
            margin + ((x - x0) / sx) as f32 * w,
            margin + h - ((y - y0) / sy) as f32 * h,
        )
    };
    for s in series {
        let pts: Vec<(f32, f32)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| map(x, y))
            .collect();
        for (k, seg) in pts.windows(2).enumerate() {
            if s.dashed && k % 2 == 1 {
                continue;
            }
            draw_line_segment_mut(&mut img, seg[0], seg[1], s.colour);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints_and_clamping() {
        assert_eq!(Colormap::Diverging.at(0.5), Rgb([247, 247, 247]));
        assert_eq!(Colormap::Sequential.at(-3.0), Colormap::Sequential.at(0.0));
        assert_eq!(Colormap::Sequential.at(7.0), Rgb([253, 231, 37]));
    }

    #[test]
    fn heatmap_orientation() {
        let mut a = Array2::zeros((3, 2));
        a[[0, 1]] = 1.0;
        let img = heatmap(&a, 0.0, 1.0, Colormap::Sequential, 2);
        assert_eq!(img.dimensions(), (6, 4));
        // gate 1 of time 0 is the top-left block
        assert_eq!(*img.get_pixel(0, 0), Colormap::Sequential.at(1.0));
        assert_eq!(*img.get_pixel(0, 3), Colormap::Sequential.at(0.0));
    }

    #[test]
    fn chart_draws_series() {
        let s = Series {
            points: vec![(0.0, 0.0), (1.0, 1.0)],
            colour: PALETTE[3],
            dashed: false,
        };
        let img = line_chart(&[s], 100, 80);
        assert!(img.pixels().any(|p| *p == PALETTE[3]));
    }
}
